#pragma once

#include "masslearn/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace masslearn {

enum class OptimizerKind { adam, sgd_momentum };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;
inline constexpr double kMomentum = 0.9;

// Adam keeps first/second moments; momentum keeps its velocity in `first`.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  std::size_t step = 0;
  std::vector<Tensor> first;
  std::vector<Tensor> second;

  static OptimizerState create(OptimizerKind kind, std::span<Tensor* const> params);
};

// Adam: bias-corrected update. Momentum: v <- 0.9 v + g, p <- p - lr v.
void optimizer_step(OptimizerState& state, std::span<Tensor* const> params,
                    std::span<const Tensor> grads, double lr);

// Rescales `grads` in place so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

}  // namespace masslearn
