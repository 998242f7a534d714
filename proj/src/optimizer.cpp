#include "masslearn/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace masslearn {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd_momentum") return OptimizerKind::sgd_momentum;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected adam or sgd_momentum)");
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd_momentum";
}

OptimizerState OptimizerState::create(OptimizerKind kind, std::span<Tensor* const> params) {
  OptimizerState state;
  state.kind = kind;
  for (const Tensor* p : params) {
    state.first.push_back(Tensor::zeros(p->shape()));
    if (kind == OptimizerKind::adam) state.second.push_back(Tensor::zeros(p->shape()));
  }
  return state;
}

void optimizer_step(OptimizerState& state, std::span<Tensor* const> params,
                    std::span<const Tensor> grads, double lr) {
  if (params.size() != grads.size() || params.size() != state.first.size()) {
    throw std::invalid_argument("optimizer_step: parameter/gradient count mismatch");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p]->shape() != grads[p].shape() || params[p]->shape() != state.first[p].shape()) {
      throw std::invalid_argument("optimizer_step: shape mismatch for parameter " +
                                  std::to_string(p));
    }
  }
  ++state.step;
  if (state.kind == OptimizerKind::adam) {
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(kAdamBeta1, t);
    const double c2 = 1.0 - std::pow(kAdamBeta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& value = *params[p];
      Tensor& m = state.first[p];
      Tensor& v = state.second[p];
      const Tensor& g = grads[p];
      for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
        v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
        value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEpsilon);
      }
    }
  } else {
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& value = *params[p];
      Tensor& vel = state.first[p];
      const Tensor& g = grads[p];
      for (std::size_t i = 0; i < value.size(); ++i) {
        vel[i] = kMomentum * vel[i] + g[i];
        value[i] -= lr * vel[i];
      }
    }
  }
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Tensor& g : grads) {
      for (double& v : g.data()) v *= factor;
    }
  }
  return norm;
}

}  // namespace masslearn
