#pragma once

// Representation network f: R^d -> R^r. Hidden layers run
// affine -> (batchnorm) -> elu -> (dropout); the last layer is affine.

#include "masslearn/diffcore.hpp"
#include "masslearn/rng.hpp"
#include "masslearn/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace masslearn {

enum class Nonlinearity { elu };
enum class Mode { train, eval };

struct MlpConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden_dims{32, 32};
  std::size_t output_dim = 2;
  Nonlinearity nonlinearity = Nonlinearity::elu;
  double dropout_rate = 0.0;
  bool use_batchnorm = false;

  // Throws std::invalid_argument. `contracting` additionally requires
  // output_dim <= input_dim, which Jacobian determinants need.
  void validate(bool contracting = true) const;

  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

// 3072 -> 400 -> 200 -> 15 with batchnorm.
MlpConfig small_mlp_config(std::size_t input_dim = 3072, std::size_t output_dim = 15);

struct DenseLayer {
  Tensor weight;  // out x in
  Tensor bias;    // out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct BatchNormLayer {
  Tensor scale;
  Tensor shift;
  Tensor running_mean;
  Tensor running_var;

  friend bool operator==(const BatchNormLayer&, const BatchNormLayer&) = default;
};

struct MlpParams {
  MlpConfig config;
  std::vector<DenseLayer> layers;       // hidden layers, then the output layer
  std::vector<BatchNormLayer> batchnorm;  // one per hidden layer when enabled

  // Trainable tensors in a fixed order: per layer weight, bias, then per
  // batchnorm layer scale, shift.
  std::vector<Tensor*> trainable();
  std::vector<const Tensor*> trainable() const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

// Per hidden layer, a batch x width matrix of 0 or 1/(1 - rate).
struct DropoutMask {
  std::vector<Tensor> keep;
};

DropoutMask sample_dropout_mask(const MlpConfig& config, std::size_t batch, Rng& rng);

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kDefaultJitter = 1e-12;
inline constexpr double kRetryJitter = 1e-8;

// Glorot-uniform weights, zero biases, unit batchnorm scale.
MlpParams mlp_init(const MlpConfig& config, std::uint64_t seed);

// ---- tape-level API -------------------------------------------------------

struct MlpVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
  std::vector<ad::Var> bn_scale;
  std::vector<ad::Var> bn_shift;

  // Same order as MlpParams::trainable().
  std::vector<ad::Var> trainable() const;
};

// Puts the parameters on the tape, as leaves or constants.
MlpVars bind_params(ad::Graph& graph, const MlpParams& params, bool trainable = true);

struct ForwardTrace {
  ad::Var output;                         // batch x r
  std::vector<ad::Var> pre_activations;   // elu inputs, batch x width
  std::vector<ad::Var> bn_gain;           // scale / sqrt(var + eps), per hidden layer
  std::vector<Tensor> batch_mean;         // train-mode batch statistics
  std::vector<Tensor> batch_var;
  const DropoutMask* mask = nullptr;
};

// Batchnorm uses batch statistics in train mode and running statistics in
// eval mode. The mask, when given, is applied regardless of mode.
ForwardTrace forward(const MlpVars& vars, const MlpParams& params, ad::Var x, Mode mode,
                     const DropoutMask* mask);

// r x d Jacobian of output row `row` with respect to input row `row`, built
// on the tape so it can be differentiated with respect to the parameters.
// Batchnorm statistics and the dropout mask are held constant in x.
ad::Var jacobian_node(const ForwardTrace& trace, const MlpVars& vars, std::size_t row);

struct DegenerateJacobian : std::runtime_error {
  DegenerateJacobian(std::size_t index)
      : std::runtime_error("degenerate Jacobian at sample " + std::to_string(index)),
        sample_index(index) {}
  std::size_t sample_index;
};

// 0.5 * log det(D D^T + jitter I). On a Cholesky failure retries once with
// kRetryJitter, then throws DegenerateJacobian.
ad::Var log_jacobian_node(ad::Var jacobian, double jitter, std::size_t sample_index);

// Exponential moving average of train-mode batch statistics.
void update_running_stats(MlpParams& params, std::span<const Tensor> batch_mean,
                          std::span<const Tensor> batch_var, std::size_t batch_size);
void update_running_stats(MlpParams& params, const ForwardTrace& trace);

// Both sides of ||D||_F^{2r} >= r^r det(D D^T) in log space:
// {r log tr(D D^T), r log r + log det(D D^T)}. A singular D D^T gives -inf
// on the right.
struct AmGmSides {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds(double relative_slack) const;
};
AmGmSides amgm_sides(const Tensor& jacobian);

// ---- value-level API ------------------------------------------------------

// Requires a mask iff dropout_rate > 0 and mode is train.
Tensor mlp_forward(const MlpParams& params, const Tensor& x, Mode mode,
                   const DropoutMask* mask = nullptr);

// Rows are gradients of each output coordinate w.r.t. x (1 x d), one reverse
// pass per output over a shared tape. Uses running batchnorm statistics.
Tensor jacobian_matrix(const MlpParams& params, const Tensor& x,
                       const DropoutMask* mask = nullptr);

double log_jacobian_determinant(const MlpParams& params, const Tensor& x,
                                double jitter = kDefaultJitter, std::size_t sample_index = 0);

}  // namespace masslearn
