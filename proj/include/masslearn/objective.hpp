#pragma once

// The empirical MASS loss
//   (1/N) sum_i [-log q(y_i|z_i) - beta log q(z_i) - beta log J_f(x_i)],
// z_i = f(x_i), and the softmax cross-entropy baseline.

#include "masslearn/diffcore.hpp"
#include "masslearn/network.hpp"
#include "masslearn/optimizer.hpp"
#include "masslearn/variational.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace masslearn {

enum class Method { mass, softmaxce };

Method parse_method(const std::string& name);
std::string to_string(Method method);

struct TrainConfig {
  Method method = Method::mass;
  double beta = 1e-3;
  double lr = 5e-4;
  double variational_lr = 2.5e-5;
  std::size_t batch_size = 256;
  std::size_t steps = 100000;
  OptimizerKind optimizer = OptimizerKind::adam;
  bool subsample_jacobian = true;
  double jitter = kDefaultJitter;
  std::uint64_t seed = 0;
  std::filesystem::path curve_output_path;
  std::size_t eval_interval = 1000;
  double clip_norm = 100.0;
  double weight_decay = 0.0;
  // Training rows used for the loss terms written to the curve.
  std::size_t curve_samples = 512;
  // SoftmaxCE only: MLE steps for the q fitted at each curve row, and for
  // the q stored in the final checkpoint.
  std::size_t curve_mle_steps = 200;
  bool fit_q = true;
  std::size_t mle_steps = 1000;
  bool normalize = false;

  // Throws std::invalid_argument.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct MixtureConfig {
  std::size_t components = 10;
  double mean_scale = 1.0;

  friend bool operator==(const MixtureConfig&, const MixtureConfig&) = default;
};

struct LossBreakdown {
  double cond_entropy_term = 0.0;  // mean -log q(y|z)
  double entropy_term = 0.0;       // mean -log q(z)
  double jacobian_term = 0.0;      // mean log J_f, over the Jacobian rows
  double total = 0.0;
};

struct MassOptions {
  double beta = 1e-3;
  bool subsample_jacobian = true;
  double jitter = kDefaultJitter;
  // Evaluate log J even when beta is zero (reporting only).
  bool force_jacobian = false;
};

MassOptions mass_options(const TrainConfig& cfg);

// Number of leading batch rows entering the Jacobian term.
std::size_t jacobian_rows(std::size_t batch, std::size_t r, bool subsample);

struct MassTerms {
  ad::Var total;
  ad::Var cond_entropy;
  ad::Var entropy;
  ad::Var log_jacobian;  // a zero constant when not evaluated
  ForwardTrace trace;
  std::vector<ad::Var> jacobians;
};

// Builds the loss on the graph of `x`. DegenerateJacobian carries the batch
// row.
MassTerms mass_loss_graph(const MlpVars& net_vars, const MlpParams& net,
                          const MixtureVars& q_vars, const ClassConditionalMixture& q, ad::Var x,
                          std::span<const int> labels, const MassOptions& options, Mode mode,
                          const DropoutMask* mask);

LossBreakdown breakdown(const MassTerms& terms);

struct MassStep {
  LossBreakdown loss;
  std::vector<Tensor> theta_grads;  // MlpParams::trainable() order
  std::vector<Tensor> phi_grads;    // ClassConditionalMixture::trainable() order
  std::vector<Tensor> batch_mean;
  std::vector<Tensor> batch_var;
  std::vector<Tensor> jacobians;    // values of the evaluated Jacobians
};

MassStep mass_minibatch_loss(const MlpParams& net, const ClassConditionalMixture& q,
                             const Tensor& x, std::span<const int> labels,
                             const MassOptions& options, const DropoutMask* mask = nullptr);

// mean_i [logsumexp(logits_i) - logits_i[y_i]]
ad::Var softmaxce_graph(ad::Var logits, std::span<const int> labels);
double softmaxce_loss(const Tensor& logits, std::span<const int> labels);

struct SoftmaxStep {
  double loss = 0.0;
  std::vector<Tensor> theta_grads;
  std::vector<Tensor> batch_mean;
  std::vector<Tensor> batch_var;
};

SoftmaxStep softmaxce_minibatch_loss(const MlpParams& net, const Tensor& x,
                                     std::span<const int> labels,
                                     const DropoutMask* mask = nullptr);

}  // namespace masslearn
