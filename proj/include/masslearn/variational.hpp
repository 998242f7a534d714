#pragma once

// Class-conditional Gaussian mixture q(z|y), its marginal q(z) under the
// class priors, and the Bayes-rule posterior q(y|z).

#include "masslearn/diffcore.hpp"
#include "masslearn/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace masslearn {

struct GaussianComponent {
  Tensor mean;       // r
  Tensor chol_raw;   // r x r; lower triangle used, softplus on the diagonal

  friend bool operator==(const GaussianComponent&, const GaussianComponent&) = default;
};

struct ClassConditionalMixture {
  std::size_t classes = 0;
  std::size_t components = 0;
  std::size_t dim = 0;
  std::vector<std::vector<GaussianComponent>> per_class;  // [class][component]
  std::vector<Tensor> weight_logits;                      // [class], length components
  std::vector<double> class_priors;

  // Order: per class, per component mean then chol_raw; then the logits.
  std::vector<Tensor*> trainable();
  std::vector<const Tensor*> trainable() const;

  // Cholesky factor of the covariance after the softplus transform.
  Tensor cholesky_factor(std::size_t y, std::size_t k) const;
  Tensor covariance(std::size_t y, std::size_t k) const;
  std::vector<double> weights(std::size_t y) const;

  friend bool operator==(const ClassConditionalMixture&, const ClassConditionalMixture&) = default;
};

// Means ~ N(0, mean_scale^2 I), identity Cholesky factors, zero logits,
// uniform priors.
ClassConditionalMixture mixture_init(std::size_t classes, std::size_t components, std::size_t dim,
                                     std::uint64_t seed, double mean_scale = 1.0);

double mixture_log_density(const ClassConditionalMixture& m, std::size_t y,
                           std::span<const double> z);
double log_marginal(const ClassConditionalMixture& m, std::span<const double> z);
std::vector<double> class_posterior(const ClassConditionalMixture& m, std::span<const double> z);

// Batched evaluation with per-component factorisations computed once.
class MixtureEvaluator {
 public:
  explicit MixtureEvaluator(const ClassConditionalMixture& m);
  // log q(z|y) for every class.
  std::vector<double> class_log_densities(std::span<const double> z) const;
  double log_density(std::size_t y, std::span<const double> z) const;
  double log_marginal(std::span<const double> z) const;
  std::vector<double> posterior(std::span<const double> z) const;

 private:
  struct Factor {
    std::vector<double> mean;
    Tensor chol;
    double log_norm = 0.0;  // -0.5 r log 2pi - log det L + log w
  };
  std::size_t dim_ = 0;
  std::vector<std::vector<Factor>> factors_;
  std::vector<double> log_priors_;
};

// Empirical class frequencies. `warnings` receives a note when the labels
// cover a single class.
ClassConditionalMixture fit_priors(ClassConditionalMixture m, std::span<const int> labels,
                                   std::vector<std::string>* warnings = nullptr);

struct MleOptions {
  std::size_t steps = 1000;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
};

// Maximises the mean of log q(z_i|y_i) by full-batch Adam on the tape, with
// an exponentially decaying step size. Priors are set to class frequencies.
ClassConditionalMixture mle_fit(const Tensor& z, std::span<const int> labels, std::size_t classes,
                                std::size_t components, const MleOptions& options);

// ---- tape-level API -------------------------------------------------------

struct MixtureVars {
  std::vector<ad::Var> means;     // class-major, classes * components
  std::vector<ad::Var> chol_raw;  // same layout
  std::vector<ad::Var> logits;    // per class

  // Same order as ClassConditionalMixture::trainable().
  std::vector<ad::Var> trainable() const;
};

MixtureVars bind_mixture(ad::Graph& graph, const ClassConditionalMixture& m,
                         bool trainable = true);

// n x C matrix of log q(z_i | y) for z (n x r).
ad::Var class_log_densities(const MixtureVars& vars, const ClassConditionalMixture& m, ad::Var z);

// n x C matrix of log p(y) + log q(z_i | y).
ad::Var log_joint(const MixtureVars& vars, const ClassConditionalMixture& m, ad::Var z);

}  // namespace masslearn
