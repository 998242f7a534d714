#include "masslearn/variational.hpp"

#include "masslearn/optimizer.hpp"
#include "masslearn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace masslearn {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void check_class(const ClassConditionalMixture& m, std::size_t y) {
  if (y >= m.classes) {
    throw std::out_of_range("mixture: class " + std::to_string(y) + " out of range for " +
                            std::to_string(m.classes) + " classes");
  }
}

double safe_log(double p) { return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity(); }

}  // namespace

std::vector<Tensor*> ClassConditionalMixture::trainable() {
  std::vector<Tensor*> out;
  for (auto& comps : per_class) {
    for (auto& c : comps) {
      out.push_back(&c.mean);
      out.push_back(&c.chol_raw);
    }
  }
  for (auto& l : weight_logits) out.push_back(&l);
  return out;
}

std::vector<const Tensor*> ClassConditionalMixture::trainable() const {
  std::vector<const Tensor*> out;
  for (const auto& comps : per_class) {
    for (const auto& c : comps) {
      out.push_back(&c.mean);
      out.push_back(&c.chol_raw);
    }
  }
  for (const auto& l : weight_logits) out.push_back(&l);
  return out;
}

Tensor ClassConditionalMixture::cholesky_factor(std::size_t y, std::size_t k) const {
  const Tensor& raw = per_class.at(y).at(k).chol_raw;
  Tensor l({dim, dim});
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < i; ++j) l.at(i, j) = raw.at(i, j);
    l.at(i, i) = ad::softplus(raw.at(i, i));
  }
  return l;
}

Tensor ClassConditionalMixture::covariance(std::size_t y, std::size_t k) const {
  const Tensor l = cholesky_factor(y, k);
  return matmul(l, l, false, true);
}

std::vector<double> ClassConditionalMixture::weights(std::size_t y) const {
  const Tensor& logits = weight_logits.at(y);
  const double norm = ad::logsumexp(logits.data());
  std::vector<double> w(logits.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::exp(logits[k] - norm);
  return w;
}

ClassConditionalMixture mixture_init(std::size_t classes, std::size_t components,
                                     std::size_t dim, std::uint64_t seed, double mean_scale) {
  if (classes == 0 || components == 0 || dim == 0) {
    throw std::invalid_argument("mixture_init: classes, components and dim must be >= 1");
  }
  ClassConditionalMixture m;
  m.classes = classes;
  m.components = components;
  m.dim = dim;
  Rng rng(seed);
  const double unit_raw = ad::softplus_inverse(1.0);
  for (std::size_t y = 0; y < classes; ++y) {
    std::vector<GaussianComponent> comps;
    for (std::size_t k = 0; k < components; ++k) {
      Tensor mean({dim});
      for (double& v : mean.data()) v = mean_scale * rng.normal();
      Tensor raw({dim, dim});
      for (std::size_t i = 0; i < dim; ++i) raw.at(i, i) = unit_raw;
      comps.push_back({std::move(mean), std::move(raw)});
    }
    m.per_class.push_back(std::move(comps));
    m.weight_logits.push_back(Tensor({components}));
  }
  m.class_priors.assign(classes, 1.0 / static_cast<double>(classes));
  return m;
}

MixtureEvaluator::MixtureEvaluator(const ClassConditionalMixture& m) : dim_(m.dim) {
  for (std::size_t y = 0; y < m.classes; ++y) {
    const std::vector<double> w = m.weights(y);
    std::vector<Factor> comps;
    for (std::size_t k = 0; k < m.components; ++k) {
      Factor f;
      const auto mean = m.per_class[y][k].mean.data();
      f.mean.assign(mean.begin(), mean.end());
      f.chol = m.cholesky_factor(y, k);
      double log_det = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) log_det += std::log(f.chol.at(i, i));
      f.log_norm = -0.5 * static_cast<double>(dim_) * kLog2Pi - log_det + safe_log(w[k]);
      comps.push_back(std::move(f));
    }
    factors_.push_back(std::move(comps));
    log_priors_.push_back(safe_log(m.class_priors.at(y)));
  }
}

std::vector<double> MixtureEvaluator::class_log_densities(std::span<const double> z) const {
  if (z.size() != dim_) {
    throw std::invalid_argument("mixture: point of dimension " + std::to_string(z.size()) +
                                ", expected " + std::to_string(dim_));
  }
  std::vector<double> out(factors_.size());
  std::vector<double> terms;
  std::vector<double> solved(dim_);
  for (std::size_t y = 0; y < factors_.size(); ++y) {
    terms.clear();
    for (const Factor& f : factors_[y]) {
      // forward substitution L u = z - mu
      double quad = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) {
        double s = z[i] - f.mean[i];
        for (std::size_t j = 0; j < i; ++j) s -= f.chol.at(i, j) * solved[j];
        solved[i] = s / f.chol.at(i, i);
        quad += solved[i] * solved[i];
      }
      terms.push_back(f.log_norm - 0.5 * quad);
    }
    out[y] = ad::logsumexp(terms);
  }
  return out;
}

double MixtureEvaluator::log_density(std::size_t y, std::span<const double> z) const {
  return class_log_densities(z).at(y);
}

double MixtureEvaluator::log_marginal(std::span<const double> z) const {
  std::vector<double> joint = class_log_densities(z);
  for (std::size_t y = 0; y < joint.size(); ++y) joint[y] += log_priors_[y];
  return ad::logsumexp(joint);
}

std::vector<double> MixtureEvaluator::posterior(std::span<const double> z) const {
  std::vector<double> joint = class_log_densities(z);
  for (std::size_t y = 0; y < joint.size(); ++y) joint[y] += log_priors_[y];
  const double top = *std::max_element(joint.begin(), joint.end());
  double total = 0.0;
  for (double& v : joint) total += (v = std::exp(v - top));
  for (double& v : joint) v /= total;
  return joint;
}

double mixture_log_density(const ClassConditionalMixture& m, std::size_t y,
                           std::span<const double> z) {
  check_class(m, y);
  return MixtureEvaluator(m).log_density(y, z);
}

double log_marginal(const ClassConditionalMixture& m, std::span<const double> z) {
  return MixtureEvaluator(m).log_marginal(z);
}

std::vector<double> class_posterior(const ClassConditionalMixture& m, std::span<const double> z) {
  return MixtureEvaluator(m).posterior(z);
}

ClassConditionalMixture fit_priors(ClassConditionalMixture m, std::span<const int> labels,
                                   std::vector<std::string>* warnings) {
  if (labels.empty()) throw std::invalid_argument("fit_priors: no labels");
  std::vector<double> counts(m.classes, 0.0);
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= m.classes) {
      throw std::out_of_range("fit_priors: label " + std::to_string(label) +
                              " out of range for " + std::to_string(m.classes) + " classes");
    }
    counts[static_cast<std::size_t>(label)] += 1.0;
  }
  const double n = static_cast<double>(labels.size());
  std::size_t observed = 0;
  for (std::size_t y = 0; y < m.classes; ++y) {
    m.class_priors[y] = counts[y] / n;
    if (counts[y] > 0.0) ++observed;
  }
  if (observed == 1 && m.classes > 1 && warnings != nullptr) {
    warnings->push_back("fit_priors: labels cover a single class; prior is degenerate");
  }
  return m;
}

std::vector<ad::Var> MixtureVars::trainable() const {
  std::vector<ad::Var> out;
  for (std::size_t i = 0; i < means.size(); ++i) {
    out.push_back(means[i]);
    out.push_back(chol_raw[i]);
  }
  out.insert(out.end(), logits.begin(), logits.end());
  return out;
}

MixtureVars bind_mixture(ad::Graph& graph, const ClassConditionalMixture& m, bool trainable) {
  auto put = [&](const Tensor& t) { return trainable ? graph.leaf(t) : graph.constant(t); };
  MixtureVars vars;
  for (const auto& comps : m.per_class) {
    for (const auto& c : comps) {
      vars.means.push_back(put(c.mean));
      vars.chol_raw.push_back(put(c.chol_raw));
    }
  }
  for (const auto& l : m.weight_logits) vars.logits.push_back(put(l));
  return vars;
}

ad::Var class_log_densities(const MixtureVars& vars, const ClassConditionalMixture& m, ad::Var z) {
  if (z.value().rank() != 2 || z.value().cols() != m.dim) {
    throw std::invalid_argument("mixture: expected n x " + std::to_string(m.dim) +
                                " representations, got " + shape_string(z.shape()));
  }
  const double constant = -0.5 * static_cast<double>(m.dim) * kLog2Pi;
  std::vector<ad::Var> per_class;
  for (std::size_t y = 0; y < m.classes; ++y) {
    std::vector<ad::Var> per_component;
    for (std::size_t k = 0; k < m.components; ++k) {
      const std::size_t idx = y * m.components + k;
      ad::Var l = ad::chol_from_raw(vars.chol_raw[idx]);
      ad::Var diff = ad::add_bias(z, ad::neg(vars.means[idx]));
      ad::Var solved = ad::tri_solve_lower(l, ad::transpose(diff));
      ad::Var quad = ad::col_sums(ad::square(solved));
      ad::Var log_det = ad::sum(ad::log(ad::diag(l)));
      per_component.push_back(ad::sub(ad::add_scalar(ad::scale(quad, -0.5), constant), log_det));
    }
    ad::Var logits = vars.logits[y];
    ad::Var log_weights = ad::sub(logits, ad::logsumexp(logits));
    ad::Var stacked = ad::add_bias(ad::stack_cols(per_component), log_weights);
    per_class.push_back(ad::logsumexp_rows(stacked));
  }
  return ad::stack_cols(per_class);
}

ad::Var log_joint(const MixtureVars& vars, const ClassConditionalMixture& m, ad::Var z) {
  Tensor log_priors({m.classes});
  for (std::size_t y = 0; y < m.classes; ++y) log_priors[y] = safe_log(m.class_priors[y]);
  return ad::add_bias(class_log_densities(vars, m, z), z.graph().constant(std::move(log_priors)));
}

ClassConditionalMixture mle_fit(const Tensor& z, std::span<const int> labels, std::size_t classes,
                                std::size_t components, const MleOptions& options) {
  if (z.rank() != 2 || z.rows() != labels.size()) {
    throw std::invalid_argument("mle_fit: need one label per representation row");
  }
  const std::size_t n = z.rows();
  const std::size_t r = z.cols();
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::out_of_range("mle_fit: label " + std::to_string(y) + " out of range");
    }
    members[static_cast<std::size_t>(y)].push_back(i);
  }
  for (std::size_t y = 0; y < classes; ++y) {
    if (members[y].empty()) throw std::invalid_argument("mle_fit: class " + std::to_string(y) + " is empty");
    if (members[y].size() < components) {
      throw std::invalid_argument("mle_fit: class " + std::to_string(y) + " has fewer samples than components");
    }
  }

  // Moment-based start: means scattered around the class mean, isotropic
  // covariance at the class's average variance.
  ClassConditionalMixture m = mixture_init(classes, components, r, options.seed, 0.0);
  Rng rng = Rng::stream(options.seed, "mle-init");
  std::vector<Tensor> class_z;
  for (std::size_t y = 0; y < classes; ++y) {
    const auto& idx = members[y];
    Tensor zy({idx.size(), r});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy(z.row(idx[i]).begin(), z.row(idx[i]).end(), zy.row(i).begin());
    }
    std::vector<double> mu(r, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < r; ++j) mu[j] += zy.at(i, j);
    }
    for (double& v : mu) v /= static_cast<double>(idx.size());
    double var = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < r; ++j) var += (zy.at(i, j) - mu[j]) * (zy.at(i, j) - mu[j]);
    }
    var /= static_cast<double>(idx.size() * r);
    const double sd = std::sqrt(std::max(var, 1e-12));
    const double raw = ad::softplus_inverse(sd);
    for (std::size_t k = 0; k < components; ++k) {
      GaussianComponent& c = m.per_class[y][k];
      for (std::size_t j = 0; j < r; ++j) {
        c.mean[j] = mu[j] + (components > 1 ? 0.5 * sd * rng.normal() : 0.0);
      }
      for (std::size_t j = 0; j < r; ++j) c.chol_raw.at(j, j) = raw;
    }
    class_z.push_back(std::move(zy));
  }
  m = fit_priors(std::move(m), labels);

  std::vector<Tensor*> params = m.trainable();
  OptimizerState state = OptimizerState::create(OptimizerKind::adam, params);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t step = 1; step <= options.steps; ++step) {
    ad::Graph g;
    MixtureVars vars = bind_mixture(g, m);
    std::vector<ad::Var> totals;
    for (std::size_t y = 0; y < classes; ++y) {
      // Only the class's own column matters; build a single-class view.
      ClassConditionalMixture view;
      view.classes = 1;
      view.components = components;
      view.dim = r;
      MixtureVars sub;
      for (std::size_t k = 0; k < components; ++k) {
        sub.means.push_back(vars.means[y * components + k]);
        sub.chol_raw.push_back(vars.chol_raw[y * components + k]);
      }
      sub.logits.push_back(vars.logits[y]);
      ad::Var dens = class_log_densities(sub, view, g.constant(class_z[y]));
      totals.push_back(ad::sum(dens));
    }
    ad::Var objective = totals[0];
    for (std::size_t y = 1; y < totals.size(); ++y) objective = ad::add(objective, totals[y]);
    objective = ad::scale(objective, -inv_n);
    ad::Gradients grads = g.backward(objective);
    const std::vector<ad::Var> leaves = vars.trainable();
    const double progress = static_cast<double>(step - 1) / static_cast<double>(options.steps);
    const double lr = options.learning_rate * std::pow(1e-3, progress);
    std::vector<Tensor> grad_values;
    for (const ad::Var& leaf : leaves) grad_values.push_back(grads[leaf]);
    optimizer_step(state, params, grad_values, lr);
  }
  return m;
}

}  // namespace masslearn
