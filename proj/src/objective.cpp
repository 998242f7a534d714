#include "masslearn/objective.hpp"

#include <stdexcept>

namespace masslearn {

Method parse_method(const std::string& name) {
  if (name == "mass") return Method::mass;
  if (name == "softmaxce") return Method::softmaxce;
  throw std::invalid_argument("unknown method '" + name + "' (expected mass or softmaxce)");
}

std::string to_string(Method method) { return method == Method::mass ? "mass" : "softmaxce"; }

void TrainConfig::validate() const {
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (!(variational_lr > 0.0)) throw std::invalid_argument("variational_lr must be > 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(jitter >= 0.0)) throw std::invalid_argument("jitter must be >= 0");
  if (eval_interval == 0) throw std::invalid_argument("eval_interval must be >= 1");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (curve_samples == 0) throw std::invalid_argument("curve_samples must be >= 1");
}

MassOptions mass_options(const TrainConfig& cfg) {
  return {cfg.beta, cfg.subsample_jacobian, cfg.jitter, false};
}

std::size_t jacobian_rows(std::size_t batch, std::size_t r, bool subsample) {
  if (!subsample) return batch;
  return (batch + r - 1) / r;
}

MassTerms mass_loss_graph(const MlpVars& net_vars, const MlpParams& net,
                          const MixtureVars& q_vars, const ClassConditionalMixture& q, ad::Var x,
                          std::span<const int> labels, const MassOptions& options, Mode mode,
                          const DropoutMask* mask) {
  const std::size_t n = x.value().rows();
  if (n == 0) throw std::invalid_argument("mass loss: empty batch");
  if (labels.size() != n) throw std::invalid_argument("mass loss: need one label per row");
  if (net.config.output_dim != q.dim) {
    throw std::invalid_argument("mass loss: representation width " +
                                std::to_string(net.config.output_dim) + " does not match q width " +
                                std::to_string(q.dim));
  }
  ad::Graph& g = x.graph();
  MassTerms terms;
  terms.trace = forward(net_vars, net, x, mode, mask);
  ad::Var joint = log_joint(q_vars, q, terms.trace.output);
  ad::Var log_marginal = ad::logsumexp_rows(joint);
  terms.cond_entropy = ad::mean(ad::sub(log_marginal, ad::pick(joint, labels)));
  terms.entropy = ad::neg(ad::mean(log_marginal));

  const bool with_jacobian = options.beta != 0.0 || options.force_jacobian;
  if (with_jacobian) {
    const std::size_t rows = jacobian_rows(n, net.config.output_dim, options.subsample_jacobian);
    std::vector<ad::Var> logs;
    for (std::size_t i = 0; i < rows; ++i) {
      ad::Var jac = jacobian_node(terms.trace, net_vars, i);
      terms.jacobians.push_back(jac);
      logs.push_back(ad::reshape(log_jacobian_node(jac, options.jitter, i), {1}));
    }
    terms.log_jacobian = ad::mean(ad::stack_cols(logs));
  } else {
    terms.log_jacobian = g.constant(Tensor::scalar(0.0));
  }

  if (options.beta == 0.0) {
    terms.total = terms.cond_entropy;
  } else {
    terms.total = ad::add(terms.cond_entropy,
                          ad::scale(ad::sub(terms.entropy, terms.log_jacobian), options.beta));
  }
  return terms;
}

LossBreakdown breakdown(const MassTerms& terms) {
  return {terms.cond_entropy.value().item(), terms.entropy.value().item(),
          terms.log_jacobian.value().item(), terms.total.value().item()};
}

namespace {

std::vector<Tensor> collect(const ad::Gradients& grads, const std::vector<ad::Var>& vars) {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (ad::Var v : vars) out.push_back(grads[v]);
  return out;
}

}  // namespace

MassStep mass_minibatch_loss(const MlpParams& net, const ClassConditionalMixture& q,
                             const Tensor& x, std::span<const int> labels,
                             const MassOptions& options, const DropoutMask* mask) {
  ad::Graph g;
  MlpVars net_vars = bind_params(g, net, true);
  MixtureVars q_vars = bind_mixture(g, q, true);
  MassTerms terms =
      mass_loss_graph(net_vars, net, q_vars, q, g.constant(x), labels, options, Mode::train, mask);
  ad::Gradients grads = g.backward(terms.total);
  MassStep step;
  step.loss = breakdown(terms);
  step.theta_grads = collect(grads, net_vars.trainable());
  step.phi_grads = collect(grads, q_vars.trainable());
  step.batch_mean = std::move(terms.trace.batch_mean);
  step.batch_var = std::move(terms.trace.batch_var);
  for (ad::Var j : terms.jacobians) step.jacobians.push_back(j.value());
  return step;
}

ad::Var softmaxce_graph(ad::Var logits, std::span<const int> labels) {
  const Tensor& l = logits.value();
  if (l.rank() != 2 || l.rows() != labels.size()) {
    throw std::invalid_argument("softmaxce: need one label per logit row");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= l.cols()) {
      throw std::invalid_argument("softmaxce: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(l.cols()) + ")");
    }
  }
  return ad::mean(ad::sub(ad::logsumexp_rows(logits), ad::pick(logits, labels)));
}

double softmaxce_loss(const Tensor& logits, std::span<const int> labels) {
  ad::Graph g;
  return softmaxce_graph(g.constant(logits), labels).value().item();
}

SoftmaxStep softmaxce_minibatch_loss(const MlpParams& net, const Tensor& x,
                                     std::span<const int> labels, const DropoutMask* mask) {
  ad::Graph g;
  MlpVars vars = bind_params(g, net, true);
  ForwardTrace trace = forward(vars, net, g.constant(x), Mode::train, mask);
  ad::Var loss = softmaxce_graph(trace.output, labels);
  ad::Gradients grads = g.backward(loss);
  SoftmaxStep step;
  step.loss = loss.value().item();
  step.theta_grads = collect(grads, vars.trainable());
  step.batch_mean = std::move(trace.batch_mean);
  step.batch_var = std::move(trace.batch_var);
  return step;
}

}  // namespace masslearn
