#include "masslearn/network.hpp"

#include <cmath>

namespace masslearn {

namespace {

std::size_t layer_count(const MlpConfig& config) { return config.hidden_dims.size() + 1; }

std::size_t fan_in(const MlpConfig& config, std::size_t layer) {
  return layer == 0 ? config.input_dim : config.hidden_dims[layer - 1];
}

std::size_t fan_out(const MlpConfig& config, std::size_t layer) {
  return layer < config.hidden_dims.size() ? config.hidden_dims[layer] : config.output_dim;
}

}  // namespace

void MlpConfig::validate(bool contracting) const {
  if (input_dim == 0 || output_dim == 0) {
    throw std::invalid_argument("mlp config: input_dim and output_dim must be positive");
  }
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw std::invalid_argument("mlp config: hidden widths must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("mlp config: dropout_rate must lie in [0, 1)");
  }
  if (contracting && output_dim > input_dim) {
    throw std::invalid_argument("mlp config: output_dim " + std::to_string(output_dim) +
                                " exceeds input_dim " + std::to_string(input_dim));
  }
}

MlpConfig small_mlp_config(std::size_t input_dim, std::size_t output_dim) {
  MlpConfig config;
  config.input_dim = input_dim;
  config.hidden_dims = {400, 200};
  config.output_dim = output_dim;
  config.use_batchnorm = true;
  return config;
}

std::vector<Tensor*> MlpParams::trainable() {
  std::vector<Tensor*> out;
  for (auto& layer : layers) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  for (auto& bn : batchnorm) {
    out.push_back(&bn.scale);
    out.push_back(&bn.shift);
  }
  return out;
}

std::vector<const Tensor*> MlpParams::trainable() const {
  std::vector<const Tensor*> out;
  for (const auto& layer : layers) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  for (const auto& bn : batchnorm) {
    out.push_back(&bn.scale);
    out.push_back(&bn.shift);
  }
  return out;
}

std::vector<ad::Var> MlpVars::trainable() const {
  std::vector<ad::Var> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i]);
    out.push_back(biases[i]);
  }
  for (std::size_t i = 0; i < bn_scale.size(); ++i) {
    out.push_back(bn_scale[i]);
    out.push_back(bn_shift[i]);
  }
  return out;
}

DropoutMask sample_dropout_mask(const MlpConfig& config, std::size_t batch, Rng& rng) {
  DropoutMask mask;
  const double keep = 1.0 - config.dropout_rate;
  for (std::size_t width : config.hidden_dims) {
    Tensor m({batch, width});
    for (double& v : m.data()) v = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    mask.keep.push_back(std::move(m));
  }
  return mask;
}

MlpParams mlp_init(const MlpConfig& config, std::uint64_t seed) {
  config.validate(false);
  MlpParams params;
  params.config = config;
  Rng rng(seed);
  for (std::size_t l = 0; l < layer_count(config); ++l) {
    const std::size_t in = fan_in(config, l);
    const std::size_t out = fan_out(config, l);
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w({out, in});
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    params.layers.push_back({std::move(w), Tensor({out})});
  }
  if (config.use_batchnorm) {
    for (std::size_t width : config.hidden_dims) {
      params.batchnorm.push_back({Tensor::full({width}, 1.0), Tensor({width}), Tensor({width}),
                                  Tensor::full({width}, 1.0)});
    }
  }
  return params;
}

MlpVars bind_params(ad::Graph& graph, const MlpParams& params, bool trainable) {
  auto put = [&](const Tensor& t) { return trainable ? graph.leaf(t) : graph.constant(t); };
  MlpVars vars;
  for (const auto& layer : params.layers) {
    vars.weights.push_back(put(layer.weight));
    vars.biases.push_back(put(layer.bias));
  }
  for (const auto& bn : params.batchnorm) {
    vars.bn_scale.push_back(put(bn.scale));
    vars.bn_shift.push_back(put(bn.shift));
  }
  return vars;
}

ForwardTrace forward(const MlpVars& vars, const MlpParams& params, ad::Var x, Mode mode,
                     const DropoutMask* mask) {
  const MlpConfig& config = params.config;
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() != config.input_dim) {
    throw std::invalid_argument("mlp forward: expected batch x " +
                                std::to_string(config.input_dim) + " input, got " +
                                shape_string(xv.shape()));
  }
  ad::Graph& g = x.graph();
  const std::size_t batch = xv.rows();
  ForwardTrace trace;
  trace.mask = mask;
  ad::Var h = x;
  for (std::size_t l = 0; l < config.hidden_dims.size(); ++l) {
    ad::Var z = ad::add_bias(ad::matmul_nt(h, vars.weights[l]), vars.biases[l]);
    ad::Var a = z;
    if (config.use_batchnorm) {
      const BatchNormLayer& bn = params.batchnorm[l];
      ad::Var centered;
      ad::Var inv_std;
      if (mode == Mode::train) {
        const double inv_n = 1.0 / static_cast<double>(batch);
        ad::Var mu = ad::scale(ad::col_sums(z), inv_n);
        centered = ad::add_bias(z, ad::neg(mu));
        ad::Var var = ad::scale(ad::col_sums(ad::square(centered)), inv_n);
        inv_std = ad::pow(ad::add_scalar(var, kBatchNormEpsilon), -0.5);
        trace.batch_mean.push_back(mu.value());
        trace.batch_var.push_back(var.value());
      } else {
        Tensor neg_mean = bn.running_mean;
        for (double& v : neg_mean.data()) v = -v;
        Tensor inv = bn.running_var;
        for (double& v : inv.data()) v = 1.0 / std::sqrt(v + kBatchNormEpsilon);
        centered = ad::add_bias(z, g.constant(std::move(neg_mean)));
        inv_std = g.constant(std::move(inv));
      }
      ad::Var gain = ad::mul(vars.bn_scale[l], inv_std);
      trace.bn_gain.push_back(gain);
      a = ad::add_bias(ad::scale_cols(centered, gain), vars.bn_shift[l]);
    }
    trace.pre_activations.push_back(a);
    h = ad::elu(a);
    if (mask != nullptr) {
      const Tensor& keep = mask->keep.at(l);
      if (keep.shape() != h.shape()) {
        throw std::invalid_argument("mlp forward: dropout mask shape " +
                                    shape_string(keep.shape()) + " does not match " +
                                    shape_string(h.shape()));
      }
      h = ad::mul(h, g.constant(keep));
    }
  }
  const std::size_t last = config.hidden_dims.size();
  trace.output = ad::add_bias(ad::matmul_nt(h, vars.weights[last]), vars.biases[last]);
  return trace;
}

ad::Var jacobian_node(const ForwardTrace& trace, const MlpVars& vars, std::size_t row) {
  ad::Graph& g = trace.output.graph();
  const std::size_t hidden = trace.pre_activations.size();
  ad::Var acc = vars.weights[hidden];
  for (std::size_t l = hidden; l-- > 0;) {
    ad::Var slope = ad::elu_derivative(ad::row(trace.pre_activations[l], row));
    if (!trace.bn_gain.empty()) slope = ad::mul(slope, trace.bn_gain[l]);
    if (trace.mask != nullptr) {
      const auto keep = trace.mask->keep[l].row(row);
      slope = ad::mul(slope, g.constant(Tensor::vector({keep.begin(), keep.end()})));
    }
    acc = ad::matmul(ad::scale_cols(acc, slope), vars.weights[l]);
  }
  return acc;
}

ad::Var log_jacobian_node(ad::Var jacobian, double jitter, std::size_t sample_index) {
  if (jitter < 0.0) throw std::invalid_argument("log_jacobian: jitter must be non-negative");
  ad::Var gram = ad::matmul_nt(jacobian, jacobian);
  try {
    return ad::scale(ad::logdet_spd(ad::add_diag(gram, jitter)), 0.5);
  } catch (const ad::NotPositiveDefinite&) {
  }
  try {
    return ad::scale(ad::logdet_spd(ad::add_diag(gram, std::max(jitter, kRetryJitter))), 0.5);
  } catch (const ad::NotPositiveDefinite&) {
    throw DegenerateJacobian(sample_index);
  }
}

void update_running_stats(MlpParams& params, std::span<const Tensor> batch_mean,
                          std::span<const Tensor> batch_var, std::size_t batch_size) {
  if (batch_mean.empty()) return;
  const double batch = static_cast<double>(batch_size);
  const double unbias = batch > 1.0 ? batch / (batch - 1.0) : 1.0;
  for (std::size_t l = 0; l < params.batchnorm.size(); ++l) {
    BatchNormLayer& bn = params.batchnorm[l];
    for (std::size_t j = 0; j < bn.running_mean.size(); ++j) {
      bn.running_mean[j] = (1.0 - kBatchNormMomentum) * bn.running_mean[j] +
                           kBatchNormMomentum * batch_mean[l][j];
      bn.running_var[j] = (1.0 - kBatchNormMomentum) * bn.running_var[j] +
                          kBatchNormMomentum * batch_var[l][j] * unbias;
    }
  }
}

void update_running_stats(MlpParams& params, const ForwardTrace& trace) {
  update_running_stats(params, trace.batch_mean, trace.batch_var, trace.output.value().rows());
}

bool AmGmSides::holds(double relative_slack) const {
  if (rhs == -INFINITY) return true;
  // lhs_raw >= (1 - slack) * rhs_raw
  return lhs - rhs >= std::log1p(-relative_slack);
}

AmGmSides amgm_sides(const Tensor& jacobian) {
  const double r = static_cast<double>(jacobian.rows());
  const Tensor gram = matmul(jacobian, jacobian, false, true);
  double trace = 0.0;
  for (std::size_t i = 0; i < gram.rows(); ++i) trace += gram.at(i, i);
  AmGmSides sides;
  sides.lhs = r * std::log(trace);
  try {
    sides.rhs = r * std::log(r) + ad::logdet_spd(gram);
  } catch (const ad::NotPositiveDefinite&) {
    sides.rhs = -INFINITY;
  }
  return sides;
}

Tensor mlp_forward(const MlpParams& params, const Tensor& x, Mode mode, const DropoutMask* mask) {
  const bool needs_mask = params.config.dropout_rate > 0.0 && mode == Mode::train;
  if (needs_mask != (mask != nullptr)) {
    throw std::invalid_argument(needs_mask ? "mlp forward: train mode with dropout needs a mask"
                                           : "mlp forward: unexpected dropout mask");
  }
  ad::Graph g;
  MlpVars vars = bind_params(g, params, false);
  return forward(vars, params, g.constant(x), mode, mask).output.value();
}

Tensor jacobian_matrix(const MlpParams& params, const Tensor& x, const DropoutMask* mask) {
  if (x.rank() != 2 || x.rows() != 1) {
    throw std::invalid_argument("jacobian_matrix: expects a single 1 x d sample");
  }
  ad::Graph g;
  MlpVars vars = bind_params(g, params, false);
  ad::Var input = g.leaf(x);
  ForwardTrace trace = forward(vars, params, input, Mode::eval, mask);
  const std::size_t r = params.config.output_dim;
  const std::size_t d = params.config.input_dim;
  Tensor jac({r, d});
  for (std::size_t i = 0; i < r; ++i) {
    ad::Gradients grads = g.backward(ad::select(trace.output, i));
    const Tensor& gx = grads[input];
    std::copy(gx.data().begin(), gx.data().end(), jac.row(i).begin());
  }
  return jac;
}

double log_jacobian_determinant(const MlpParams& params, const Tensor& x, double jitter,
                                std::size_t sample_index) {
  if (params.config.output_dim > params.config.input_dim) {
    throw std::invalid_argument("log_jacobian_determinant: requires output_dim <= input_dim");
  }
  if (x.rank() != 2 || x.rows() != 1) {
    throw std::invalid_argument("log_jacobian_determinant: expects a single 1 x d sample");
  }
  ad::Graph g;
  MlpVars vars = bind_params(g, params, false);
  ForwardTrace trace = forward(vars, params, g.constant(x), Mode::eval, nullptr);
  return log_jacobian_node(jacobian_node(trace, vars, 0), jitter, sample_index).value().item();
}

}  // namespace masslearn
