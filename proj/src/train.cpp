#include "masslearn/train.hpp"

#include "masslearn/format.hpp"
#include "masslearn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace masslearn {

namespace {

constexpr std::size_t kEvalChunk = 64;

std::uint64_t derived_seed(std::uint64_t seed, const char* name, std::uint64_t index = 0) {
  return Rng::stream(seed, name, index).next_u64();
}

Dataset head(const Dataset& ds, std::size_t count) {
  std::vector<std::size_t> idx(std::min(count, ds.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return ds.subset(idx);
}

}  // namespace

double accuracy(const Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.rows() != labels.size() || labels.empty()) {
    throw std::invalid_argument("accuracy: need one non-empty probability row per label");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = probs.row(i);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

void write_curves(const std::vector<CurveRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open curve file '" + path.string() + "' for writing");
  out << kCurveHeader << '\n';
  for (const CurveRow& row : rows) {
    out << row.step << ',' << format_double(row.cond_entropy) << ','
        << format_double(row.entropy) << ',' << format_double(row.neg_log_jacobian) << ','
        << format_double(row.train_acc) << ',' << format_double(row.test_acc) << '\n';
  }
  out.close();
  if (!out) throw std::runtime_error("writing curve file '" + path.string() + "' failed");
}

LossBreakdown evaluate_terms(const Model& model, const ClassConditionalMixture& q,
                             const Dataset& ds, double jitter) {
  const Tensor x = model.prepare(ds.features);
  const MlpConfig& c = model.net.config;
  const bool jacobian = c.output_dim <= c.input_dim;
  MassOptions options{0.0, false, jitter, jacobian};
  double ce = 0.0;
  double h = 0.0;
  double j = 0.0;
  for (std::size_t start = 0; start < ds.size(); start += kEvalChunk) {
    const std::size_t end = std::min(ds.size(), start + kEvalChunk);
    Tensor chunk({end - start, x.cols()});
    std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(start * x.cols()),
              x.data().begin() + static_cast<std::ptrdiff_t>(end * x.cols()), chunk.data().begin());
    const std::span<const int> labels(ds.labels.data() + start, end - start);
    ad::Graph g;
    MlpVars net_vars = bind_params(g, model.net, false);
    MixtureVars q_vars = bind_mixture(g, q, false);
    MassTerms terms;
    try {
      terms = mass_loss_graph(net_vars, model.net, q_vars, q, g.constant(std::move(chunk)), labels,
                              options, Mode::eval, nullptr);
    } catch (const DegenerateJacobian& e) {
      throw DegenerateJacobian(start + e.sample_index);
    }
    const double w = static_cast<double>(end - start);
    ce += w * terms.cond_entropy.value().item();
    h += w * terms.entropy.value().item();
    j += w * terms.log_jacobian.value().item();
  }
  const double n = static_cast<double>(ds.size());
  LossBreakdown out{ce / n, h / n, jacobian ? j / n : NAN, 0.0};
  out.total = out.cond_entropy_term;
  return out;
}

TrainResult train(const TrainConfig& cfg, const MlpConfig& net_config,
                  const MixtureConfig& mixture_config, const Dataset& train_set,
                  const std::optional<Dataset>& test_set) {
  cfg.validate();
  const bool mass = cfg.method == Method::mass;
  net_config.validate(mass && cfg.beta > 0.0);
  train_set.validate();
  if (test_set) test_set->validate();
  const std::size_t classes = train_set.classes;
  const std::size_t r = net_config.output_dim;
  if (net_config.input_dim != train_set.dim()) {
    throw std::invalid_argument("network input_dim " + std::to_string(net_config.input_dim) +
                                " does not match dataset width " + std::to_string(train_set.dim()));
  }
  if (!mass && r != classes) {
    throw std::invalid_argument("softmaxce needs output_dim == classes (" + std::to_string(classes) + ")");
  }
  if (mixture_config.components == 0) throw std::invalid_argument("mixture components must be >= 1");

  TrainResult result;
  Model& model = result.model;
  model.method = cfg.method;
  model.classes = classes;

  Dataset data = train_set;
  if (cfg.normalize) {
    model.norm = compute_norm_stats(train_set);
    if (model.norm->degenerate_features > 0) {
      result.warnings.push_back(std::to_string(model.norm->degenerate_features) +
                                " zero-variance features given std 1");
    }
    apply_norm_stats(*model.norm, data);
  }
  if (mass && cfg.beta > 0.0 && cfg.subsample_jacobian && cfg.batch_size < r) {
    result.warnings.push_back("batch_size " + std::to_string(cfg.batch_size) +
                              " is below output_dim " + std::to_string(r) +
                              "; the subsampled Jacobian term uses one sample per batch");
  }

  model.net = mlp_init(net_config, derived_seed(cfg.seed, "init"));
  ClassConditionalMixture q =
      mixture_init(classes, mixture_config.components, r, derived_seed(cfg.seed, "mixture-init"),
                   mixture_config.mean_scale);
  q = fit_priors(std::move(q), data.labels, &result.warnings);
  if (mass) model.mixture = q;

  std::vector<Tensor*> theta = model.net.trainable();
  std::vector<Tensor*> phi = mass ? model.mixture->trainable() : std::vector<Tensor*>{};
  OptimizerState theta_state = OptimizerState::create(cfg.optimizer, theta);
  OptimizerState phi_state = OptimizerState::create(cfg.optimizer, phi);

  const Dataset curve_set = head(train_set, cfg.curve_samples);
  bool curve_q_warned = false;

  auto record_curve = [&](std::size_t step) {
    CurveRow row;
    row.step = step;
    ClassConditionalMixture scoring;
    bool have_q = true;
    if (mass) {
      scoring = *model.mixture;
    } else {
      try {
        MleOptions options{cfg.curve_mle_steps, 0.05, derived_seed(cfg.seed, "mle-init", step)};
        scoring = mle_fit(model.representations(curve_set.features), curve_set.labels, classes,
                          mixture_config.components, options);
      } catch (const std::invalid_argument& e) {
        have_q = false;
        if (!curve_q_warned) {
          result.warnings.push_back(std::string("curve terms unavailable: ") + e.what());
          curve_q_warned = true;
        }
      }
    }
    if (have_q) {
      const LossBreakdown terms = evaluate_terms(model, scoring, curve_set, cfg.jitter);
      row.cond_entropy = terms.cond_entropy_term;
      row.entropy = terms.entropy_term;
      row.neg_log_jacobian = -terms.jacobian_term;
    } else {
      row.cond_entropy = row.entropy = row.neg_log_jacobian = NAN;
    }
    row.train_acc = accuracy(model.predict_proba(train_set.features), train_set.labels);
    row.test_acc =
        test_set ? accuracy(model.predict_proba(test_set->features), test_set->labels) : NAN;
    result.curve.push_back(row);
    result.hashes.push_back(parameter_hash(model));
  };

  const MassOptions options = mass_options(cfg);
  std::size_t step = 0;
  for (std::uint64_t epoch = 0; step < cfg.steps; ++epoch) {
    for (const auto& batch : batch_iterator(data.size(), cfg.batch_size, cfg.seed, epoch)) {
      if (step >= cfg.steps) break;
      const Tensor x = data.rows(batch);
      std::vector<int> labels;
      labels.reserve(batch.size());
      for (std::size_t i : batch) labels.push_back(data.labels[i]);

      std::optional<DropoutMask> mask;
      if (net_config.dropout_rate > 0.0) {
        Rng rng = Rng::stream(cfg.seed, "dropout", step);
        mask = sample_dropout_mask(net_config, batch.size(), rng);
      }
      const DropoutMask* mask_ptr = mask ? &*mask : nullptr;

      std::vector<Tensor> grads;
      std::vector<Tensor> batch_mean;
      std::vector<Tensor> batch_var;
      if (mass) {
        MassStep s;
        try {
          s = mass_minibatch_loss(model.net, *model.mixture, x, labels, options, mask_ptr);
        } catch (const DegenerateJacobian& e) {
          throw DegenerateJacobian(batch[e.sample_index]);
        }
        for (const Tensor& jac : s.jacobians) {
          ++result.amgm_checks;
          if (!amgm_sides(jac).holds(1e-9)) ++result.amgm_violations;
        }
        grads = std::move(s.theta_grads);
        grads.insert(grads.end(), std::make_move_iterator(s.phi_grads.begin()),
                     std::make_move_iterator(s.phi_grads.end()));
        batch_mean = std::move(s.batch_mean);
        batch_var = std::move(s.batch_var);
      } else {
        SoftmaxStep s = softmaxce_minibatch_loss(model.net, x, labels, mask_ptr);
        grads = std::move(s.theta_grads);
        batch_mean = std::move(s.batch_mean);
        batch_var = std::move(s.batch_var);
      }

      if (cfg.weight_decay > 0.0) {
        for (std::size_t p = 0; p < theta.size(); ++p) {
          auto g = grads[p].data();
          const auto v = theta[p]->data();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg.weight_decay * v[i];
        }
      }
      clip_global_norm(grads, cfg.clip_norm);
      optimizer_step(theta_state, theta, std::span<const Tensor>(grads.data(), theta.size()), cfg.lr);
      if (mass) {
        optimizer_step(phi_state, phi,
                       std::span<const Tensor>(grads.data() + theta.size(), phi.size()),
                       cfg.variational_lr);
      }
      update_running_stats(model.net, batch_mean, batch_var, batch.size());

      ++step;
      if (step % cfg.eval_interval == 0 || step == cfg.steps) record_curve(step);
    }
  }

  if (!mass && cfg.fit_q) {
    MleOptions mle{cfg.mle_steps, 0.05, derived_seed(cfg.seed, "mle-init")};
    model.mixture = mle_fit(model.representations(train_set.features), train_set.labels, classes,
                            mixture_config.components, mle);
  }

  if (!cfg.curve_output_path.empty()) write_curves(result.curve, cfg.curve_output_path);
  return result;
}

}  // namespace masslearn
