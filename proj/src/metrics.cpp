#include "masslearn/metrics.hpp"

#include "masslearn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace masslearn {

namespace {

const std::vector<int>& require_labels(const PredictionSet& p, const char* who) {
  if (!p.labels) throw std::invalid_argument(std::string(who) + ": predictions carry no labels");
  if (p.labels->size() != p.probs.rows()) {
    throw std::invalid_argument(std::string(who) + ": label count does not match prediction rows");
  }
  if (p.labels->empty()) throw std::invalid_argument(std::string(who) + ": no predictions");
  for (int y : *p.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= p.probs.cols()) {
      throw std::invalid_argument(std::string(who) + ": label " + std::to_string(y) + " out of range");
    }
  }
  return *p.labels;
}

void require_nonempty(const OodScoreSet& s) {
  if (s.scores_in.empty() || s.scores_out.empty()) {
    throw std::invalid_argument("OOD metrics need non-empty in and out score sets");
  }
}

}  // namespace

void PredictionSet::validate() const {
  if (probs.rank() != 2) throw std::invalid_argument("predictions must be n x C");
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double s = 0.0;
    for (double v : probs.row(i)) {
      if (!(v >= 0.0)) throw std::invalid_argument("negative probability in row " + std::to_string(i));
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw std::invalid_argument("probability row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
}

double nll(const PredictionSet& p) {
  const auto& labels = require_labels(p, "nll");
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    s -= std::log(std::max(p.probs.at(i, static_cast<std::size_t>(labels[i])), kProbabilityFloor));
  }
  return s / static_cast<double>(labels.size());
}

double brier(const PredictionSet& p) {
  const auto& labels = require_labels(p, "brier");
  const std::size_t c = p.probs.cols();
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t y = 0; y < c; ++y) {
      const double d = p.probs.at(i, y) - (static_cast<int>(y) == labels[i] ? 1.0 : 0.0);
      s += d * d;
    }
  }
  return s / (static_cast<double>(labels.size()) * static_cast<double>(c));
}

std::vector<double> predictive_entropy(const PredictionSet& p) {
  std::vector<double> out(p.probs.rows(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (double v : p.probs.row(i)) {
      if (v > 0.0) out[i] -= v * std::log(v);
    }
  }
  return out;
}

double accuracy(const PredictionSet& p) {
  return accuracy(p.probs, require_labels(p, "accuracy"));
}

double auroc(const OodScoreSet& s) {
  require_nonempty(s);
  const std::size_t n_in = s.scores_in.size();
  const std::size_t n = n_in + s.scores_out.size();
  std::vector<double> all(s.scores_in);
  all.insert(all.end(), s.scores_out.begin(), s.scores_out.end());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return all[a] < all[b]; });
  // Sum of midranks (1-based) over in-distribution scores.
  double rank_sum = 0.0;
  for (std::size_t p = 0; p < n;) {
    std::size_t q = p;
    while (q < n && all[order[q]] == all[order[p]]) ++q;
    const double midrank = 0.5 * static_cast<double>(p + 1 + q);
    for (std::size_t t = p; t < q; ++t) {
      if (order[t] < n_in) rank_sum += midrank;
    }
    p = q;
  }
  const double ni = static_cast<double>(n_in);
  const double no = static_cast<double>(s.scores_out.size());
  return (rank_sum - ni * (ni + 1.0) / 2.0) / (ni * no);
}

double average_precision(const OodScoreSet& s, Positive positive) {
  require_nonempty(s);
  struct Item {
    double key;
    bool in;
  };
  std::vector<Item> items;
  const double sign = positive == Positive::in ? 1.0 : -1.0;
  for (double v : s.scores_in) items.push_back({sign * v, true});
  for (double v : s.scores_out) items.push_back({sign * v, false});
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.key > b.key; });
  const bool want_in = positive == Positive::in;
  const double total = static_cast<double>(want_in ? s.scores_in.size() : s.scores_out.size());
  double hits = 0.0;
  double ap = 0.0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (items[k].in == want_in) {
      hits += 1.0;
      ap += hits / static_cast<double>(k + 1);
    }
  }
  return ap / total;
}

OodMethod parse_ood_method(const std::string& name) {
  if (name == "entropy") return OodMethod::entropy;
  if (name == "max_q") return OodMethod::max_q;
  if (name == "marginal_q") return OodMethod::marginal_q;
  throw std::invalid_argument("unknown OOD method '" + name + "' (expected entropy, max_q or marginal_q)");
}

std::string to_string(OodMethod method) {
  switch (method) {
    case OodMethod::entropy:
      return "entropy";
    case OodMethod::max_q:
      return "max_q";
    case OodMethod::marginal_q:
      break;
  }
  return "marginal_q";
}

std::vector<double> ood_scores(const Model& model, const Tensor& raw_inputs, OodMethod method) {
  if (method == OodMethod::entropy) {
    std::vector<double> h = predictive_entropy({model.predict_proba(raw_inputs), std::nullopt});
    for (double& v : h) v = -v;
    return h;
  }
  if (!model.mixture) {
    throw UnsupportedMethod("OOD method " + to_string(method) +
                            " needs a variational mixture, and this " + to_string(model.method) +
                            " checkpoint has none; retrain with fit_q=true so mle_fit estimates q "
                            "on the training representations");
  }
  const MixtureEvaluator eval(*model.mixture);
  const Tensor z = model.representations(raw_inputs);
  std::vector<double> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    if (method == OodMethod::marginal_q) {
      out[i] = eval.log_marginal(z.row(i));
    } else {
      const std::vector<double> lq = eval.class_log_densities(z.row(i));
      out[i] = *std::max_element(lq.begin(), lq.end());
    }
  }
  return out;
}

}  // namespace masslearn
