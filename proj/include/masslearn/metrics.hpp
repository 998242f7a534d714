#pragma once

// Proper scoring rules, predictive entropy and OOD ranking metrics.
// Natural logarithms throughout.

#include "masslearn/model.hpp"
#include "masslearn/tensor.hpp"

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace masslearn {

struct PredictionSet {
  Tensor probs;  // n x C, rows on the simplex
  std::optional<std::vector<int>> labels;

  // Throws std::invalid_argument when a row is off the simplex (1e-9).
  void validate() const;
};

inline constexpr double kProbabilityFloor = 1e-300;

// mean -log p[i, y_i], probabilities floored at 1e-300.
double nll(const PredictionSet& p);
// (1 / (n C)) sum_i sum_y (p[i, y] - 1[y = y_i])^2
double brier(const PredictionSet& p);
// -sum_y p log p per row, with 0 log 0 = 0.
std::vector<double> predictive_entropy(const PredictionSet& p);
double accuracy(const PredictionSet& p);

// Higher scores mean in-distribution.
struct OodScoreSet {
  std::vector<double> scores_in;
  std::vector<double> scores_out;
};

// P(in > out) + 0.5 P(tie), by midranks.
double auroc(const OodScoreSet& s);

enum class Positive { in, out };

// sum_k (R_k - R_{k-1}) P_k over the list ranked by descending score for
// positive = in and ascending score for positive = out. Tied scores keep
// in-distribution items ahead of out-of-distribution ones.
double average_precision(const OodScoreSet& s, Positive positive);

enum class OodMethod { entropy, max_q, marginal_q };
OodMethod parse_ood_method(const std::string& name);
std::string to_string(OodMethod method);

struct UnsupportedMethod : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// entropy: -predictive entropy; max_q: max_y log q(f(x)|y);
// marginal_q: log q(f(x)). Throws UnsupportedMethod when the checkpoint
// has no variational mixture.
std::vector<double> ood_scores(const Model& model, const Tensor& raw_inputs, OodMethod method);

}  // namespace masslearn
