#pragma once

#include "masslearn/data.hpp"
#include "masslearn/model.hpp"
#include "masslearn/objective.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace masslearn {

// One row of the training curve. The three loss terms are reported without
// the beta factor; neg_log_jacobian is -mean log J_f.
struct CurveRow {
  std::size_t step = 0;
  double cond_entropy = 0.0;
  double entropy = 0.0;
  double neg_log_jacobian = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

inline constexpr const char* kCurveHeader =
    "step,cond_entropy,entropy,neg_log_jacobian,train_acc,test_acc";

void write_curves(const std::vector<CurveRow>& rows, const std::filesystem::path& path);

struct TrainResult {
  Model model;
  std::vector<CurveRow> curve;
  std::vector<std::uint64_t> hashes;  // parameter_hash at every curve row
  std::size_t amgm_checks = 0;
  std::size_t amgm_violations = 0;
  std::vector<std::string> warnings;
};

// Seeded streams: "init" (network), "mixture-init", "shuffle" (per epoch),
// "dropout" (per step), "mle-init". Writes the curve CSV when
// cfg.curve_output_path is set. `test` only feeds the test_acc column.
TrainResult train(const TrainConfig& cfg, const MlpConfig& net_config,
                  const MixtureConfig& mixture_config, const Dataset& train_set,
                  const std::optional<Dataset>& test_set = std::nullopt);

// Loss terms of `model` on `ds` in eval mode; the Jacobian term covers every
// row. A SoftmaxCE model is scored under `q`.
LossBreakdown evaluate_terms(const Model& model, const ClassConditionalMixture& q,
                             const Dataset& ds, double jitter);

double accuracy(const Tensor& probs, std::span<const int> labels);

}  // namespace masslearn
