#pragma once

// A trained classifier: the network, the optional variational mixture and
// the input normalisation it was trained under.

#include "masslearn/data.hpp"
#include "masslearn/network.hpp"
#include "masslearn/objective.hpp"
#include "masslearn/variational.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>

namespace masslearn {

struct Model {
  Method method = Method::mass;
  std::size_t classes = 0;
  MlpParams net;
  std::optional<ClassConditionalMixture> mixture;
  std::optional<NormStats> norm;

  // Applies `norm` to raw inputs.
  Tensor prepare(const Tensor& raw) const;
  // Eval-mode f(x) for raw inputs.
  Tensor representations(const Tensor& raw) const;
  // n x C class probabilities: Bayes rule under q for MASS, softmax of the
  // logits for SoftmaxCE.
  Tensor predict_proba(const Tensor& raw) const;

  friend bool operator==(const Model&, const Model&) = default;
};

// Row-wise softmax.
Tensor softmax_rows(const Tensor& logits);

// FNV-1a over every parameter and running statistic.
std::uint64_t parameter_hash(const Model& model);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace masslearn
