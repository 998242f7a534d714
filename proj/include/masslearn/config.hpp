#pragma once

// Plain key=value run configuration. Lines are `key = value`; `#` starts a
// comment. Unknown and repeated keys are rejected.

#include "masslearn/data.hpp"
#include "masslearn/metrics.hpp"
#include "masslearn/network.hpp"
#include "masslearn/objective.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace masslearn {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class DatasetKind { blobs, cifar10, file };

struct DataSpec {
  DatasetKind kind = DatasetKind::blobs;
  // blobs
  std::size_t n_train = 1500;
  std::size_t n_test = 1500;
  std::size_t classes = 3;
  std::size_t dim = 2;
  double separation = 4.0;
  double shift = 0.0;
  std::uint64_t data_seed = 0;
  // cifar10
  std::filesystem::path data_dir;
  std::optional<std::size_t> train_limit;
  std::optional<std::size_t> test_limit;
  // file (dataset cache format)
  std::filesystem::path train_path;
  std::filesystem::path test_path;

  friend bool operator==(const DataSpec&, const DataSpec&) = default;
};

struct RunConfig {
  DataSpec data;
  std::vector<std::size_t> hidden_dims{32, 32};
  std::optional<std::size_t> output_dim;  // unset: classes for softmaxce,
                                          // min(d, 15) for mass
  double dropout = 0.0;
  bool batchnorm = false;
  TrainConfig train;
  MixtureConfig mixture;
  OodMethod ood_method = OodMethod::max_q;
  std::filesystem::path output_dir = ".";

  std::size_t resolved_output_dim(std::size_t input_dim) const;
  MlpConfig network(std::size_t input_dim) const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Relative paths are resolved against `base`. Checks that referenced
// dataset files exist. Throws ConfigError naming the key.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base);
RunConfig load_config(const std::filesystem::path& path);

// Every key, in a fixed order; parse_config(echo, base) == config.
std::string config_echo(const RunConfig& config);

struct DataSplits {
  Dataset train;
  Dataset test;
};

DataSplits load_datasets(const DataSpec& spec);
Dataset load_split(const DataSpec& spec, Split split);

}  // namespace masslearn
