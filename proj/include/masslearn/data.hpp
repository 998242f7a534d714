#pragma once

#include "masslearn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace masslearn {

struct Dataset {
  Tensor features;          // n x d
  std::vector<int> labels;  // n
  std::size_t classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.cols() : 0; }
  // Throws std::invalid_argument if the invariants do not hold.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Tensor rows(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---- synthetic blobs ------------------------------------------------------

// Generative model behind gaussian_blobs: equal class priors, unit
// isotropic covariance, class means on a circle in the first two axes.
struct BlobSpec {
  std::size_t classes = 0;
  std::size_t dim = 0;
  double separation = 0.0;
  double shift = 0.0;  // added to the first coordinate of every mean
  std::vector<std::vector<double>> means;
};

BlobSpec blob_spec(std::size_t classes, std::size_t dim, double separation, double shift = 0.0);

struct Blobs {
  Dataset dataset;
  BlobSpec spec;
};

Blobs gaussian_blobs(std::size_t n, std::size_t classes, std::size_t dim, double separation,
                     std::uint64_t seed, double shift = 0.0);

// Bayes-optimal accuracy of the generative model by Monte Carlo. With equal
// priors and shared unit covariance the Bayes rule is the nearest mean.
double bayes_accuracy(const BlobSpec& spec, std::size_t samples, std::uint64_t seed);

// ---- CIFAR-10 binary batches ----------------------------------------------

inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

enum class Split { train, test };

Split parse_split(const std::string& name);

// Reads one batch file of 3073-byte records (label byte, then pixels).
// Pixels are scaled to [0, 1]. `max_records` stops reading early.
Dataset read_cifar10_batch(const std::filesystem::path& path,
                           std::optional<std::size_t> max_records = std::nullopt);

// Train: data_batch_1..5.bin; test: test_batch.bin. `limit` keeps the first
// records in file order.
Dataset load_cifar10(const std::filesystem::path& dir, Split split,
                     std::optional<std::size_t> limit = std::nullopt);

// ---- normalisation --------------------------------------------------------

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::size_t degenerate_features = 0;  // zero-variance features given std 1

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

NormStats compute_norm_stats(const Dataset& train);
void apply_norm_stats(const NormStats& stats, Dataset& ds);

struct Normalized {
  Dataset train;
  std::vector<Dataset> others;
  NormStats stats;
};

// Statistics come from `train` only and are applied to every dataset.
Normalized normalize(const Dataset& train, std::vector<Dataset> others);

// ---- batching -------------------------------------------------------------

// Fisher-Yates shuffle seeded by (seed, epoch), cut into batches; the final
// short batch is kept.
std::vector<std::vector<std::size_t>> batch_iterator(std::size_t n, std::size_t batch_size,
                                                     std::uint64_t seed, std::uint64_t epoch);

// ---- cache format ---------------------------------------------------------

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace masslearn
