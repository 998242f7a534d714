#include "masslearn/data.hpp"

#include "masslearn/binary_io.hpp"
#include "masslearn/rng.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace masslearn {

namespace {

constexpr char kCacheMagic[8] = {'M', 'L', 'D', 'S', 'E', 'T', '0', '1'};
constexpr std::uint32_t kCacheVersion = 1;

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw std::invalid_argument("dataset '" + name + "' is empty");
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw std::invalid_argument("dataset '" + name + "': features " +
                                shape_string(features.shape()) + " do not match " +
                                std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::invalid_argument("dataset '" + name + "': label " + std::to_string(labels[i]) +
                                  " at row " + std::to_string(i) + " outside [0, " +
                                  std::to_string(classes) + ")");
    }
  }
  for (double v : features.data()) {
    if (std::isnan(v)) throw std::invalid_argument("dataset '" + name + "' contains NaN features");
  }
}

Tensor Dataset::rows(std::span<const std::size_t> indices) const {
  const std::size_t d = dim();
  Tensor out({indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = features.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.features = rows(indices);
  out.classes = classes;
  out.name = name;
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  return out;
}

BlobSpec blob_spec(std::size_t classes, std::size_t dim, double separation, double shift) {
  if (classes < 2 || dim < 2) throw std::invalid_argument("gaussian_blobs: need C >= 2 and d >= 2");
  BlobSpec spec{classes, dim, separation, shift, {}};
  const double radius = separation / 2.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    std::vector<double> mean(dim, 0.0);
    mean[0] = radius * std::cos(angle) + shift;
    mean[1] = radius * std::sin(angle);
    spec.means.push_back(std::move(mean));
  }
  return spec;
}

Blobs gaussian_blobs(std::size_t n, std::size_t classes, std::size_t dim, double separation,
                     std::uint64_t seed, double shift) {
  Blobs out{{}, blob_spec(classes, dim, separation, shift)};
  Dataset& ds = out.dataset;
  ds.classes = classes;
  ds.name = "blobs";
  ds.features = Tensor({n, dim});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    ds.labels.push_back(static_cast<int>(c));
    for (std::size_t j = 0; j < dim; ++j) ds.features.at(i, j) = out.spec.means[c][j] + rng.normal();
  }
  return out;
}

double bayes_accuracy(const BlobSpec& spec, std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw std::invalid_argument("bayes_accuracy: need samples");
  Rng rng(seed);
  std::size_t correct = 0;
  std::vector<double> x(spec.dim);
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t c = static_cast<std::size_t>(rng.below(spec.classes));
    for (std::size_t j = 0; j < spec.dim; ++j) x[j] = spec.means[c][j] + rng.normal();
    std::size_t best = 0;
    double best_dist = INFINITY;
    for (std::size_t k = 0; k < spec.classes; ++k) {
      double dist = 0.0;
      for (std::size_t j = 0; j < spec.dim; ++j) dist += (x[j] - spec.means[k][j]) * (x[j] - spec.means[k][j]);
      if (dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    if (best == c) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples);
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + name + "' (expected train or test)");
}

Dataset read_cifar10_batch(const std::filesystem::path& path, std::optional<std::size_t> max_records) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open CIFAR-10 batch '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  const std::uint64_t complete = file_size / kCifarRecordBytes;
  if (file_size % kCifarRecordBytes != 0) {
    throw std::runtime_error("CIFAR-10 batch '" + path.string() + "' has size " +
                             std::to_string(file_size) + " bytes, not a multiple of the record size " +
                             std::to_string(kCifarRecordBytes) + "; truncated record at byte offset " +
                             std::to_string(complete * kCifarRecordBytes));
  }
  std::size_t count = static_cast<std::size_t>(complete);
  if (max_records) count = std::min(count, *max_records);
  Dataset ds;
  ds.classes = 10;
  ds.name = "cifar10";
  ds.features = Tensor({count, kCifarImageBytes});
  ds.labels.reserve(count);
  std::vector<unsigned char> record(kCifarRecordBytes);
  for (std::size_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(kCifarRecordBytes));
    if (static_cast<std::size_t>(in.gcount()) != kCifarRecordBytes) {
      throw std::runtime_error("CIFAR-10 batch '" + path.string() + "': short read at byte offset " +
                               std::to_string(i * kCifarRecordBytes));
    }
    if (record[0] > 9) {
      throw std::runtime_error("CIFAR-10 batch '" + path.string() + "': label " +
                               std::to_string(record[0]) + " at byte offset " +
                               std::to_string(i * kCifarRecordBytes) + " is not in 0..9");
    }
    ds.labels.push_back(record[0]);
    auto row = ds.features.row(i);
    for (std::size_t j = 0; j < kCifarImageBytes; ++j) row[j] = record[1 + j] / 255.0;
  }
  return ds;
}

Dataset load_cifar10(const std::filesystem::path& dir, Split split, std::optional<std::size_t> limit) {
  std::vector<std::filesystem::path> files;
  if (split == Split::train) {
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  std::vector<double> features;
  std::vector<int> labels;
  for (const auto& file : files) {
    std::optional<std::size_t> remaining;
    if (limit) {
      if (labels.size() >= *limit) break;
      remaining = *limit - labels.size();
    }
    Dataset part = read_cifar10_batch(file, remaining);
    features.insert(features.end(), part.features.data().begin(), part.features.data().end());
    labels.insert(labels.end(), part.labels.begin(), part.labels.end());
  }
  Dataset ds;
  ds.classes = 10;
  ds.name = split == Split::train ? "cifar10-train" : "cifar10-test";
  const std::size_t n = labels.size();
  ds.features = Tensor({n, kCifarImageBytes}, std::move(features));
  ds.labels = std::move(labels);
  return ds;
}

NormStats compute_norm_stats(const Dataset& train) {
  if (train.size() == 0) throw std::invalid_argument("normalize: empty training set");
  const std::size_t n = train.size();
  const std::size_t d = train.dim();
  NormStats stats{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0), 0};
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = train.features.row(i);
    for (std::size_t j = 0; j < d; ++j) stats.mean[j] += row[j];
  }
  for (double& m : stats.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = train.features.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - stats.mean[j];
      stats.std[j] += c * c;
    }
  }
  for (double& s : stats.std) {
    s = std::sqrt(s / static_cast<double>(n));
    if (!(s > 0.0)) {
      s = 1.0;
      ++stats.degenerate_features;
    }
  }
  return stats;
}

void apply_norm_stats(const NormStats& stats, Dataset& ds) {
  if (ds.dim() != stats.mean.size()) {
    throw std::invalid_argument("normalize: dataset '" + ds.name + "' has width " +
                                std::to_string(ds.dim()) + ", statistics have " +
                                std::to_string(stats.mean.size()));
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.features.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - stats.mean[j]) / stats.std[j];
  }
}

Normalized normalize(const Dataset& train, std::vector<Dataset> others) {
  Normalized out{train, std::move(others), compute_norm_stats(train)};
  apply_norm_stats(out.stats, out.train);
  for (Dataset& ds : out.others) apply_norm_stats(out.stats, ds);
  return out;
}

std::vector<std::vector<std::size_t>> batch_iterator(std::size_t n, std::size_t batch_size,
                                                     std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batch_iterator: batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::stream(seed, "shuffle", epoch);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  io::Writer w(path);
  w.bytes(kCacheMagic, sizeof kCacheMagic);
  w.u32(kCacheVersion);
  w.string(ds.name);
  w.u64(ds.classes);
  w.u64(ds.size());
  for (int label : ds.labels) w.i32(label);
  w.tensor(ds.features);
  w.close();
}

Dataset load_dataset(const std::filesystem::path& path) {
  io::Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kCacheMagic)) {
    throw std::runtime_error("'" + path.string() + "' is not a dataset cache file");
  }
  const std::uint32_t version = r.u32();
  if (version != kCacheVersion) {
    throw std::runtime_error("'" + path.string() + "': unsupported dataset cache version " +
                             std::to_string(version));
  }
  Dataset ds;
  ds.name = r.string();
  ds.classes = r.u64();
  const std::uint64_t n = r.u64();
  ds.labels.resize(n);
  for (auto& label : ds.labels) label = r.i32();
  ds.features = r.tensor();
  if (!r.at_end()) {
    throw std::runtime_error("'" + path.string() + "': trailing bytes at byte offset " +
                             std::to_string(r.offset()));
  }
  ds.validate();
  return ds;
}

}  // namespace masslearn
