#include "masslearn/cdi.hpp"

#include "masslearn/diffcore.hpp"
#include "masslearn/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace masslearn {

namespace {

constexpr std::size_t kBruteForceLimit = 20000;
constexpr double kDuplicateJitter = 1e-12;

const double kGaussianEntropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);

// Keeps the k smallest squared distances seen so far, ascending.
struct TopK {
  explicit TopK(std::size_t k) : k(k) { best.reserve(k + 1); }
  void offer(double d2) {
    if (best.size() == k && d2 >= best.back()) return;
    best.insert(std::upper_bound(best.begin(), best.end(), d2), d2);
    if (best.size() > k) best.pop_back();
  }
  bool full() const { return best.size() == k; }
  double kth() const { return best.back(); }
  std::size_t k;
  std::vector<double> best;
};

double squared_distance(const double* a, const double* b, std::size_t m) {
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

std::vector<double> knn_sorted_1d(const Tensor& x, std::size_t k) {
  const std::size_t n = x.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> v(n);
  for (std::size_t p = 0; p < n; ++p) v[p] = x[order[p]];
  std::vector<double> out(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t left = p;
    std::size_t right = p + 1;
    double dist = 0.0;
    for (std::size_t taken = 0; taken < k; ++taken) {
      const double dl = left > 0 ? v[p] - v[left - 1] : INFINITY;
      const double dr = right < n ? v[right] - v[p] : INFINITY;
      if (dl <= dr) {
        dist = dl;
        --left;
      } else {
        dist = dr;
        ++right;
      }
    }
    out[order[p]] = dist;
  }
  return out;
}

std::vector<double> knn_brute(const Tensor& x, std::size_t k) {
  const std::size_t n = x.rows();
  const std::size_t m = x.cols();
  const double* data = x.data().data();
  std::vector<double> out(n);
  parallel_for(n, [&](std::size_t i) {
    TopK top(k);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) top.offer(squared_distance(data + i * m, data + j * m, m));
    }
    out[i] = std::sqrt(top.kth());
  });
  return out;
}

std::vector<double> knn_grid(const Tensor& x, std::size_t k) {
  const std::size_t n = x.rows();
  const std::size_t m = x.cols();
  const double* data = x.data().data();
  std::vector<double> lo(m, INFINITY);
  std::vector<double> hi(m, -INFINITY);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      lo[j] = std::min(lo[j], data[i * m + j]);
      hi[j] = std::max(hi[j], data[i * m + j]);
    }
  }
  const auto per_dim = static_cast<std::size_t>(
      std::max(1.0, std::floor(std::pow(static_cast<double>(n) / 2.0, 1.0 / static_cast<double>(m)))));
  std::vector<std::size_t> cells(m, per_dim);
  std::vector<double> width(m);
  std::vector<std::size_t> stride(m);
  double min_width = INFINITY;
  std::size_t total = 1;
  for (std::size_t j = 0; j < m; ++j) {
    width[j] = std::max((hi[j] - lo[j]) / static_cast<double>(cells[j]), 1e-300);
    min_width = std::min(min_width, width[j]);
    stride[j] = total;
    total *= cells[j];
  }
  auto coord = [&](std::size_t i, std::size_t j) {
    const double t = (data[i * m + j] - lo[j]) / width[j];
    return std::min(cells[j] - 1, static_cast<std::size_t>(std::max(0.0, t)));
  };
  std::vector<std::size_t> cell_of(n);
  std::vector<std::size_t> start(total + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < m; ++j) c += coord(i, j) * stride[j];
    cell_of[i] = c;
    ++start[c + 1];
  }
  for (std::size_t c = 0; c < total; ++c) start[c + 1] += start[c];
  std::vector<std::size_t> members(n);
  {
    std::vector<std::size_t> fill(start.begin(), start.end() - 1);
    for (std::size_t i = 0; i < n; ++i) members[fill[cell_of[i]]++] = i;
  }
  const std::size_t max_ring = *std::max_element(cells.begin(), cells.end());

  std::vector<double> out(n);
  parallel_for(n, [&](std::size_t i) {
    std::vector<long> home(m);
    for (std::size_t j = 0; j < m; ++j) home[j] = static_cast<long>(coord(i, j));
    TopK top(k);
    std::vector<long> offset(m);
    for (std::size_t ring = 0; ring <= max_ring; ++ring) {
      const long rr = static_cast<long>(ring);
      std::fill(offset.begin(), offset.end(), -rr);
      while (true) {
        bool on_shell = false;
        bool inside = true;
        std::size_t c = 0;
        for (std::size_t j = 0; j < m; ++j) {
          if (offset[j] == rr || offset[j] == -rr) on_shell = true;
          const long cj = home[j] + offset[j];
          if (cj < 0 || cj >= static_cast<long>(cells[j])) {
            inside = false;
          } else {
            c += static_cast<std::size_t>(cj) * stride[j];
          }
        }
        if (inside && (on_shell || ring == 0)) {
          for (std::size_t p = start[c]; p < start[c + 1]; ++p) {
            const std::size_t other = members[p];
            if (other != i) top.offer(squared_distance(data + i * m, data + other * m, m));
          }
        }
        std::size_t j = 0;
        for (; j < m; ++j) {
          if (offset[j] < rr) {
            ++offset[j];
            break;
          }
          offset[j] = -rr;
        }
        if (j == m) break;
      }
      if (top.full()) {
        const double reach = static_cast<double>(ring) * min_width;
        if (top.kth() <= reach * reach) break;
      }
    }
    out[i] = std::sqrt(top.kth());
  });
  return out;
}

bool has_duplicate_rows(const Tensor& x, std::vector<std::size_t>* duplicates) {
  const std::size_t n = x.rows();
  const std::size_t m = x.cols();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    const auto ra = x.row(a);
    const auto rb = x.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::stable_sort(order.begin(), order.end(), less);
  bool found = false;
  for (std::size_t p = 1; p < n; ++p) {
    const auto a = x.row(order[p - 1]);
    const auto b = x.row(order[p]);
    if (std::equal(a.begin(), a.end(), b.begin(), b.begin() + static_cast<std::ptrdiff_t>(m))) {
      found = true;
      if (duplicates) duplicates->push_back(order[p]);
    }
  }
  return found;
}

Tensor scalar_matrix(double v) { return Tensor::matrix(1, 1, {v}); }

AnalyticMap scalar_map(std::string name, std::function<double(double)> f,
                       std::function<double(double)> derivative, std::function<double(double)> log_j,
                       bool invertible, double reference) {
  AnalyticMap map;
  map.name = std::move(name);
  map.eval = [f](std::span<const double> x, std::span<double> y) { y[0] = f(x[0]); };
  map.jacobian = [derivative](std::span<const double> x) { return scalar_matrix(derivative(x[0])); };
  map.log_jacobian = [log_j](std::span<const double> x) { return log_j(x[0]); };
  map.invertible = invertible;
  map.reference = reference;
  return map;
}

AnalyticMap linear_map(std::string name, Tensor a, bool invertible, double reference) {
  AnalyticMap map;
  map.name = std::move(name);
  map.dim_in = a.cols();
  map.dim_out = a.rows();
  map.eval = [a](std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) s += a.at(i, j) * x[j];
      y[i] = s;
    }
  };
  map.jacobian = [a](std::span<const double>) { return a; };
  const double log_j = 0.5 * ad::logdet_spd(matmul(a, a, false, true));
  map.log_jacobian = [log_j](std::span<const double>) { return log_j; };
  map.invertible = invertible;
  map.reference = reference;
  return map;
}

std::vector<AnalyticMap> build_catalog() {
  const double h1 = kGaussianEntropy;
  const double ln2 = std::numbers::ln2;
  const double ln3 = std::log(3.0);
  std::vector<AnalyticMap> maps;
  maps.push_back(scalar_map(
      "identity", [](double x) { return x; }, [](double) { return 1.0; },
      [](double) { return 0.0; }, true, h1));
  maps.push_back(scalar_map(
      "double", [](double x) { return 2.0 * x; }, [](double) { return 2.0; },
      [ln2](double) { return ln2; }, true, h1));
  maps.push_back(scalar_map(
      "half", [](double x) { return 0.5 * x; }, [](double) { return 0.5; },
      [ln2](double) { return -ln2; }, true, h1));
  maps.push_back(scalar_map(
      "affine", [](double x) { return 3.0 * x + 1.0; }, [](double) { return 3.0; },
      [ln3](double) { return ln3; }, true, h1));
  maps.push_back(scalar_map(
      "cube", [](double x) { return x * x * x; }, [](double x) { return 3.0 * x * x; },
      [ln3](double x) { return ln3 + 2.0 * std::log(std::abs(x)); }, true, h1));
  maps.push_back(linear_map("identity2", Tensor::identity(2), true, 2.0 * h1));
  maps.push_back(linear_map("shear2", Tensor::matrix(2, 2, {2.0, 1.0, 0.0, 1.0}), true, 2.0 * h1));
  maps.push_back(scalar_map(
      "abs", [](double x) { return std::abs(x); }, [](double x) { return x < 0.0 ? -1.0 : 1.0; },
      [](double) { return 0.0; }, false, h1 - ln2));
  maps.push_back(scalar_map(
      "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; },
      [ln2](double x) { return ln2 + std::log(std::abs(x)); }, false, h1 - ln2));
  maps.push_back(linear_map("projection", Tensor::matrix(1, 2, {1.0, 1.0}), false, h1));
  return maps;
}

}  // namespace

double digamma_int(std::size_t n) {
  if (n == 0) throw std::invalid_argument("digamma_int: n must be >= 1");
  double s = -std::numbers::egamma;
  for (std::size_t j = 1; j < n; ++j) s += 1.0 / static_cast<double>(j);
  return s;
}

double log_unit_ball_volume(std::size_t m) {
  const double half = 0.5 * static_cast<double>(m);
  return half * std::log(std::numbers::pi) - std::lgamma(half + 1.0);
}

std::vector<double> knn_distances(const Tensor& samples, std::size_t k) {
  if (samples.rank() != 2) throw std::invalid_argument("knn: samples must be n x m");
  const std::size_t n = samples.rows();
  const std::size_t m = samples.cols();
  if (k == 0 || n <= k) throw std::invalid_argument("knn: need n > k >= 1");
  if (m == 1) return knn_sorted_1d(samples, k);
  if (n <= kBruteForceLimit || m > 3) return knn_brute(samples, k);
  return knn_grid(samples, k);
}

double knn_entropy(const Tensor& samples, std::size_t k) {
  if (samples.rank() != 2) throw std::invalid_argument("knn_entropy: samples must be n x m");
  if (!samples.all_finite()) throw std::invalid_argument("knn_entropy: non-finite samples");
  const std::size_t n = samples.rows();
  const std::size_t m = samples.cols();
  if (k == 0 || n <= k) throw std::invalid_argument("knn_entropy: need n > k >= 1");

  const Tensor* x = &samples;
  Tensor jittered;
  std::vector<std::size_t> duplicates;
  if (has_duplicate_rows(samples, &duplicates)) {
    jittered = samples;
    for (std::size_t i : duplicates) {
      auto row = jittered.row(i);
      for (std::size_t j = 0; j < m; ++j) {
        const std::uint64_t h = splitmix64(static_cast<std::uint64_t>(i) * m + j);
        const double u = 1.0 + static_cast<double>(h >> 11) * 0x1.0p-53;
        const double sign = (h & 1) ? 1.0 : -1.0;
        row[j] += sign * u * kDuplicateJitter * std::max(1.0, std::abs(row[j]));
      }
    }
    if (has_duplicate_rows(jittered, nullptr)) {
      throw std::invalid_argument("knn_entropy: duplicate samples remain after jitter");
    }
    x = &jittered;
  }

  const std::vector<double> rho = knn_distances(*x, k);
  double log_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(rho[i] > 0.0)) {
      throw std::invalid_argument("knn_entropy: zero neighbour distance at sample " + std::to_string(i));
    }
    log_sum += std::log(rho[i]);
  }
  return digamma_int(n) - digamma_int(k) + log_unit_ball_volume(m) +
         static_cast<double>(m) * log_sum / static_cast<double>(n);
}

Tensor AnalyticMap::apply(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != dim_in) {
    throw std::invalid_argument("map '" + name + "' expects n x " + std::to_string(dim_in) +
                                " input, got " + shape_string(x.shape()));
  }
  Tensor y({x.rows(), dim_out});
  for (std::size_t i = 0; i < x.rows(); ++i) eval(x.row(i), y.row(i));
  return y;
}

const std::vector<AnalyticMap>& map_catalog() {
  static const std::vector<AnalyticMap> catalog = build_catalog();
  return catalog;
}

const AnalyticMap& catalog_map(const std::string& name) {
  for (const AnalyticMap& map : map_catalog()) {
    if (map.name == name) return map;
  }
  throw std::invalid_argument("unknown map '" + name + "'");
}

AnalyticMap translate(const AnalyticMap& f, double offset) {
  AnalyticMap out = f;
  out.name = f.name + "+" + std::to_string(offset);
  out.eval = [inner = f.eval, offset](std::span<const double> x, std::span<double> y) {
    inner(x, y);
    for (double& v : y) v += offset;
  };
  return out;
}

AnalyticMap compose(const AnalyticMap& f, const AnalyticMap& g) {
  if (g.dim_in != f.dim_out) {
    throw std::invalid_argument("compose: '" + g.name + "' takes dimension " +
                                std::to_string(g.dim_in) + " but '" + f.name + "' gives " +
                                std::to_string(f.dim_out));
  }
  AnalyticMap out;
  out.name = g.name + "(" + f.name + ")";
  out.dim_in = f.dim_in;
  out.dim_out = g.dim_out;
  const std::size_t mid = f.dim_out;
  out.eval = [f, g, mid](std::span<const double> x, std::span<double> y) {
    std::vector<double> z(mid);
    f.eval(x, z);
    g.eval(z, y);
  };
  out.jacobian = [f, g, mid](std::span<const double> x) {
    std::vector<double> z(mid);
    f.eval(x, z);
    return matmul(g.jacobian(z), f.jacobian(x));
  };
  if (g.dim_in == g.dim_out) {
    out.log_jacobian = [f, g, mid](std::span<const double> x) {
      std::vector<double> z(mid);
      f.eval(x, z);
      return g.log_jacobian(z) + f.log_jacobian(x);
    };
  } else {
    out.log_jacobian = [jac = out.jacobian](std::span<const double> x) {
      const Tensor d = jac(x);
      try {
        return 0.5 * ad::logdet_spd(matmul(d, d, false, true));
      } catch (const ad::NotPositiveDefinite&) {
        return -std::numeric_limits<double>::infinity();
      }
    };
  }
  out.invertible = f.invertible && g.invertible;
  if (g.invertible) out.reference = f.reference;
  return out;
}

double expected_log_jacobian(const AnalyticMap& f, const Tensor& samples) {
  if (samples.rank() != 2 || samples.cols() != f.dim_in || samples.rows() == 0) {
    throw std::invalid_argument("expected_log_jacobian: map '" + f.name + "' expects n x " +
                                std::to_string(f.dim_in) + " samples");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const double v = f.log_jacobian(samples.row(i));
    if (!std::isfinite(v)) {
      throw std::domain_error("log-Jacobian of '" + f.name + "' is not finite at sample " +
                              std::to_string(i));
    }
    s += v;
  }
  return s / static_cast<double>(samples.rows());
}

Sampler standard_normal_sampler(std::size_t dim) {
  return [dim](std::size_t n, Rng& rng) {
    Tensor x({n, dim});
    for (double& v : x.data()) v = rng.normal();
    return x;
  };
}

Sampler uniform_sampler(std::size_t dim) {
  return [dim](std::size_t n, Rng& rng) {
    Tensor x({n, dim});
    for (double& v : x.data()) v = rng.uniform();
    return x;
  };
}

CdiEstimate cdi_estimate(const AnalyticMap& f, const Tensor& samples, std::size_t k) {
  const std::size_t n = samples.rows();
  if (n < 1000) throw std::invalid_argument("cdi_estimate: need n >= 1000 samples");
  const Tensor mapped = f.apply(samples);
  const std::size_t fold = n / kCdiFolds;
  if (fold <= k) throw std::invalid_argument("cdi_estimate: folds smaller than k + 1");

  // Job 0 is the full sample; jobs 1..10 the contiguous folds.
  std::vector<double> entropy(kCdiFolds + 1);
  std::vector<double> log_j(kCdiFolds + 1);
  parallel_for(kCdiFolds + 1, [&](std::size_t job) {
    const std::size_t begin = job == 0 ? 0 : (job - 1) * fold;
    const std::size_t count = job == 0 ? n : fold;
    Tensor y({count, mapped.cols()});
    Tensor x({count, samples.cols()});
    std::copy_n(mapped.data().begin() + static_cast<std::ptrdiff_t>(begin * mapped.cols()),
                count * mapped.cols(), y.data().begin());
    std::copy_n(samples.data().begin() + static_cast<std::ptrdiff_t>(begin * samples.cols()),
                count * samples.cols(), x.data().begin());
    entropy[job] = knn_entropy(y, k);
    log_j[job] = expected_log_jacobian(f, x);
  });

  CdiEstimate est;
  est.n_samples = n;
  est.k = k;
  est.entropy = entropy[0];
  est.mean_log_jacobian = log_j[0];
  est.value = entropy[0] - log_j[0];
  double mean = 0.0;
  for (std::size_t j = 1; j <= kCdiFolds; ++j) mean += entropy[j] - log_j[j];
  mean /= static_cast<double>(kCdiFolds);
  double ss = 0.0;
  for (std::size_t j = 1; j <= kCdiFolds; ++j) {
    const double d = entropy[j] - log_j[j] - mean;
    ss += d * d;
  }
  const double folds = static_cast<double>(kCdiFolds);
  est.std_error = std::sqrt(ss / (folds - 1.0) / folds);
  return est;
}

CdiEstimate cdi_estimate(const AnalyticMap& f, const Sampler& sampler, std::size_t n,
                         std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  return cdi_estimate(f, sampler(n, rng), k);
}

std::string to_string(DpiVerdict verdict) {
  switch (verdict) {
    case DpiVerdict::strict:
      return "strict";
    case DpiVerdict::equal:
      return "equal";
    case DpiVerdict::violation:
      break;
  }
  return "violation";
}

DpiVerdict dpi_verdict(double gap, double sigma, bool g_invertible) {
  if (gap > 3.0 * sigma) return DpiVerdict::strict;
  if (std::abs(gap) < 3.0 * sigma && g_invertible) return DpiVerdict::equal;
  return DpiVerdict::violation;
}

DpiReport dpi_check(const AnalyticMap& f, const AnalyticMap& g, const Sampler& sampler,
                    std::size_t n, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor x = sampler(n, rng);
  DpiReport report;
  report.first = cdi_estimate(f, x, k);
  report.second = cdi_estimate(compose(f, g), x, k);
  report.gap = report.first.value - report.second.value;
  report.sigma = std::hypot(report.first.std_error, report.second.std_error);
  report.verdict = dpi_verdict(report.gap, report.sigma, g.invertible);
  return report;
}

const std::vector<DpiPair>& dpi_pairs() {
  static const std::vector<DpiPair> pairs = {
      {"identity", "affine", DpiVerdict::equal, 0.0},
      {"double", "cube", DpiVerdict::equal, 0.0},
      {"half", "double", DpiVerdict::equal, 0.0},
      {"identity2", "shear2", DpiVerdict::equal, 0.0},
      {"identity", "abs", DpiVerdict::strict, std::numbers::ln2},
      {"identity", "square", DpiVerdict::strict, std::numbers::ln2},
      {"double", "abs", DpiVerdict::strict, std::numbers::ln2},
      {"half", "square", DpiVerdict::strict, std::numbers::ln2},
      {"shear2", "projection", DpiVerdict::strict, kGaussianEntropy},
  };
  return pairs;
}

double quantized_mi(std::span<const double> x, std::span<const double> y, std::size_t bins) {
  if (bins < 2) throw std::invalid_argument("quantized_mi: bins must be >= 2");
  if (x.size() != y.size()) throw std::invalid_argument("quantized_mi: x and y differ in length");
  const std::size_t n = x.size();
  if (n == 0) throw std::invalid_argument("quantized_mi: no samples");
  auto bin_of = [&](std::span<const double> v) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<std::size_t> bin(n);
    for (std::size_t rank = 0; rank < n; ++rank) bin[order[rank]] = rank * bins / n;
    return bin;
  };
  const std::vector<std::size_t> bx = bin_of(x);
  const std::vector<std::size_t> by = bin_of(y);
  std::vector<double> joint(bins * bins, 0.0);
  std::vector<double> px(bins, 0.0);
  std::vector<double> py(bins, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    joint[bx[i] * bins + by[i]] += 1.0;
    px[bx[i]] += 1.0;
    py[by[i]] += 1.0;
  }
  const double total = static_cast<double>(n);
  double mi = 0.0;
  for (std::size_t a = 0; a < bins; ++a) {
    for (std::size_t b = 0; b < bins; ++b) {
      const double c = joint[a * bins + b];
      if (c > 0.0) mi += c / total * std::log(c * total / (px[a] * py[b]));
    }
  }
  return mi;
}

}  // namespace masslearn
