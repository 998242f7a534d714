#pragma once

// Conserved differential information C(X, f(X)) = H(f(X)) - E[log J_f(X)]
// for closed-form maps, the data processing check, and quantised mutual
// information.

#include "masslearn/rng.hpp"
#include "masslearn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace masslearn {

// psi(n) for integer n >= 1.
double digamma_int(std::size_t n);
// log of the volume of the unit Euclidean ball in R^m.
double log_unit_ball_volume(std::size_t m);

// Kozachenko-Leonenko estimate in nats:
//   psi(n) - psi(k) + log V_m + (m / n) sum_i log rho_k(i).
// Exact duplicate rows are moved apart by a 1e-12 relative offset derived
// from the row index; duplicates that survive raise std::invalid_argument.
double knn_entropy(const Tensor& samples, std::size_t k);

// Distance from every row to its k-th nearest other row.
std::vector<double> knn_distances(const Tensor& samples, std::size_t k);

struct AnalyticMap {
  std::string name;
  std::size_t dim_in = 1;
  std::size_t dim_out = 1;
  std::function<void(std::span<const double> x, std::span<double> y)> eval;
  // dim_out x dim_in
  std::function<Tensor(std::span<const double> x)> jacobian;
  std::function<double(std::span<const double> x)> log_jacobian;
  bool invertible = false;
  // Closed-form C(X, f(X)) for X ~ N(0, I), when known.
  std::optional<double> reference;

  Tensor apply(const Tensor& x) const;
};

// Maps on R (dim 1) unless noted:
//   identity, double (2x), half (x/2), affine (3x + 1), cube (x^3),
//   identity2 and shear2 ([[2, 1], [0, 1]]) on R^2     -- invertible
//   abs (|x|), square (x^2), projection (x1 + x2, R^2 -> R) -- not invertible
// half and abs stand in for the two functions of the paper's Figure 1,
// whose formulas are not given there.
const std::vector<AnalyticMap>& map_catalog();
const AnalyticMap& catalog_map(const std::string& name);

AnalyticMap translate(const AnalyticMap& f, double offset);

// g after f. log J uses the chain rule when g is square and the product
// Jacobian otherwise.
AnalyticMap compose(const AnalyticMap& f, const AnalyticMap& g);

double expected_log_jacobian(const AnalyticMap& f, const Tensor& samples);

using Sampler = std::function<Tensor(std::size_t n, Rng& rng)>;
Sampler standard_normal_sampler(std::size_t dim);
Sampler uniform_sampler(std::size_t dim);

inline constexpr std::size_t kCdiFolds = 10;

struct CdiEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
  std::size_t k = 0;
  double entropy = 0.0;            // H(f(X)) on all samples
  double mean_log_jacobian = 0.0;  // E[log J_f]
};

CdiEstimate cdi_estimate(const AnalyticMap& f, const Tensor& samples, std::size_t k);
// Draws n samples from `sampler` on Rng(seed).
CdiEstimate cdi_estimate(const AnalyticMap& f, const Sampler& sampler, std::size_t n,
                         std::size_t k, std::uint64_t seed);

enum class DpiVerdict { strict, equal, violation };
std::string to_string(DpiVerdict verdict);

struct DpiReport {
  CdiEstimate first;    // C(X, f(X))
  CdiEstimate second;   // C(X, g(f(X)))
  double gap = 0.0;     // first - second
  double sigma = 0.0;   // sqrt(se_f^2 + se_gf^2)
  DpiVerdict verdict = DpiVerdict::violation;
};

// Both estimates share one draw of X.
DpiReport dpi_check(const AnalyticMap& f, const AnalyticMap& g, const Sampler& sampler,
                    std::size_t n, std::size_t k, std::uint64_t seed);
DpiVerdict dpi_verdict(double gap, double sigma, bool g_invertible);

// Demonstration pairs for the data processing check, X ~ N(0, I).
struct DpiPair {
  std::string first;
  std::string second;
  DpiVerdict expected;
  double reference_gap = 0.0;
};
const std::vector<DpiPair>& dpi_pairs();

// Plug-in mutual information (nats) of equal-mass bins. Ranks break ties by
// index.
double quantized_mi(std::span<const double> x, std::span<const double> y, std::size_t bins);

}  // namespace masslearn
