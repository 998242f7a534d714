#include "masslearn/diffcore.hpp"

#include "grad_cases.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>

using namespace masslearn;
using namespace masslearn::testing;
namespace ad = masslearn::ad;

namespace {

double eval_scalar(const std::function<ad::Var(ad::Graph&)>& build) {
  ad::Graph g;
  return build(g).value().item();
}

}  // namespace

TEST(Elu, ZeroIsZero) {
  ad::Graph g;
  EXPECT_EQ(ad::elu(g.constant(Tensor::scalar(0.0))).value().item(), 0.0);
}

TEST(Elu, IdentityOnPositiveAxis) {
  ad::Graph g;
  EXPECT_EQ(ad::elu(g.constant(Tensor::scalar(2.5))).value().item(), 2.5);
}

TEST(Elu, NegativeOneMatchesExtendedPrecision) {
  ad::Graph g;
  const long double oracle = std::exp(-1.0L) - 1.0L;
  const double v = ad::elu(g.constant(Tensor::scalar(-1.0))).value().item();
  EXPECT_NEAR(v, static_cast<double>(oracle), 1e-16);
  EXPECT_NEAR(v, -0.63212, 1e-5);
}

TEST(Elu, DerivativeAtZeroIsOne) {
  ad::Graph g;
  ad::Var x = g.leaf(Tensor::scalar(0.0));
  EXPECT_EQ(g.backward(ad::elu(x))[x].item(), 1.0);
  EXPECT_EQ(ad::elu_derivative(g.constant(Tensor::scalar(0.0))).value().item(), 1.0);
}

TEST(Logsumexp, SingleElementIsExact) {
  for (double a : {-3.25, 0.0, 17.125, 1e300}) {
    ad::Graph g;
    EXPECT_EQ(ad::logsumexp(g.constant(Tensor::vector({a}))).value().item(), a);
  }
}

TEST(Logsumexp, TwoZerosIsLogTwo) {
  ad::Graph g;
  EXPECT_NEAR(ad::logsumexp(g.constant(Tensor::vector({0.0, 0.0}))).value().item(), std::numbers::ln2,
              1e-15);
}

TEST(Logsumexp, LargeValuesDoNotOverflow) {
  ad::Graph g;
  const double v = ad::logsumexp(g.constant(Tensor::vector({1000.0, 1000.0}))).value().item();
  EXPECT_NEAR(v, 1000.0 + std::numbers::ln2, 1e-12);
}

TEST(Logsumexp, EmptyInputIsAnError) {
  ad::Graph g;
  try {
    ad::logsumexp(g.constant(Tensor::vector({})));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "empty reduction");
  }
}

TEST(LogdetSpd, IdentityIsZero) {
  EXPECT_EQ(ad::logdet_spd(Tensor::identity(3)), 0.0);
}

TEST(LogdetSpd, DiagonalIsLogProduct) {
  EXPECT_NEAR(ad::logdet_spd(Tensor::matrix(2, 2, {4, 0, 0, 9})), std::log(4.0L * 9.0L), 1e-14);
}

TEST(LogdetSpd, TwoByTwoByHand) {
  const Tensor m = Tensor::matrix(2, 2, {2, 1, 1, 2});
  const long double det = 2.0L * 2.0L - 1.0L * 1.0L;
  EXPECT_NEAR(ad::logdet_spd(m), static_cast<double>(std::log(det)), 1e-14);
  EXPECT_NEAR(ad::logdet_spd(m), 1.09861, 1e-5);
}

TEST(LogdetSpd, NonPositivePivotIsAnError) {
  try {
    ad::logdet_spd(Tensor::matrix(2, 2, {1, 2, 2, 1}));
    FAIL();
  } catch (const ad::NotPositiveDefinite& e) {
    EXPECT_STREQ(e.what(), "not positive definite");
  }
  ad::Graph g;
  const std::size_t before = g.size();
  ad::Var m = g.constant(Tensor::matrix(2, 2, {0, 0, 0, 0}));
  EXPECT_THROW(ad::logdet_spd(m), ad::NotPositiveDefinite);
  EXPECT_EQ(g.size(), before + 1);
}

TEST(Backward, SumGivesOnes) {
  ad::Graph g;
  ad::Var x = g.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  const Tensor grad = g.backward(ad::sum(x))[x];
  EXPECT_EQ(grad, Tensor::full({2, 3}, 1.0));
}

TEST(Backward, DotGivesOtherOperand) {
  ad::Graph g;
  const Tensor xv = Tensor::vector({0.5, -2.0, 3.0});
  ad::Var w = g.leaf(Tensor::vector({1.0, 1.0, 1.0}));
  ad::Var x = g.constant(xv);
  EXPECT_EQ(g.backward(ad::dot(w, x))[w], xv);
}

TEST(Backward, LogdetOfGramAtIdentityMatchesFiniteDifferences) {
  auto f = [](const Tensor& a) {
    ad::Graph g;
    ad::Var av = g.constant(a);
    return ad::logdet_spd(ad::matmul_nt(av, av)).value().item();
  };
  ad::Graph g;
  ad::Var a = g.leaf(Tensor::identity(2));
  const Tensor analytic = g.backward(ad::logdet_spd(ad::matmul_nt(a, a)))[a];
  const Tensor numeric = numeric_gradient(f, Tensor::identity(2), 1e-6);
  EXPECT_LT(max_abs_diff(analytic, numeric), 1e-8);
  Tensor two_i = Tensor::identity(2);
  for (double& v : two_i.data()) v *= 2.0;
  EXPECT_LT(max_abs_diff(numeric, two_i), 1e-8);
}

TEST(Backward, NonScalarOutputIsAnError) {
  ad::Graph g;
  ad::Var x = g.leaf(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(g.backward(ad::exp(x)), std::invalid_argument);
}

TEST(Backward, UnusedLeafGetsZeros) {
  ad::Graph g;
  ad::Var x = g.leaf(Tensor::vector({1.0, 2.0}));
  ad::Var unused = g.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const ad::Gradients grads = g.backward(ad::sum(x));
  EXPECT_EQ(grads[unused], Tensor::zeros({2, 2}));
}

TEST(Backward, LeafUsedTwiceSumsBothPaths) {
  // f(x) = x * x + 3 x; the paths give 2x and 3.
  ad::Graph g;
  ad::Var x = g.leaf(Tensor::scalar(1.75));
  ad::Var out = ad::add(ad::mul(x, x), ad::scale(x, 3.0));
  EXPECT_DOUBLE_EQ(g.backward(out)[x].item(), 2.0 * 1.75 + 3.0);
}

TEST(Backward, ConstantsAreNotInGradientMap) {
  ad::Graph g;
  ad::Var c = g.constant(Tensor::scalar(2.0));
  ad::Var x = g.leaf(Tensor::scalar(3.0));
  const ad::Gradients grads = g.backward(ad::mul(c, x));
  EXPECT_FALSE(grads.contains(c));
  EXPECT_THROW(grads[c], std::out_of_range);
}

TEST(GradCheck, LinearMapIsExact) {
  Rng rng(5);
  const Tensor point = random_tensor({6}, rng);
  const double err = ad::grad_check([](ad::Graph&, ad::Var x) { return weighted(x); }, point, 1e-5);
  EXPECT_LE(err, 1e-9);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
  const double err = ad::grad_check(
      [](ad::Graph& g, ad::Var) { return g.constant(Tensor::scalar(4.0)); }, Tensor::vector({1, 2}),
      1e-5);
  EXPECT_EQ(err, 0.0);
}

TEST(GradCheck, EluMlpScalarHead) {
  // 3 -> 4 -> 1 with the input as the leaf.
  Rng rng(11);
  const Tensor w1 = random_tensor({4, 3}, rng);
  const Tensor b1 = random_tensor({4}, rng);
  const Tensor w2 = random_tensor({1, 4}, rng);
  auto build = [&](ad::Graph& g, ad::Var x) {
    ad::Var h = ad::elu(ad::add_bias(ad::matmul_nt(ad::reshape(x, {1, 3}), g.constant(w1)), g.constant(b1)));
    return ad::sum(ad::matmul_nt(h, g.constant(w2)));
  };
  for (int trial = 0; trial < 5; ++trial) {
    EXPECT_LE(ad::grad_check(build, random_tensor({3}, rng, -2, 2), 1e-5), 1e-5);
  }
}

TEST(GradCheck, NonFiniteValueIsAnError) {
  EXPECT_THROW(ad::grad_check([](ad::Graph&, ad::Var x) { return ad::sum(ad::log(x)); },
                              Tensor::vector({-1.0}), 1e-5),
               std::domain_error);
}

TEST(Property, EveryPrimitivePassesGradCheckAtTwentySeededPoints) {
  for (const auto& [name, c] : primitive_cases()) {
    Rng rng(Rng::stream(2024, name).next_u64());
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      worst = std::max(worst, ad::grad_check(c.build, random_tensor({c.size}, rng, c.lo, c.hi), 1e-5));
    }
    EXPECT_LE(worst, 1e-5) << name;
  }
}

TEST(Property, LogdetOfCholeskyProductIsTwiceLogDiagonal) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    Tensor l({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < i; ++j) l.at(i, j) = rng.uniform(-1, 1);
      l.at(i, i) = rng.uniform(0.5, 2.0);
    }
    double oracle = 0.0;
    for (std::size_t i = 0; i < n; ++i) oracle += 2.0 * std::log(l.at(i, i));
    EXPECT_NEAR(ad::logdet_spd(naive_matmul(l, transpose(l))), oracle, 1e-12);
  }
}

TEST(Property, LogdetMatchesCofactorDeterminant) {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor({4, 4}, rng);
    Tensor m = naive_matmul(a, transpose(a));
    for (std::size_t i = 0; i < 4; ++i) m.at(i, i) += 0.5;
    EXPECT_NEAR(ad::logdet_spd(m), static_cast<double>(std::log(cofactor_det(m))), 1e-12);
  }
}

TEST(Property, OpsAreBitDeterministic) {
  for (const auto& [name, c] : primitive_cases()) {
    Rng rng(3);
    const Tensor point = random_tensor({c.size}, rng, c.lo, c.hi);
    Tensor first;
    Tensor second;
    for (Tensor* out : {&first, &second}) {
      ad::Graph g;
      ad::Var x = g.leaf(point);
      *out = g.backward(c.build(g, x))[x];
    }
    EXPECT_EQ(first, second) << name;
  }
}

TEST(TriSolve, SolvesLowerSystem) {
  const Tensor l = Tensor::matrix(2, 2, {2, 0, 1, 4});
  const Tensor b = Tensor::matrix(2, 1, {4, 6});
  ad::Graph g;
  const Tensor x = ad::tri_solve_lower(g.constant(l), g.constant(b)).value();
  EXPECT_DOUBLE_EQ(x[0], 2.0);
  EXPECT_DOUBLE_EQ(x[1], 1.0);
}

TEST(CholFromRaw, LowerTriangleWithSoftplusDiagonal) {
  ad::Graph g;
  const Tensor c = ad::chol_from_raw(g.constant(Tensor::matrix(2, 2, {0, 5, -1, 1}))).value();
  EXPECT_DOUBLE_EQ(c.at(0, 0), std::log(2.0));
  EXPECT_EQ(c.at(0, 1), 0.0);
  EXPECT_EQ(c.at(1, 0), -1.0);
  EXPECT_DOUBLE_EQ(c.at(1, 1), std::log1p(std::exp(1.0)));
}

TEST(Softplus, InverseRoundTrips) {
  for (double y : {1e-6, 0.3, 1.0, 7.5, 40.0}) {
    EXPECT_NEAR(ad::softplus(ad::softplus_inverse(y)), y, 1e-12 * std::max(1.0, y));
  }
}

TEST(Shapes, MismatchIsAnError) {
  ad::Graph g;
  EXPECT_THROW(ad::add(g.constant(Tensor::zeros({2, 3})), g.constant(Tensor::zeros({3, 2}))),
               std::invalid_argument);
  EXPECT_THROW(ad::matmul(g.constant(Tensor::zeros({2, 3})), g.constant(Tensor::zeros({2, 3}))),
               std::invalid_argument);
  EXPECT_THROW(ad::slice(g.constant(Tensor::zeros({4})), 2, 3), std::invalid_argument);
  EXPECT_NEAR(eval_scalar([](ad::Graph& gg) { return ad::mean(gg.constant(Tensor::vector({1, 2, 3}))); }),
              2.0, 0.0);
}
