#include "masslearn/tensor.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace masslearn;
using namespace masslearn::testing;

TEST(Tensor, ShapeAndSize) {
  const Tensor t({2, 3, 4});
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(shape_size({2, 3, 4}), 24u);
  EXPECT_EQ(shape_string({2, 3}), "[2x3]");
  for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, ScalarHasRankZero) {
  const Tensor s = Tensor::scalar(1.5);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(s.item(), 1.5);
}

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  EXPECT_THROW(Tensor::vector({1, 2}).item(), std::invalid_argument);
}

TEST(Tensor, RowMajorLayout) {
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.at(1, 0), 4.0);
  EXPECT_EQ(m.row(1)[2], 6.0);
  EXPECT_EQ(transpose(m).at(2, 1), 6.0);
}

TEST(Tensor, ReshapeKeepsData) {
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const Tensor r = m.reshaped({3, 2});
  EXPECT_EQ(r.values(), m.values());
  EXPECT_THROW(m.reshaped({4, 2}), std::invalid_argument);
}

TEST(Tensor, AllFinite) {
  Tensor t = Tensor::vector({1, 2});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}

TEST(Matmul, MatchesNaiveProductWithTransposes) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(7), k = 1 + rng.below(7), m = 1 + rng.below(7);
    const Tensor a = random_tensor({n, k}, rng);
    const Tensor b = random_tensor({k, m}, rng);
    const Tensor oracle = naive_matmul(a, b);
    EXPECT_LT(max_abs_diff(matmul(a, b), oracle), 1e-13);
    EXPECT_LT(max_abs_diff(matmul(transpose(a), b, true, false), oracle), 1e-13);
    EXPECT_LT(max_abs_diff(matmul(a, transpose(b), false, true), oracle), 1e-13);
    EXPECT_LT(max_abs_diff(matmul(transpose(a), transpose(b), true, true), oracle), 1e-13);
  }
}

TEST(Matmul, AccumulateAdds) {
  const Tensor a = Tensor::identity(2);
  Tensor c = Tensor::full({2, 2}, 1.0);
  matmul_accumulate(a, a, c, false, false);
  EXPECT_EQ(c, Tensor::matrix(2, 2, {2, 1, 1, 2}));
}

TEST(Matmul, ShapeMismatchIsAnError) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), std::invalid_argument);
  EXPECT_THROW(matmul(Tensor({2}), Tensor({2, 3})), std::invalid_argument);
}
