#include "masslearn/train.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace masslearn;
using namespace masslearn::testing;

namespace {

MlpConfig blob_net(std::size_t r = 2) {
  MlpConfig c;
  c.input_dim = 2;
  c.hidden_dims = {32, 32};
  c.output_dim = r;
  return c;
}

TrainConfig quick(Method method, std::size_t steps) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.steps = steps;
  cfg.batch_size = 64;
  cfg.eval_interval = 10;
  cfg.curve_samples = 64;
  cfg.curve_mle_steps = 20;
  cfg.mle_steps = 50;
  cfg.lr = 5e-3;
  cfg.variational_lr = 5e-3;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Train, ZeroStepsKeepsInitialisationAndWritesHeaderOnly) {
  const Dataset ds = gaussian_blobs(90, 3, 2, 4.0, 1).dataset;
  TrainConfig cfg = quick(Method::mass, 0);
  cfg.seed = 5;
  cfg.curve_output_path = temp_dir("train_zero") / "curves.csv";
  const MixtureConfig mix{3, 1.0};
  const TrainResult result = train(cfg, blob_net(), mix, ds);
  EXPECT_EQ(result.model.net, mlp_init(blob_net(), Rng::stream(5, "init").next_u64()));
  const ClassConditionalMixture q0 =
      fit_priors(mixture_init(3, 3, 2, Rng::stream(5, "mixture-init").next_u64(), 1.0), ds.labels);
  EXPECT_EQ(*result.model.mixture, q0);
  EXPECT_TRUE(result.curve.empty());
  EXPECT_EQ(slurp(cfg.curve_output_path), std::string(kCurveHeader) + "\n");
}

TEST(Train, SameSeedGivesIdenticalCurvesAndHashes) {
  const Dataset ds = gaussian_blobs(150, 3, 2, 4.0, 2).dataset;
  const std::filesystem::path dir = temp_dir("train_det");
  TrainResult runs[2];
  for (int i = 0; i < 2; ++i) {
    TrainConfig cfg = quick(Method::mass, 30);
    cfg.curve_output_path = dir / ("curves" + std::to_string(i) + ".csv");
    runs[i] = train(cfg, blob_net(), {3, 1.0}, ds, ds);
  }
  EXPECT_EQ(slurp(dir / "curves0.csv"), slurp(dir / "curves1.csv"));
  EXPECT_EQ(runs[0].hashes, runs[1].hashes);
  EXPECT_EQ(runs[0].model, runs[1].model);
  EXPECT_EQ(runs[0].hashes.size(), 3u);

  TrainConfig other = quick(Method::mass, 30);
  other.seed = 1;
  EXPECT_NE(train(other, blob_net(), {3, 1.0}, ds).hashes, runs[0].hashes);
}

TEST(Train, DropoutAndBatchnormRunsAreDeterministic) {
  const Dataset ds = gaussian_blobs(120, 3, 2, 4.0, 3).dataset;
  MlpConfig net = blob_net();
  net.dropout_rate = 0.2;
  net.use_batchnorm = true;
  const TrainConfig cfg = quick(Method::mass, 20);
  const TrainResult a = train(cfg, net, {2, 1.0}, ds);
  const TrainResult b = train(cfg, net, {2, 1.0}, ds);
  EXPECT_EQ(a.hashes, b.hashes);
  EXPECT_EQ(a.model, b.model);
  EXPECT_NE(a.model.net.batchnorm[0].running_mean, Tensor({32}));
}

TEST(Train, CurveRowsAtIntervalsAndFinalStep) {
  const Dataset ds = gaussian_blobs(90, 3, 2, 4.0, 4).dataset;
  TrainConfig cfg = quick(Method::mass, 25);
  const TrainResult result = train(cfg, blob_net(), {2, 1.0}, ds, ds);
  std::vector<std::size_t> steps;
  for (const CurveRow& row : result.curve) steps.push_back(row.step);
  EXPECT_EQ(steps, (std::vector<std::size_t>{10, 20, 25}));
  for (const CurveRow& row : result.curve) {
    EXPECT_TRUE(std::isfinite(row.cond_entropy));
    EXPECT_TRUE(std::isfinite(row.entropy));
    EXPECT_TRUE(std::isfinite(row.neg_log_jacobian));
    EXPECT_EQ(row.train_acc, row.test_acc);
  }
}

TEST(Train, CurveTermsAreUnscaledEvaluationTerms) {
  const Dataset ds = gaussian_blobs(60, 3, 2, 4.0, 5).dataset;
  TrainConfig cfg = quick(Method::mass, 10);
  cfg.beta = 0.5;
  cfg.curve_samples = 40;
  const TrainResult result = train(cfg, blob_net(), {2, 1.0}, ds);
  ASSERT_EQ(result.curve.size(), 1u);
  // Oracle: per-row terms from the value-level API on the first 40 rows.
  const Model& m = result.model;
  const MixtureEvaluator ev(*m.mixture);
  double ce = 0.0, h = 0.0, j = 0.0;
  for (std::size_t i = 0; i < 40; ++i) {
    const Tensor x({1, 2}, {ds.features.row(i).begin(), ds.features.row(i).end()});
    const Tensor z = mlp_forward(m.net, x, Mode::eval);
    const double lm = ev.log_marginal(z.data());
    ce += lm - (std::log(m.mixture->class_priors[ds.labels[i]]) + ev.log_density(ds.labels[i], z.data()));
    h -= lm;
    j += log_jacobian_determinant(m.net, x, cfg.jitter);
  }
  EXPECT_NEAR(result.curve[0].cond_entropy, ce / 40, 1e-10);
  EXPECT_NEAR(result.curve[0].entropy, h / 40, 1e-10);
  EXPECT_NEAR(result.curve[0].neg_log_jacobian, -j / 40, 1e-10);
  EXPECT_TRUE(std::isnan(result.curve[0].test_acc));
}

TEST(Train, SoftmaxCeCurveUsesFittedQAndStoresOne) {
  const Dataset ds = gaussian_blobs(90, 3, 3, 4.0, 6).dataset;
  MlpConfig net = blob_net(3);
  net.input_dim = 3;
  const TrainResult result = train(quick(Method::softmaxce, 10), net, {2, 1.0}, ds);
  ASSERT_EQ(result.curve.size(), 1u);
  EXPECT_TRUE(std::isfinite(result.curve[0].entropy));
  EXPECT_TRUE(std::isfinite(result.curve[0].neg_log_jacobian));
  ASSERT_TRUE(result.model.mixture.has_value());
  EXPECT_EQ(result.model.mixture->components, 2u);
  EXPECT_EQ(result.amgm_checks, 0u);
}

TEST(Train, SoftmaxCeWithWideOutputHasNoJacobianTerm) {
  const Dataset ds = gaussian_blobs(90, 3, 2, 4.0, 7).dataset;
  TrainConfig cfg = quick(Method::softmaxce, 10);
  cfg.fit_q = false;
  const TrainResult result = train(cfg, blob_net(3), {1, 1.0}, ds);
  EXPECT_TRUE(std::isnan(result.curve[0].neg_log_jacobian));
  EXPECT_TRUE(std::isfinite(result.curve[0].cond_entropy));
  EXPECT_FALSE(result.model.mixture.has_value());
}

TEST(Train, Errors) {
  const Dataset ds = gaussian_blobs(30, 3, 2, 4.0, 8).dataset;
  EXPECT_THROW(train(quick(Method::mass, 1), blob_net(3), {1, 1.0}, ds), std::invalid_argument);
  EXPECT_THROW(train(quick(Method::softmaxce, 1), blob_net(2), {1, 1.0}, ds), std::invalid_argument);
  MlpConfig wide = blob_net();
  wide.input_dim = 5;
  EXPECT_THROW(train(quick(Method::mass, 1), wide, {1, 1.0}, ds), std::invalid_argument);
  TrainConfig bad = quick(Method::mass, 1);
  bad.curve_output_path = "/nonexistent-dir/curves.csv";
  EXPECT_THROW(train(bad, blob_net(), {1, 1.0}, ds), std::runtime_error);
}

TEST(Train, BetaZeroAllowsExpandingNetwork) {
  const Dataset ds = gaussian_blobs(30, 3, 2, 4.0, 9).dataset;
  TrainConfig cfg = quick(Method::mass, 5);
  cfg.beta = 0.0;
  const TrainResult result = train(cfg, blob_net(3), {1, 1.0}, ds);
  EXPECT_EQ(result.amgm_checks, 0u);
  EXPECT_TRUE(std::isnan(result.curve[0].neg_log_jacobian));
}

TEST(Train, SmallBatchWarns) {
  const Dataset ds = gaussian_blobs(30, 3, 2, 4.0, 10).dataset;
  TrainConfig cfg = quick(Method::mass, 1);
  cfg.batch_size = 1;
  EXPECT_EQ(train(cfg, blob_net(), {1, 1.0}, ds).warnings.size(), 1u);
}

TEST(Property, AmGmHoldsThroughoutTraining) {
  const Dataset ds = gaussian_blobs(300, 3, 2, 4.0, 11).dataset;
  TrainConfig cfg = quick(Method::mass, 200);
  cfg.eval_interval = 100;
  cfg.subsample_jacobian = false;
  const TrainResult result = train(cfg, blob_net(), {3, 1.0}, ds);
  EXPECT_GT(result.amgm_checks, 10000u);
  EXPECT_EQ(result.amgm_violations, 0u);
}

TEST(Train, BlobsReachNearBayesAccuracy) {
  const Blobs train_blobs = gaussian_blobs(1500, 3, 2, 4.0, Rng::stream(0, "blobs-train").next_u64());
  const Blobs test_blobs = gaussian_blobs(1500, 3, 2, 4.0, Rng::stream(0, "blobs-test").next_u64());
  const double bayes = bayes_accuracy(train_blobs.spec, 1000000, 12);
  TrainConfig cfg;
  cfg.beta = 1e-3;
  cfg.steps = 2000;
  cfg.batch_size = 64;
  cfg.eval_interval = 2000;
  cfg.curve_samples = 256;
  const TrainResult result = train(cfg, blob_net(), {3, 1.0}, train_blobs.dataset, test_blobs.dataset);
  EXPECT_GE(result.curve.back().test_acc, 0.95 * bayes);
  EXPECT_EQ(result.amgm_violations, 0u);
}

TEST(WriteCurves, FormatsShortestRoundTrip) {
  const std::filesystem::path p = temp_dir("curves_fmt") / "c.csv";
  write_curves({{5, 0.1, -2.5, NAN, 1.0, 0.25}}, p);
  EXPECT_EQ(slurp(p), std::string(kCurveHeader) + "\n5,0.1,-2.5,nan,1,0.25\n");
}
