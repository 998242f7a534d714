#include "masslearn/model.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

using namespace masslearn;
using namespace masslearn::testing;

namespace {

Model sample_model(bool batchnorm, bool with_mixture, bool with_norm) {
  MlpConfig c;
  c.input_dim = 4;
  c.hidden_dims = {5, 3};
  c.output_dim = 2;
  c.use_batchnorm = batchnorm;
  c.dropout_rate = 0.125;
  Model m;
  m.method = with_mixture ? Method::mass : Method::softmaxce;
  m.classes = 2;
  m.net = mlp_init(c, 3);
  Rng rng(4);
  for (auto& bn : m.net.batchnorm) {
    bn.running_mean = random_tensor(bn.running_mean.shape(), rng);
    bn.running_var = random_tensor(bn.running_var.shape(), rng, 0.5, 2.0);
  }
  if (with_mixture) {
    m.mixture = mixture_init(2, 3, 2, 5);
    m.mixture->class_priors = {0.25, 0.75};
  }
  if (with_norm) m.norm = NormStats{{1, 2, 3, 4}, {0.5, 1, 2, 1}, 1};
  return m;
}

std::vector<unsigned char> bytes_of(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

template <class T>
T read_at(const std::vector<unsigned char>& b, std::size_t offset) {
  T v;
  std::memcpy(&v, b.data() + offset, sizeof v);
  return v;
}

std::size_t tensor_bytes(const Tensor& t) { return 4 + 8 * t.rank() + 8 * t.size(); }

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const std::filesystem::path dir = temp_dir("ckpt_roundtrip");
  for (int variant = 0; variant < 8; ++variant) {
    const Model m = sample_model(variant & 1, variant & 2, variant & 4);
    const auto path = dir / ("m" + std::to_string(variant) + ".ckpt");
    save_model(m, path);
    const Model back = load_model(path);
    EXPECT_EQ(back, m) << variant;
    EXPECT_EQ(parameter_hash(back), parameter_hash(m));
    save_model(back, dir / "again.ckpt");
    EXPECT_EQ(bytes_of(path), bytes_of(dir / "again.ckpt"));
  }
}

TEST(Checkpoint, LayoutMatchesDocumentedFieldOrder) {
  const Model m = sample_model(true, true, true);
  const auto path = temp_dir("ckpt_layout") / "m.ckpt";
  save_model(m, path);
  const std::vector<unsigned char> b = bytes_of(path);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 8), "MLCKPT01");
  EXPECT_EQ(read_at<std::uint32_t>(b, 8), 1u);
  EXPECT_EQ(read_at<std::uint32_t>(b, 12), 0u);   // mass
  EXPECT_EQ(read_at<std::uint64_t>(b, 16), 2u);   // classes
  EXPECT_EQ(read_at<std::uint64_t>(b, 24), 4u);   // d
  EXPECT_EQ(read_at<std::uint64_t>(b, 32), 2u);   // hidden count
  EXPECT_EQ(read_at<std::uint64_t>(b, 40), 5u);
  EXPECT_EQ(read_at<std::uint64_t>(b, 48), 3u);
  EXPECT_EQ(read_at<std::uint64_t>(b, 56), 2u);   // r
  EXPECT_EQ(read_at<std::uint32_t>(b, 64), 0u);   // elu
  EXPECT_EQ(read_at<double>(b, 68), 0.125);
  EXPECT_EQ(read_at<std::uint32_t>(b, 76), 1u);   // batchnorm
  // First tensor: weight 5x4.
  EXPECT_EQ(read_at<std::uint32_t>(b, 80), 2u);
  EXPECT_EQ(read_at<std::uint64_t>(b, 84), 5u);
  EXPECT_EQ(read_at<std::uint64_t>(b, 92), 4u);
  EXPECT_EQ(read_at<double>(b, 100), m.net.layers[0].weight[0]);

  std::size_t size = 80;
  for (const auto& layer : m.net.layers) size += tensor_bytes(layer.weight) + tensor_bytes(layer.bias);
  for (const auto& bn : m.net.batchnorm) {
    size += tensor_bytes(bn.scale) + tensor_bytes(bn.shift) + tensor_bytes(bn.running_mean) +
            tensor_bytes(bn.running_var);
  }
  size += 4 + 24;
  for (const auto& comps : m.mixture->per_class) {
    for (const auto& c : comps) size += tensor_bytes(c.mean) + tensor_bytes(c.chol_raw);
  }
  for (const auto& l : m.mixture->weight_logits) size += tensor_bytes(l);
  size += 8 * 2;
  const std::size_t norm_at = size;
  size += 4 + 8 + 8 * 4 * 2 + 8;
  ASSERT_EQ(b.size(), size);
  EXPECT_EQ(read_at<std::uint32_t>(b, norm_at), 1u);
  EXPECT_EQ(read_at<double>(b, size - 8 - 8 * 4), 0.5);
  EXPECT_EQ(read_at<std::uint64_t>(b, size - 8), 1u);
}

TEST(Checkpoint, TrailingBytesNameTheOffset) {
  const auto path = temp_dir("ckpt_trailing") / "m.ckpt";
  save_model(sample_model(false, true, false), path);
  std::vector<unsigned char> b = bytes_of(path);
  const std::size_t size = b.size();
  b.push_back(0);
  write_bytes(path, b);
  try {
    load_model(path);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("trailing bytes"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(std::to_string(size)), std::string::npos);
  }
}

TEST(Checkpoint, TruncationAndBadMagicAreErrors) {
  const auto dir = temp_dir("ckpt_bad");
  save_model(sample_model(true, true, true), dir / "m.ckpt");
  std::vector<unsigned char> b = bytes_of(dir / "m.ckpt");
  b.resize(b.size() / 2);
  write_bytes(dir / "short.ckpt", b);
  try {
    load_model(dir / "short.ckpt");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos);
  }
  write_bytes(dir / "magic.ckpt", {'N', 'O', 'T', 'A', 'C', 'K', 'P', 'T', 1, 0, 0, 0});
  EXPECT_THROW(load_model(dir / "magic.ckpt"), std::runtime_error);
  EXPECT_THROW(load_model(dir / "missing.ckpt"), std::runtime_error);

  std::vector<unsigned char> wrong_version = bytes_of(dir / "m.ckpt");
  wrong_version[8] = 9;
  write_bytes(dir / "version.ckpt", wrong_version);
  EXPECT_THROW(load_model(dir / "version.ckpt"), std::runtime_error);
}

TEST(Checkpoint, ShapeInconsistencyIsAnError) {
  const auto dir = temp_dir("ckpt_shape");
  save_model(sample_model(false, false, false), dir / "m.ckpt");
  std::vector<unsigned char> b = bytes_of(dir / "m.ckpt");
  // Change the first hidden width from 5 to 6.
  b[40] = 6;
  write_bytes(dir / "m.ckpt", b);
  try {
    load_model(dir / "m.ckpt");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("shape"), std::string::npos);
  }
}

TEST(Model, SoftmaxPredictionsAreSoftmaxOfLogits) {
  const Model m = sample_model(false, false, false);
  Rng rng(1);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor logits = mlp_forward(m.net, x, Mode::eval);
  const Tensor p = m.predict_proba(x);
  for (std::size_t i = 0; i < 3; ++i) {
    const double e0 = std::exp(logits.at(i, 0)), e1 = std::exp(logits.at(i, 1));
    EXPECT_NEAR(p.at(i, 0), e0 / (e0 + e1), 1e-15);
    EXPECT_NEAR(p.at(i, 1), e1 / (e0 + e1), 1e-15);
  }
}

TEST(Model, MassPredictionsAreMixturePosterior) {
  const Model m = sample_model(true, true, false);
  Rng rng(2);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor z = m.representations(x);
  const Tensor p = m.predict_proba(x);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::vector<double> post = class_posterior(*m.mixture, z.row(i));
    EXPECT_NEAR(p.at(i, 0), post[0], 1e-15);
    EXPECT_NEAR(p.at(i, 1), post[1], 1e-15);
  }
}

TEST(Model, PrepareAppliesNormalisation) {
  const Model m = sample_model(false, false, true);
  const Tensor x = Tensor::matrix(1, 4, {2, 2, 5, 0});
  EXPECT_EQ(m.prepare(x), Tensor::matrix(1, 4, {2, 0, 1, -4}));
  EXPECT_THROW(m.prepare(Tensor({1, 3})), std::invalid_argument);
}

TEST(Model, ParameterHashTracksEveryParameter) {
  const Model m = sample_model(true, true, false);
  const std::uint64_t h = parameter_hash(m);
  Model changed = m;
  changed.net.batchnorm[1].running_var[0] += 1e-12;
  EXPECT_NE(parameter_hash(changed), h);
  changed = m;
  changed.mixture->weight_logits[1][2] = 0.5;
  EXPECT_NE(parameter_hash(changed), h);
  changed = m;
  changed.mixture->class_priors = {0.5, 0.5};
  EXPECT_NE(parameter_hash(changed), h);
}

TEST(SoftmaxRows, StableForLargeLogits) {
  const Tensor p = softmax_rows(Tensor::matrix(1, 2, {1000, 1000}));
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
}
