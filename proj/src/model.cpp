#include "masslearn/model.hpp"

#include "masslearn/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace masslearn {

namespace {

constexpr char kMagic[8] = {'M', 'L', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

struct Fnv {
  std::uint64_t state = 0xcbf29ce484222325ull;
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state ^= p[i];
      state *= 0x100000001b3ull;
    }
  }
  void tensor(const Tensor& t) { bytes(t.data().data(), t.size() * sizeof(double)); }
};

void expect(bool ok, const std::filesystem::path& path, const io::Reader& r, const std::string& what) {
  if (!ok) {
    throw std::runtime_error("'" + path.string() + "': " + what + " before byte offset " +
                             std::to_string(r.offset()));
  }
}

void expect_shape(const Tensor& t, const Shape& shape, const std::filesystem::path& path,
                  const io::Reader& r) {
  expect(t.shape() == shape, path, r,
         "tensor shape " + shape_string(t.shape()) + " where " + shape_string(shape) + " was expected");
}

}  // namespace

Tensor Model::prepare(const Tensor& raw) const {
  if (raw.rank() != 2 || raw.cols() != net.config.input_dim) {
    throw std::invalid_argument("model expects inputs of width " +
                                std::to_string(net.config.input_dim) + ", got " +
                                shape_string(raw.shape()));
  }
  if (!norm) return raw;
  Tensor x = raw;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - norm->mean[j]) / norm->std[j];
  }
  return x;
}

Tensor Model::representations(const Tensor& raw) const {
  return mlp_forward(net, prepare(raw), Mode::eval);
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const double top = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) total += (v = std::exp(v - top));
    for (double& v : row) v /= total;
  }
  return out;
}

Tensor Model::predict_proba(const Tensor& raw) const {
  const Tensor z = representations(raw);
  if (method == Method::softmaxce) return softmax_rows(z);
  if (!mixture) throw std::logic_error("MASS model has no variational mixture");
  const MixtureEvaluator eval(*mixture);
  Tensor probs({z.rows(), classes});
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const std::vector<double> p = eval.posterior(z.row(i));
    std::copy(p.begin(), p.end(), probs.row(i).begin());
  }
  return probs;
}

std::uint64_t parameter_hash(const Model& model) {
  Fnv h;
  for (const auto& layer : model.net.layers) {
    h.tensor(layer.weight);
    h.tensor(layer.bias);
  }
  for (const auto& bn : model.net.batchnorm) {
    h.tensor(bn.scale);
    h.tensor(bn.shift);
    h.tensor(bn.running_mean);
    h.tensor(bn.running_var);
  }
  if (model.mixture) {
    for (const Tensor* t : model.mixture->trainable()) h.tensor(*t);
    h.bytes(model.mixture->class_priors.data(), model.mixture->class_priors.size() * sizeof(double));
  }
  return h.state;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  io::Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u32(model.method == Method::mass ? 0 : 1);
  w.u64(model.classes);

  const MlpConfig& c = model.net.config;
  w.u64(c.input_dim);
  w.u64(c.hidden_dims.size());
  for (std::size_t width : c.hidden_dims) w.u64(width);
  w.u64(c.output_dim);
  w.u32(0);  // elu
  w.f64(c.dropout_rate);
  w.u32(c.use_batchnorm ? 1 : 0);
  for (const auto& layer : model.net.layers) {
    w.tensor(layer.weight);
    w.tensor(layer.bias);
  }
  for (const auto& bn : model.net.batchnorm) {
    w.tensor(bn.scale);
    w.tensor(bn.shift);
    w.tensor(bn.running_mean);
    w.tensor(bn.running_var);
  }

  w.u32(model.mixture ? 1 : 0);
  if (model.mixture) {
    const ClassConditionalMixture& m = *model.mixture;
    w.u64(m.classes);
    w.u64(m.components);
    w.u64(m.dim);
    for (const auto& per_class : m.per_class) {
      for (const auto& comp : per_class) {
        w.tensor(comp.mean);
        w.tensor(comp.chol_raw);
      }
    }
    for (const Tensor& logits : m.weight_logits) w.tensor(logits);
    for (double p : m.class_priors) w.f64(p);
  }

  w.u32(model.norm ? 1 : 0);
  if (model.norm) {
    w.u64(model.norm->mean.size());
    for (double v : model.norm->mean) w.f64(v);
    for (double v : model.norm->std) w.f64(v);
    w.u64(model.norm->degenerate_features);
  }
  w.close();
}

Model load_model(const std::filesystem::path& path) {
  io::Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kMagic)) {
    throw std::runtime_error("'" + path.string() + "' is not a model checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("'" + path.string() + "': unsupported checkpoint version " +
                             std::to_string(version));
  }
  Model model;
  const std::uint32_t method = r.u32();
  expect(method <= 1, path, r, "unknown method tag");
  model.method = method == 0 ? Method::mass : Method::softmaxce;
  model.classes = r.u64();

  MlpConfig& c = model.net.config;
  c.input_dim = r.u64();
  const std::uint64_t hidden = r.u64();
  expect(hidden < 1024, path, r, "implausible layer count");
  c.hidden_dims.resize(hidden);
  for (auto& width : c.hidden_dims) width = r.u64();
  c.output_dim = r.u64();
  expect(r.u32() == 0, path, r, "unknown nonlinearity tag");
  c.dropout_rate = r.f64();
  c.use_batchnorm = r.u32() != 0;
  try {
    c.validate(false);
  } catch (const std::invalid_argument& e) {
    expect(false, path, r, e.what());
  }
  std::size_t in = c.input_dim;
  for (std::size_t l = 0; l <= hidden; ++l) {
    const std::size_t out = l < hidden ? c.hidden_dims[l] : c.output_dim;
    DenseLayer layer{r.tensor(), {}};
    expect_shape(layer.weight, {out, in}, path, r);
    layer.bias = r.tensor();
    expect_shape(layer.bias, {out}, path, r);
    model.net.layers.push_back(std::move(layer));
    in = out;
  }
  if (c.use_batchnorm) {
    for (std::size_t width : c.hidden_dims) {
      BatchNormLayer bn;
      for (Tensor* t : {&bn.scale, &bn.shift, &bn.running_mean, &bn.running_var}) {
        *t = r.tensor();
        expect_shape(*t, {width}, path, r);
      }
      model.net.batchnorm.push_back(std::move(bn));
    }
  }

  if (r.u32() != 0) {
    ClassConditionalMixture m;
    m.classes = r.u64();
    m.components = r.u64();
    m.dim = r.u64();
    expect(m.classes == model.classes && m.dim == c.output_dim && m.components > 0 &&
               m.components < 4096,
           path, r, "mixture header inconsistent with the network");
    m.per_class.resize(m.classes);
    for (auto& per_class : m.per_class) {
      for (std::size_t k = 0; k < m.components; ++k) {
        GaussianComponent comp{r.tensor(), {}};
        expect_shape(comp.mean, {m.dim}, path, r);
        comp.chol_raw = r.tensor();
        expect_shape(comp.chol_raw, {m.dim, m.dim}, path, r);
        per_class.push_back(std::move(comp));
      }
    }
    for (std::size_t y = 0; y < m.classes; ++y) {
      m.weight_logits.push_back(r.tensor());
      expect_shape(m.weight_logits.back(), {m.components}, path, r);
    }
    m.class_priors.resize(m.classes);
    for (double& p : m.class_priors) p = r.f64();
    model.mixture = std::move(m);
  }

  if (r.u32() != 0) {
    NormStats stats;
    const std::uint64_t d = r.u64();
    expect(d == c.input_dim, path, r, "normalisation width differs from the input width");
    stats.mean.resize(d);
    stats.std.resize(d);
    for (double& v : stats.mean) v = r.f64();
    for (double& v : stats.std) v = r.f64();
    stats.degenerate_features = r.u64();
    model.norm = std::move(stats);
  }
  expect(r.at_end(), path, r, "trailing bytes");
  return model;
}

}  // namespace masslearn
