#include "masslearn/config.hpp"

#include "masslearn/format.hpp"
#include "masslearn/rng.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace masslearn {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const char* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (v.empty() || r.ec != std::errc() || r.ptr != end) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (v.empty() || r.ec != std::errc() || r.ptr != end) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a 64-bit unsigned integer");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const std::invalid_argument&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not true or false");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::string from_optional(const std::optional<std::size_t>& v) {
  return v ? std::to_string(*v) : "none";
}

std::optional<std::size_t> to_optional(const std::string& key, const std::string& v, const char* none) {
  if (v == none) return std::nullopt;
  return to_size(key, v);
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  bool is_path = false;
};

template <class Parse>
auto wrap(const char* key, Parse parse) {
  return [key, parse](RunConfig& c, const std::string& v) {
    try {
      parse(c, v);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  };
}

#define SIZE_KEY(name, field)                                                       \
  Key{name, [](RunConfig& c, const std::string& v) { c.field = to_size(name, v); }, \
      [](const RunConfig& c) { return std::to_string(c.field); }}
#define DOUBLE_KEY(name, field)                                                       \
  Key{name, [](RunConfig& c, const std::string& v) { c.field = to_double(name, v); }, \
      [](const RunConfig& c) { return format_double(c.field); }}
#define BOOL_KEY(name, field)                                                       \
  Key{name, [](RunConfig& c, const std::string& v) { c.field = to_bool(name, v); }, \
      [](const RunConfig& c) { return from_bool(c.field); }}
#define PATH_KEY(name, field)                                                     \
  Key{name, [](RunConfig& c, const std::string& v) { c.field = v; },              \
      [](const RunConfig& c) { return c.field.string(); }, true}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"dataset",
          [](RunConfig& c, const std::string& v) {
            if (v == "blobs") {
              c.data.kind = DatasetKind::blobs;
            } else if (v == "cifar10") {
              c.data.kind = DatasetKind::cifar10;
            } else if (v == "file") {
              c.data.kind = DatasetKind::file;
            } else {
              throw ConfigError("config key 'dataset': '" + v + "' is not blobs, cifar10 or file");
            }
          },
          [](const RunConfig& c) -> std::string {
            switch (c.data.kind) {
              case DatasetKind::blobs:
                return "blobs";
              case DatasetKind::cifar10:
                return "cifar10";
              case DatasetKind::file:
                break;
            }
            return "file";
          }},
      SIZE_KEY("n_train", data.n_train),
      SIZE_KEY("n_test", data.n_test),
      SIZE_KEY("classes", data.classes),
      SIZE_KEY("dim", data.dim),
      DOUBLE_KEY("separation", data.separation),
      DOUBLE_KEY("shift", data.shift),
      Key{"data_seed", [](RunConfig& c, const std::string& v) { c.data.data_seed = to_u64("data_seed", v); },
          [](const RunConfig& c) { return std::to_string(c.data.data_seed); }},
      PATH_KEY("data_dir", data.data_dir),
      Key{"train_limit",
          [](RunConfig& c, const std::string& v) { c.data.train_limit = to_optional("train_limit", v, "none"); },
          [](const RunConfig& c) { return from_optional(c.data.train_limit); }},
      Key{"test_limit",
          [](RunConfig& c, const std::string& v) { c.data.test_limit = to_optional("test_limit", v, "none"); },
          [](const RunConfig& c) { return from_optional(c.data.test_limit); }},
      PATH_KEY("train_path", data.train_path),
      PATH_KEY("test_path", data.test_path),
      Key{"hidden",
          [](RunConfig& c, const std::string& v) {
            c.hidden_dims.clear();
            if (v == "none") return;
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) c.hidden_dims.push_back(to_size("hidden", trim(item)));
          },
          [](const RunConfig& c) {
            if (c.hidden_dims.empty()) return std::string("none");
            std::string out;
            for (std::size_t i = 0; i < c.hidden_dims.size(); ++i) {
              if (i) out += ",";
              out += std::to_string(c.hidden_dims[i]);
            }
            return out;
          }},
      Key{"output_dim",
          [](RunConfig& c, const std::string& v) { c.output_dim = to_optional("output_dim", v, "auto"); },
          [](const RunConfig& c) { return c.output_dim ? std::to_string(*c.output_dim) : "auto"; }},
      DOUBLE_KEY("dropout", dropout),
      BOOL_KEY("batchnorm", batchnorm),
      Key{"method", wrap("method", [](RunConfig& c, const std::string& v) { c.train.method = parse_method(v); }),
          [](const RunConfig& c) { return to_string(c.train.method); }},
      DOUBLE_KEY("beta", train.beta),
      DOUBLE_KEY("lr", train.lr),
      DOUBLE_KEY("variational_lr", train.variational_lr),
      SIZE_KEY("batch_size", train.batch_size),
      SIZE_KEY("steps", train.steps),
      Key{"optimizer",
          wrap("optimizer", [](RunConfig& c, const std::string& v) { c.train.optimizer = parse_optimizer(v); }),
          [](const RunConfig& c) { return to_string(c.train.optimizer); }},
      BOOL_KEY("subsample_jacobian", train.subsample_jacobian),
      DOUBLE_KEY("jitter", train.jitter),
      Key{"seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_u64("seed", v); },
          [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      SIZE_KEY("eval_interval", train.eval_interval),
      DOUBLE_KEY("clip_norm", train.clip_norm),
      DOUBLE_KEY("weight_decay", train.weight_decay),
      SIZE_KEY("curve_samples", train.curve_samples),
      SIZE_KEY("curve_mle_steps", train.curve_mle_steps),
      BOOL_KEY("fit_q", train.fit_q),
      SIZE_KEY("mle_steps", train.mle_steps),
      BOOL_KEY("normalize", train.normalize),
      SIZE_KEY("components", mixture.components),
      DOUBLE_KEY("mean_scale", mixture.mean_scale),
      Key{"ood_method",
          wrap("ood_method", [](RunConfig& c, const std::string& v) { c.ood_method = parse_ood_method(v); }),
          [](const RunConfig& c) { return to_string(c.ood_method); }},
      PATH_KEY("output_dir", output_dir),
  };
  return table;
}

#undef SIZE_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY
#undef PATH_KEY

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  const std::filesystem::path full = p.is_absolute() ? p : base / p;
  std::filesystem::path out = std::filesystem::absolute(full).lexically_normal();
  if (!out.has_filename() && out.has_relative_path()) out = out.parent_path();
  return out;
}

void require_file(const std::filesystem::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string("config key '") + key + "' is required for this dataset");
  if (!std::filesystem::exists(p)) {
    throw ConfigError(std::string("config key '") + key + "': '" + p.string() + "' does not exist");
  }
}

void validate(RunConfig& c) {
  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid training settings: ") + e.what());
  }
  if (c.mixture.components == 0) throw ConfigError("config key 'components' must be >= 1");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("config key 'dropout' must be in [0, 1)");
  for (std::size_t w : c.hidden_dims) {
    if (w == 0) throw ConfigError("config key 'hidden': widths must be >= 1");
  }
  if (c.output_dim && *c.output_dim == 0) throw ConfigError("config key 'output_dim' must be >= 1");
  switch (c.data.kind) {
    case DatasetKind::blobs:
      if (c.data.classes < 2 || c.data.dim < 2) throw ConfigError("config keys 'classes' and 'dim' must be >= 2");
      if (c.data.n_train == 0) throw ConfigError("config key 'n_train' must be >= 1");
      break;
    case DatasetKind::cifar10:
      require_file(c.data.data_dir, "data_dir");
      break;
    case DatasetKind::file:
      require_file(c.data.train_path, "train_path");
      if (!c.data.test_path.empty()) require_file(c.data.test_path, "test_path");
      break;
  }
}

}  // namespace

std::size_t RunConfig::resolved_output_dim(std::size_t input_dim) const {
  if (output_dim) return *output_dim;
  if (train.method == Method::softmaxce) {
    return data.kind == DatasetKind::blobs ? data.classes : 10;
  }
  return std::min<std::size_t>(input_dim, 15);
}

MlpConfig RunConfig::network(std::size_t input_dim) const {
  MlpConfig net;
  net.input_dim = input_dim;
  net.hidden_dims = hidden_dims;
  net.output_dim = resolved_output_dim(input_dim);
  net.dropout_rate = dropout;
  net.use_batchnorm = batchnorm;
  return net;
}

RunConfig parse_config(const std::string& text, const std::filesystem::path& base) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = keys();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return key == k.name; });
    if (it == table.end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": key '" + key + "' repeated");
    }
    it->set(c, value);
  }
  c.data.data_dir = resolve(c.data.data_dir, base);
  c.data.train_path = resolve(c.data.train_path, base);
  c.data.test_path = resolve(c.data.test_path, base);
  c.output_dir = resolve(c.output_dir, base);
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::filesystem::absolute(path).parent_path());
}

std::string config_echo(const RunConfig& config) {
  std::string out;
  for (const Key& k : keys()) {
    const std::string value = k.get(config);
    if (k.is_path && value.empty()) continue;
    out += k.name;
    out += " = ";
    out += value;
    out += '\n';
  }
  return out;
}

Dataset load_split(const DataSpec& spec, Split split) {
  const bool train = split == Split::train;
  switch (spec.kind) {
    case DatasetKind::blobs: {
      const std::uint64_t seed = Rng::stream(spec.data_seed, train ? "blobs-train" : "blobs-test").next_u64();
      Dataset ds = gaussian_blobs(train ? spec.n_train : spec.n_test, spec.classes, spec.dim,
                                  spec.separation, seed, spec.shift)
                       .dataset;
      ds.name = train ? "blobs-train" : "blobs-test";
      return ds;
    }
    case DatasetKind::cifar10:
      return load_cifar10(spec.data_dir, split, train ? spec.train_limit : spec.test_limit);
    case DatasetKind::file:
      break;
  }
  const std::filesystem::path& path = train ? spec.train_path : spec.test_path;
  if (path.empty()) throw ConfigError("config key 'test_path' is required for the test split");
  return load_dataset(path);
}

DataSplits load_datasets(const DataSpec& spec) {
  DataSplits out{load_split(spec, Split::train), {}};
  const bool has_test = !(spec.kind == DatasetKind::file && spec.test_path.empty()) &&
                        !(spec.kind == DatasetKind::blobs && spec.n_test == 0);
  if (has_test) out.test = load_split(spec, Split::test);
  return out;
}

}  // namespace masslearn
