#include "commands.hpp"

#include "masslearn/cdi.hpp"
#include "masslearn/config.hpp"
#include "masslearn/format.hpp"
#include "masslearn/metrics.hpp"
#include "masslearn/model.hpp"
#include "masslearn/parallel.hpp"
#include "masslearn/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace masslearn::cli {

namespace fs = std::filesystem;

namespace {

template <class Body>
int guarded(std::ostream& err, Body body) {
  try {
    return body();
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

RunConfig configure(const fs::path& path, const Common& common) {
  RunConfig config = load_config(path);
  if (common.seed) config.train.seed = *common.seed;
  if (common.out) config.output_dir = fs::absolute(*common.out).lexically_normal();
  set_threads(common.threads);
  return config;
}

fs::path output_dir(const Common& common, const fs::path& fallback) {
  const fs::path dir = common.out ? fs::absolute(*common.out).lexically_normal() : fallback;
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw std::runtime_error("writing '" + path.string() + "' failed");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out = open_output(path);
  out << text;
  finish(out, path);
}

Split split_of(const std::string& name) {
  try {
    return parse_split(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("--split: ") + e.what());
  }
}

void check_width(const Model& model, const Dataset& ds) {
  if (ds.dim() != model.net.config.input_dim) {
    throw std::invalid_argument("dataset '" + ds.name + "' has width " + std::to_string(ds.dim()) +
                                " but the model expects " + std::to_string(model.net.config.input_dim));
  }
  if (ds.classes > model.classes) {
    throw std::invalid_argument("dataset '" + ds.name + "' has " + std::to_string(ds.classes) +
                                " classes but the model has " + std::to_string(model.classes));
  }
}

Model read_model(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("--model: '" + path.string() + "' does not exist");
  return load_model(path);
}

}  // namespace

int cmd_train(const fs::path& config_path, const Common& common, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig config = configure(config_path, common);
    fs::create_directories(config.output_dir);
    const DataSplits data = load_datasets(config.data);
    TrainConfig cfg = config.train;
    cfg.curve_output_path = config.output_dir / "curves.csv";
    std::optional<Dataset> test;
    if (data.test.size() > 0) test = data.test;
    TrainResult result =
        train(cfg, config.network(data.train.dim()), config.mixture, data.train, test);
    save_model(result.model, config.output_dir / "model.ckpt");
    write_text(config.output_dir / "config.echo", config_echo(config));
    std::string log;
    for (const std::string& w : result.warnings) log += "warning: " + w + '\n';
    log += "amgm_checks = " + std::to_string(result.amgm_checks) + '\n';
    log += "amgm_violations = " + std::to_string(result.amgm_violations) + '\n';
    write_text(config.output_dir / "train.log", log);
    return kExitOk;
  });
}

int cmd_eval(const fs::path& model_path, const fs::path& config_path, const std::string& split,
             const Common& common, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = configure(config_path, common);
    const Model model = read_model(model_path);
    const Split which = split_of(split);
    const fs::path dir = output_dir(common, config.output_dir);
    const Dataset ds = load_split(config.data, which);
    check_width(model, ds);

    const PredictionSet p{model.predict_proba(ds.features), ds.labels};
    const std::vector<double> h = predictive_entropy(p);
    double mean_entropy = 0.0;
    for (double v : h) mean_entropy += v;
    mean_entropy /= static_cast<double>(h.size());

    write_text(dir / "eval_report.txt",
               "accuracy = " + format_double(accuracy(p)) + "\nnll = " + format_double(nll(p)) +
                   "\nbrier = " + format_double(brier(p)) + "\nmean_entropy = " +
                   format_double(mean_entropy) + "\nn = " + std::to_string(ds.size()) + "\n");

    const fs::path csv_path = dir / "eval_predictions.csv";
    std::ofstream csv = open_output(csv_path);
    csv << "index,label,predicted,entropy";
    for (std::size_t c = 0; c < model.classes; ++c) csv << ",p" << c;
    csv << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto row = p.probs.row(i);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      csv << i << ',' << ds.labels[i] << ',' << best << ',' << format_double(h[i]);
      for (double v : row) csv << ',' << format_double(v);
      csv << '\n';
    }
    finish(csv, csv_path);
    return kExitOk;
  });
}

int cmd_ood(const fs::path& model_path, const fs::path& in_config, const fs::path& out_config,
            const std::optional<std::string>& method_name, const std::string& split,
            const Common& common, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig in_cfg = configure(in_config, common);
    const RunConfig out_cfg = load_config(out_config);
    const Model model = read_model(model_path);
    const Split which = split_of(split);
    const OodMethod method = method_name ? parse_ood_method(*method_name) : in_cfg.ood_method;
    const fs::path dir = output_dir(common, in_cfg.output_dir);
    const Dataset in = load_split(in_cfg.data, which);
    const Dataset out = load_split(out_cfg.data, which);
    check_width(model, in);
    if (out.dim() != model.net.config.input_dim) {
      throw std::invalid_argument("out-of-distribution dataset has width " + std::to_string(out.dim()) +
                                  " but the model expects " + std::to_string(model.net.config.input_dim));
    }

    const OodScoreSet scores{ood_scores(model, in.features, method),
                             ood_scores(model, out.features, method)};
    write_text(dir / "ood_report.txt",
               "auroc = " + format_double(auroc(scores)) + "\napr_in = " +
                   format_double(average_precision(scores, Positive::in)) + "\napr_out = " +
                   format_double(average_precision(scores, Positive::out)) + "\nn_in = " +
                   std::to_string(in.size()) + "\nn_out = " + std::to_string(out.size()) +
                   "\nmethod = " + to_string(method) + "\n");

    const fs::path csv_path = dir / "ood_scores.csv";
    std::ofstream csv = open_output(csv_path);
    csv << "set,index,score\n";
    for (std::size_t i = 0; i < scores.scores_in.size(); ++i) {
      csv << "in," << i << ',' << format_double(scores.scores_in[i]) << '\n';
    }
    for (std::size_t i = 0; i < scores.scores_out.size(); ++i) {
      csv << "out," << i << ',' << format_double(scores.scores_out[i]) << '\n';
    }
    finish(csv, csv_path);
    return kExitOk;
  });
}

int cmd_cdi_demo(std::size_t n, std::size_t k, const Common& common, std::ostream& err) {
  return guarded(err, [&] {
    if (n < 1000) throw ConfigError("--n must be >= 1000");
    if (k == 0 || k >= n / kCdiFolds) throw ConfigError("--k must be >= 1 and below n / 10");
    set_threads(common.threads);
    const std::uint64_t seed = common.seed.value_or(0);
    const fs::path dir = output_dir(common, fs::current_path());
    const double h1 = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);

    const fs::path csv_path = dir / "cdi_demo.csv";
    std::ofstream csv = open_output(csv_path);
    csv << "kind,name,n,k,estimate,std_error,reference,gap,gap_reference,verdict\n";
    std::uint64_t row = 0;
    auto emit = [&](const std::string& kind, const std::string& name, const DpiReport& r,
                    std::optional<double> reference, double gap_reference) {
      csv << kind << ',' << name << ',' << n << ',' << k << ',' << format_double(r.second.value)
          << ',' << format_double(r.second.std_error) << ','
          << format_double(reference.value_or(NAN)) << ',' << format_double(r.gap) << ','
          << format_double(gap_reference) << ',' << to_string(r.verdict) << '\n';
    };

    for (const AnalyticMap& map : map_catalog()) {
      const AnalyticMap& id = catalog_map(map.dim_in == 1 ? "identity" : "identity2");
      const DpiReport r = dpi_check(id, map, standard_normal_sampler(map.dim_in), n, k,
                                    Rng::stream(seed, "cdi", row++).next_u64());
      const double input_entropy = static_cast<double>(map.dim_in) * h1;
      emit("map", map.name, r, map.reference, input_entropy - map.reference.value_or(NAN));
    }
    for (const DpiPair& pair : dpi_pairs()) {
      const AnalyticMap& f = catalog_map(pair.first);
      const AnalyticMap& g = catalog_map(pair.second);
      const DpiReport r = dpi_check(f, g, standard_normal_sampler(f.dim_in), n, k,
                                    Rng::stream(seed, "cdi", row++).next_u64());
      emit("pair", compose(f, g).name, r, *f.reference - pair.reference_gap, pair.reference_gap);
    }

    Rng rng = Rng::stream(seed, "cdi", row++);
    std::vector<double> x(n);
    for (double& v : x) v = rng.normal();
    for (std::size_t bins : {2, 4, 8, 16, 32, 64}) {
      csv << "quantized_mi,y=x bins=" << bins << ',' << n << ",0,"
          << format_double(quantized_mi(x, x, bins)) << ",nan,"
          << format_double(std::log(static_cast<double>(bins))) << ",nan,nan,diverges\n";
    }
    finish(csv, csv_path);
    return kExitOk;
  });
}

}  // namespace masslearn::cli
