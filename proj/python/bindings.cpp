#include "masslearn/cdi.hpp"
#include "masslearn/config.hpp"
#include "masslearn/metrics.hpp"
#include "masslearn/model.hpp"
#include "masslearn/train.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

namespace py = pybind11;
using namespace masslearn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 1 && a.ndim() != 2) throw std::invalid_argument("expected a 1-D or 2-D array");
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (a.ndim() == 1) shape = {shape[0], 1};
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::memcpy(out.mutable_data(), t.data().data(), t.size() * sizeof(double));
  return out;
}

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict cdi_dict(const CdiEstimate& e) {
  py::dict d;
  d["value"] = e.value;
  d["std_error"] = e.std_error;
  d["entropy"] = e.entropy;
  d["mean_log_jacobian"] = e.mean_log_jacobian;
  d["n"] = e.n_samples;
  d["k"] = e.k;
  return d;
}

py::dict curve_dict(const CurveRow& r) {
  py::dict d;
  d["step"] = r.step;
  d["cond_entropy"] = r.cond_entropy;
  d["entropy"] = r.entropy;
  d["neg_log_jacobian"] = r.neg_log_jacobian;
  d["train_acc"] = r.train_acc;
  d["test_acc"] = r.test_acc;
  return d;
}

}  // namespace

PYBIND11_MODULE(_masslearn, m) {
  m.doc() = "MASS learning and conserved differential information.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UnsupportedMethod>(m, "UnsupportedMethod", PyExc_ValueError);

  py::class_<Model>(m, "Model")
      .def_property_readonly("method", [](const Model& self) { return to_string(self.method); })
      .def_property_readonly("classes", [](const Model& self) { return self.classes; })
      .def_property_readonly("input_dim", [](const Model& self) { return self.net.config.input_dim; })
      .def_property_readonly("output_dim", [](const Model& self) { return self.net.config.output_dim; })
      .def_property_readonly("has_mixture", [](const Model& self) { return self.mixture.has_value(); })
      .def("predict_proba", [](const Model& self, const Array& x) { return to_array(self.predict_proba(to_tensor(x))); })
      .def("representations",
           [](const Model& self, const Array& x) { return to_array(self.representations(to_tensor(x))); })
      .def("log_jacobian",
           [](const Model& self, const Array& x, double jitter) {
             const Tensor input = self.prepare(to_tensor(x));
             std::vector<double> out;
             for (std::size_t i = 0; i < input.rows(); ++i) {
               Tensor row({1, input.cols()});
               std::copy(input.row(i).begin(), input.row(i).end(), row.data().begin());
               out.push_back(log_jacobian_determinant(self.net, row, jitter, i));
             }
             return to_array(out);
           },
           py::arg("x"), py::arg("jitter") = kDefaultJitter)
      .def("ood_scores",
           [](const Model& self, const Array& x, const std::string& method) {
             return to_array(ood_scores(self, to_tensor(x), parse_ood_method(method)));
           },
           py::arg("x"), py::arg("method") = "max_q")
      .def("parameter_hash", [](const Model& self) { return parameter_hash(self); })
      .def("save", [](const Model& self, const std::filesystem::path& path) { save_model(self, path); })
      .def_static("load", &load_model);

  m.def(
      "train",
      [](const std::string& config, const std::filesystem::path& base, std::optional<std::uint64_t> seed) {
        RunConfig run = parse_config(config, base);
        if (seed) run.train.seed = *seed;
        const DataSplits data = load_datasets(run.data);
        std::optional<Dataset> test;
        if (data.test.size() > 0) test = data.test;
        TrainResult result;
        {
          py::gil_scoped_release release;
          result = train(run.train, run.network(data.train.dim()), run.mixture, data.train, test);
        }
        py::list curve;
        for (const CurveRow& row : result.curve) curve.append(curve_dict(row));
        py::dict out;
        out["model"] = std::move(result.model);
        out["curve"] = curve;
        out["amgm_checks"] = result.amgm_checks;
        out["amgm_violations"] = result.amgm_violations;
        out["warnings"] = result.warnings;
        return out;
      },
      py::arg("config"), py::arg("base_dir") = ".", py::arg("seed") = py::none(),
      "Train from key = value config text; relative paths resolve against base_dir.");

  m.def(
      "gaussian_blobs",
      [](std::size_t n, std::size_t classes, std::size_t dim, double separation, std::uint64_t seed, double shift) {
        const Dataset ds = gaussian_blobs(n, classes, dim, separation, seed, shift).dataset;
        return py::make_tuple(to_array(ds.features), ds.labels);
      },
      py::arg("n"), py::arg("classes"), py::arg("dim"), py::arg("separation"), py::arg("seed"),
      py::arg("shift") = 0.0);
  m.def(
      "bayes_accuracy",
      [](std::size_t classes, std::size_t dim, double separation, std::size_t samples, std::uint64_t seed) {
        return bayes_accuracy(blob_spec(classes, dim, separation), samples, seed);
      },
      py::arg("classes"), py::arg("dim"), py::arg("separation"), py::arg("samples"), py::arg("seed"));

  m.def("nll", [](const Array& probs, std::vector<int> labels) { return nll({to_tensor(probs), labels}); });
  m.def("brier", [](const Array& probs, std::vector<int> labels) { return brier({to_tensor(probs), labels}); });
  m.def("accuracy",
        [](const Array& probs, std::vector<int> labels) { return accuracy(PredictionSet{to_tensor(probs), labels}); });
  m.def("predictive_entropy",
        [](const Array& probs) { return to_array(predictive_entropy({to_tensor(probs), std::nullopt})); });
  m.def("auroc", [](std::vector<double> in, std::vector<double> out) { return auroc({in, out}); });
  m.def(
      "average_precision",
      [](std::vector<double> in, std::vector<double> out, const std::string& positive) {
        if (positive != "in" && positive != "out") throw std::invalid_argument("positive must be 'in' or 'out'");
        return average_precision({in, out}, positive == "in" ? Positive::in : Positive::out);
      },
      py::arg("scores_in"), py::arg("scores_out"), py::arg("positive") = "in");

  m.def("knn_entropy", [](const Array& samples, std::size_t k) { return knn_entropy(to_tensor(samples), k); },
        py::arg("samples"), py::arg("k") = 3);
  m.def("map_names", [] {
    std::vector<std::string> names;
    for (const AnalyticMap& f : map_catalog()) names.push_back(f.name);
    return names;
  });
  m.def(
      "cdi_estimate",
      [](const std::string& map, std::size_t n, std::size_t k, std::uint64_t seed) {
        const AnalyticMap& f = catalog_map(map);
        py::gil_scoped_release release;
        const CdiEstimate e = cdi_estimate(f, standard_normal_sampler(f.dim_in), n, k, seed);
        py::gil_scoped_acquire acquire;
        return cdi_dict(e);
      },
      py::arg("map"), py::arg("n") = 50000, py::arg("k") = 3, py::arg("seed") = 0,
      "C(X, f(X)) for a catalog map with X ~ N(0, I).");
  m.def(
      "dpi_check",
      [](const std::string& first, const std::string& second, std::size_t n, std::size_t k, std::uint64_t seed) {
        const AnalyticMap& f = catalog_map(first);
        const AnalyticMap& g = catalog_map(second);
        DpiReport r;
        {
          py::gil_scoped_release release;
          r = dpi_check(f, g, standard_normal_sampler(f.dim_in), n, k, seed);
        }
        py::dict d;
        d["first"] = cdi_dict(r.first);
        d["second"] = cdi_dict(r.second);
        d["gap"] = r.gap;
        d["sigma"] = r.sigma;
        d["verdict"] = to_string(r.verdict);
        return d;
      },
      py::arg("first"), py::arg("second"), py::arg("n") = 50000, py::arg("k") = 3, py::arg("seed") = 0);
  m.def("quantized_mi", [](std::vector<double> x, std::vector<double> y, std::size_t bins) {
    return quantized_mi(x, y, bins);
  });
}
