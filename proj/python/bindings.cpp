// Python module fpelab._core. Configs, manifests and reports cross the boundary as JSON text;
// the package __init__ converts them to and from Python objects.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "fpelab/common.hpp"
#include "fpelab/drift.hpp"
#include "fpelab/experiment.hpp"
#include "fpelab/ou_noise.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

fpelab::ExperimentConfig parse(const std::string& text, const std::string& base_dir) {
  return fpelab::validate_config(fpelab::config_from_document(json::parse(text)), base_dir);
}

py::array_t<double> to_array(std::span<const double> data, std::vector<py::ssize_t> shape) {
  py::array_t<double> out(shape);
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

std::vector<double> as_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Galerkin and Monte-Carlo kernels for Fokker-Planck experiments";

  static py::exception<fpelab::Error> base(m, "Error", PyExc_RuntimeError);
  static py::exception<fpelab::ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<fpelab::NumericalError> numerical_error(m, "NumericalError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const fpelab::ConfigError& e) {
      std::string msg;
      for (const auto& s : e.issues()) msg += (msg.empty() ? "" : "\n") + s;
      py::set_error(config_error, msg.c_str());
    } catch (const fpelab::NumericalError& e) {
      py::set_error(numerical_error, e.what());
    } catch (const fpelab::Error& e) {
      py::set_error(base, e.what());
    }
  });

  m.def("version", &fpelab::code_version);
  m.def("fernique_bound", &fpelab::fernique_bound);
  m.def("calibration_threshold", &fpelab::calibration_threshold);
  m.def("sha256_hex", [](const py::bytes& b) { return fpelab::sha256_hex(std::string(b)); });

  m.def("config_issues", [](const std::string& text, const std::string& base_dir) {
    return fpelab::config_issues(fpelab::config_from_document(json::parse(text)), base_dir);
  }, py::arg("config"), py::arg("base_dir") = "");
  m.def("validate_config", [](const std::string& text, const std::string& base_dir) {
    return parse(text, base_dir).to_json().dump();
  }, py::arg("config"), py::arg("base_dir") = "");

  m.def("resolve_lambda", [](const std::string& text, int threads) {
    const auto cfg = parse(text, "");
    py::gil_scoped_release release;
    return fpelab::resolve_lambda(cfg, threads).to_json().dump();
  }, py::arg("config"), py::arg("threads") = 0);

  m.def("spectrum", [](const std::string& text, double lambda) {
    return fpelab::build_problem(parse(text, ""), lambda).spectrum.to_json().dump();
  }, py::arg("config"), py::arg("lambda_"));

  m.def("run_pipeline", [](const std::string& text, int threads) {
    const auto cfg = parse(text, "");
    fpelab::RunArtifacts art;
    {
      py::gil_scoped_release release;
      art = fpelab::run_pipeline(cfg, threads);
    }
    return json{{"summary", art.summary}, {"residuals", art.residuals}, {"checks_failed", art.checks_failed}}.dump();
  }, py::arg("config"), py::arg("threads") = 0);

  m.def("run_experiment", [](const std::string& text, const std::string& base_dir, int threads) {
    const auto cfg = parse(text, base_dir);
    py::gil_scoped_release release;
    return fpelab::run_experiment(cfg, threads).to_json().dump();
  }, py::arg("config"), py::arg("base_dir") = "", py::arg("threads") = 0);

  m.def("verify_manifest", [](const std::string& manifest, const std::string& dir) {
    return fpelab::verify_manifest(fpelab::RunManifest::from_json(json::parse(manifest)), dir);
  });

  m.def("sample_ou", [](const std::string& text, double lambda, int threads) {
    const auto cfg = parse(text, "");
    const auto prob = fpelab::build_problem(cfg, lambda);
    const auto p = fpelab::noise_params(cfg, prob.spectrum);
    const auto e = [&] {
      py::gil_scoped_release release;
      return fpelab::sample_ensemble(p, threads);
    }();
    return py::make_tuple(to_array(e.grid(), {static_cast<py::ssize_t>(e.times())}),
                          to_array(e.values(), {static_cast<py::ssize_t>(e.paths()), static_cast<py::ssize_t>(e.times()),
                                                static_cast<py::ssize_t>(e.modes())}));
  }, py::arg("config"), py::arg("lambda_"), py::arg("threads") = 0,
     "Exact OU paths for the configured spectrum: (grid, values[M, J+1, n_z]).");

  m.def("r0_identity_residual", [](const std::string& text, double lambda, std::size_t stride, int threads) {
    const auto cfg = parse(text, "");
    const auto p = fpelab::noise_params(cfg, fpelab::build_problem(cfg, 0.0).spectrum);
    const auto r = fpelab::r0_identity_residual(lambda, p, stride, threads);
    return py::dict(py::arg("mean_sup") = r.mean_sup, py::arg("max_sup") = r.max_sup, py::arg("dt") = r.dt);
  }, py::arg("config"), py::arg("lambda_"), py::arg("stride") = 1, py::arg("threads") = 0);

  m.def("ns_drift", [](int d, double kmax, const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                       double nu) {
    const auto basis = fpelab::TorusBasis::build(d, kmax, nu);
    const auto xs = as_vector(x);
    if (xs.size() != basis.size()) throw fpelab::DimensionError("ns_drift: x must have one entry per basis mode");
    const fpelab::NavierStokesDrift ns(basis, basis.size());
    std::vector<double> f(xs.size());
    ns.eval_f(xs, 0.0, f);
    return to_array(f, {static_cast<py::ssize_t>(f.size())});
  }, py::arg("d"), py::arg("kmax"), py::arg("x"), py::arg("nu") = 1.0);

  m.def("ns_trilinear", [](int d, double kmax, const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                           const py::array_t<double, py::array::c_style | py::array::forcecast>& y,
                           const py::array_t<double, py::array::c_style | py::array::forcecast>& w) {
    const auto basis = fpelab::TorusBasis::build(d, kmax);
    const fpelab::NavierStokesDrift ns(basis, basis.size());
    const auto xs = as_vector(x), ys = as_vector(y), ws = as_vector(w);
    if (xs.size() != basis.size() || ys.size() != basis.size() || ws.size() != basis.size()) {
      throw fpelab::DimensionError("ns_trilinear: arguments must have one entry per basis mode");
    }
    return ns.trilinear(xs, ys, ws);
  });

  m.def("basis_size", [](int d, double kmax) { return fpelab::TorusBasis::build(d, kmax).size(); });
}
