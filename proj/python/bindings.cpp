// Python access to the experiment runners and a few core estimators.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "kinetic/experiments.hpp"

namespace py = pybind11;
using namespace kinetic;

namespace {

py::dict spectrum_dict(const SpectrumEstimate& s) {
  py::dict d;
  d["lambda1"] = s.lambda1;
  d["lambda2"] = s.lambda2;
  d["lambda2_direct"] = s.lambda2_direct;
  d["ci_halfwidth"] = s.ci_halfwidth;
  d["ci_direct"] = s.ci_direct;
  d["mean_trace"] = s.mean_trace;
  d["jump"] = s.jump();
  d["horizon_time"] = s.horizon_time;
  d["ensemble_size"] = s.ensemble_size;
  d["method"] = s.method;
  d["flagged"] = s.flagged;
  return d;
}

RunOptions run_options(const std::string& out, std::optional<std::uint64_t> seed) {
  RunOptions o;
  o.out_dir = out;
  o.seed_given = seed.has_value();
  if (seed) o.seed = *seed;
  return o;
}

using Command = int (*)(const ExperimentConfig&, const RunOptions&);

void bind_command(py::module_& m, const char* name, Command cmd, const char* doc) {
  m.def(
      name,
      [cmd](const std::string& config, const std::string& out, std::optional<std::uint64_t> seed) {
        ExperimentConfig cfg = load_config(config);
        py::gil_scoped_release release;
        return cmd(cfg, run_options(out, seed));
      },
      py::arg("config"), py::arg("out"), py::arg("seed") = py::none(), doc);
}

}  // namespace

PYBIND11_MODULE(_kinetic, m) {
  m.doc() = "Lyapunov spectrum experiments for kinetic cocycles over flows";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  bind_command(m, "spectrum", cmd_spectrum, "Run the spectrum experiment; returns the exit code.");
  bind_command(m, "distance", cmd_distance, "Run the distance experiment; returns the exit code.");
  bind_command(m, "perturb", cmd_perturb, "Build the global swap and check it; returns the exit code.");
  bind_command(m, "lower", cmd_lower, "Lower the top exponent; returns the exit code.");
  bind_command(m, "collapse", cmd_collapse, "Iterate lowering; returns the exit code.");
  bind_command(m, "usc_probe", cmd_usc_probe, "Probe upper semicontinuity; returns the exit code.");

  m.def(
      "estimate_spectrum",
      [](const std::string& config_text, const std::string& generator, std::optional<std::uint64_t> seed) {
        ExperimentConfig cfg = parse_config_text(config_text);
        const GeneratorPtr& g = cfg.generator(generator);
        SpectrumEstimate s;
        {
          py::gil_scoped_release release;
          s = estimate_spectrum(*g, cfg.estimator, seed.value_or(cfg.seed));
        }
        return spectrum_dict(s);
      },
      py::arg("config_text"), py::arg("generator"), py::arg("seed") = py::none(),
      "Spectrum of one generator declared in a YAML document, with the document's estimator settings.");

  m.def(
      "sigma_p",
      [](const std::string& config_text, const std::string& a, const std::string& b, double p, std::size_t samples,
         std::uint64_t seed, bool exact) {
        ExperimentConfig cfg = parse_config_text(config_text);
        DistanceOptions o{exact ? DistanceMethod::exact_support : DistanceMethod::monte_carlo, seed, samples};
        DistanceEstimate d = sigma_p(*cfg.generator(a), *cfg.generator(b), p, o);
        return py::make_tuple(d.value, d.std_error);
      },
      py::arg("config_text"), py::arg("a"), py::arg("b"), py::arg("p") = 1.0, py::arg("samples") = 100000,
      py::arg("seed") = 1, py::arg("exact") = false, "Bounded distance sigma_p and its standard error.");

  m.def("rotation_propagator", [](double theta, double t) {
    Mat2d r = rotation_propagator(theta, t);
    return std::vector<std::vector<double>>{{r.a, r.b}, {r.c, r.d}};
  }, py::arg("theta"), py::arg("t"), "exp(t P(theta)) as nested lists.");
}
