#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mpcrl/analysis.hpp"
#include "mpcrl/errors.hpp"
#include "mpcrl/harness.hpp"

namespace py = pybind11;
using namespace mpcrl;

namespace {

ConfigMap build_config(const std::string& source, const std::vector<std::string>& overrides) {
  ConfigMap map;
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), source) != names.end()) {
    map = preset(source);
  } else {
    map = parse_config_text(source);
  }
  for (const auto& o : overrides) apply_override(map, o);
  return map;
}

py::dict curve_dict(const LearningCurve& c) {
  py::dict d;
  d["config"] = config_text(c.config);
  d["returns"] = c.returns();
  d["mean"] = c.stats.mean;
  d["std"] = c.stats.stddev;
  std::vector<std::uint64_t> seeds;
  for (const auto& t : c.trials) seeds.push_back(t.seed);
  d["seeds"] = seeds;
  return d;
}

class PyEnv {
 public:
  PyEnv(const std::string& id, const EnvOverrides& overrides) : env_(make_environment(id, overrides)) {}

  Vector reset(std::uint64_t seed) {
    Rng rng(seed);
    return env_->reset(rng);
  }
  py::tuple step(const Vector& action) {
    const auto s = env_->step(action);
    return py::make_tuple(s.observation, s.reward, s.terminal, s.truncated);
  }
  std::size_t observation_dim() const { return env_->observation_dim(); }
  py::dict action_space() const {
    const auto a = env_->action_space();
    py::dict d;
    if (a.is_discrete()) {
      d["n"] = a.discrete_count;
    } else {
      d["low"] = a.low;
      d["high"] = a.high;
    }
    return d;
  }
  int step_cap() const { return env_->step_cap(); }
  std::string id() const { return env_->id(); }

 private:
  std::unique_ptr<Environment> env_;
};

}  // namespace

PYBIND11_MODULE(_mpcrl, m) {
  m.doc() = "MPC-based value estimation experiments";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "improvement_bound",
      [](double r_max, double gamma, int k, double eps_pi, double eps_m, int horizon) {
        return improvement_bound({r_max, gamma, k, eps_pi, eps_m, horizon});
      },
      py::arg("r_max"), py::arg("gamma"), py::arg("k"), py::arg("eps_pi"), py::arg("eps_m"), py::arg("horizon"));
  m.def(
      "optimal_horizon",
      [](double r_max, double gamma, int k, double eps_pi, double eps_m, const std::vector<int>& candidates) {
        const auto c = optimal_horizon({r_max, gamma, k, eps_pi, eps_m, 1}, candidates);
        return py::make_tuple(c.best, c.objective);
      },
      py::arg("r_max"), py::arg("gamma"), py::arg("k"), py::arg("eps_pi"), py::arg("eps_m"), py::arg("candidates"),
      "Returns (best horizon, objective per candidate).");

  m.def("preset_names", &preset_names);
  m.def("preset", &preset, py::arg("name"));
  m.def(
      "resolve_config",
      [](const std::string& source, const std::vector<std::string>& overrides) {
        return config_text(resolve_config(build_config(source, overrides)));
      },
      py::arg("source"), py::arg("overrides") = std::vector<std::string>{},
      "Canonical config text for a preset name or config text plus key=value overrides.");
  m.def(
      "train",
      [](const std::string& source, const std::vector<std::string>& overrides, std::optional<std::string> out,
         int jobs) {
        const auto cfg = resolve_config(build_config(source, overrides));
        LearningCurve curve;
        {
          py::gil_scoped_release release;
          curve = run_experiment(cfg, jobs);
        }
        if (out) emit_results(curve, *out);
        return curve_dict(curve);
      },
      py::arg("source"), py::arg("overrides") = std::vector<std::string>{}, py::arg("out") = py::none(),
      py::arg("jobs") = 1,
      "Runs every trial of a preset or config text; optionally writes the result files to `out`.");
  m.def(
      "aggregate_trials",
      [](const std::vector<std::vector<double>>& curves) {
        const auto s = aggregate_trials(curves);
        return py::make_tuple(s.mean, s.stddev);
      },
      py::arg("curves"), "Per-episode mean and population standard deviation.");
  m.def("trial_seeds", &trial_seeds, py::arg("master"), py::arg("trials"));
  m.def(
      "evaluate_checkpoint",
      [](const std::filesystem::path& path, const std::string& env, int episodes, std::uint64_t seed) {
        const auto ev = evaluate_checkpoint(path, env, episodes, seed);
        return py::make_tuple(ev.kind, ev.returns, ev.mean);
      },
      py::arg("path"), py::arg("env"), py::arg("episodes") = 10, py::arg("seed") = 0);

  py::class_<PyEnv>(m, "Environment")
      .def(py::init<const std::string&, const EnvOverrides&>(), py::arg("id"),
           py::arg("overrides") = EnvOverrides{})
      .def("reset", &PyEnv::reset, py::arg("seed") = 0)
      .def("step", &PyEnv::step, py::arg("action"), "Returns (observation, reward, terminal, truncated).")
      .def_property_readonly("observation_dim", &PyEnv::observation_dim)
      .def_property_readonly("action_space", &PyEnv::action_space)
      .def_property_readonly("step_cap", &PyEnv::step_cap)
      .def_property_readonly("id", &PyEnv::id);

  m.def(
      "cliff_step",
      [](int row, int col, int action) {
        const auto s = cliff_step({row, col}, static_cast<CliffAction>(action));
        return py::make_tuple(py::make_tuple(s.next.row, s.next.col), s.reward, s.done);
      },
      py::arg("row"), py::arg("col"), py::arg("action"), "Actions: 0 up, 1 down, 2 left, 3 right.");
}
