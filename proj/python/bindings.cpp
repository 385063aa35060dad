// SPDX-License-Identifier: Apache-2.0
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "srppo/errors.hpp"
#include "srppo/ppo.hpp"
#include "srppo/run_directory.hpp"

namespace py = pybind11;
using namespace srppo;

namespace {

ExperimentConfig parse(const std::string& config_json) {
  return config_from_json(nlohmann::json::parse(config_json));
}

}  // namespace

PYBIND11_MODULE(_srppo, m) {
  m.doc() = "Coherent-reward PPO on a synthetic token world";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<OracleUnavailable>(m, "OracleUnavailable", PyExc_RuntimeError);

  m.def(
      "load_config",
      [](const fs::path& path, std::optional<std::string> output_dir, std::optional<std::uint64_t> seed,
         std::optional<std::vector<std::string>> stages) {
        return to_json(load_config(path, RunOverrides{output_dir, seed, stages})).dump();
      },
      py::arg("path"), py::arg("output_dir") = py::none(), py::arg("seed") = py::none(),
      py::arg("stages") = py::none(), "Resolved config as a JSON string.");

  m.def(
      "resolve_config", [](const std::string& config_json) { return to_json(parse(config_json)).dump(); },
      py::arg("config_json"), "Validate a JSON config and return it with every default filled in.");

  m.def(
      "run_experiment",
      [](const std::string& config_json) {
        const auto c = parse(config_json);
        py::gil_scoped_release release;
        return run_experiment(c);
      },
      py::arg("config_json"), "Run the configured stages; returns the run directory.");

  m.def(
      "generate_report",
      [](const fs::path& run_dir) {
        const auto r = generate_report(run_dir);
        return py::make_tuple(r.files, r.absent_stages);
      },
      py::arg("run_dir"), "Regenerate report/; returns (files, absent_stages).");

  m.def(
      "compare_runs",
      [](const std::vector<fs::path>& run_dirs) {
        std::ostringstream out;
        write_compare_csv(out, compare_runs(run_dirs));
        return out.str();
      },
      py::arg("run_dirs"), "Comparison table as CSV text; best cells end with '*'.");

  m.def(
      "compute_gae",
      [](const std::vector<double>& rewards, const std::vector<double>& values, double gamma, double lambda) {
        auto r = compute_gae(rewards, values, gamma, lambda);
        return py::make_tuple(r.advantages, r.returns);
      },
      py::arg("rewards"), py::arg("values"), py::arg("gamma"), py::arg("lam"),
      "Advantages and returns of one episode.");
}
