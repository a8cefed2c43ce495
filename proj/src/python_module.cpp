#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <vector>

#include "cudpo/config.hpp"
#include "cudpo/dpo.hpp"
#include "cudpo/pipeline.hpp"
#include "cudpo/scoring.hpp"
#include "cudpo/theory.hpp"
#include "cudpo/world.hpp"

namespace py = pybind11;
using namespace cudpo;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Continuous-utility DPO toolkit";
  m.attr("__version__") = std::string(library_version());

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", [](const std::string& text) { return parse_run_config(text); }, py::arg("text"))
      .def_static("load", [](const std::filesystem::path& p) { return load_run_config(p); }, py::arg("path"))
      .def("set", &RunConfig::set, py::arg("key"), py::arg("value"))
      .def("validate", &RunConfig::validate)
      .def("snapshot", &RunConfig::snapshot)
      .def("to_text", &RunConfig::to_text)
      .def_readwrite("seed", &RunConfig::seed)
      .def_readwrite("run_id", &RunConfig::run_id)
      .def("__repr__", [](const RunConfig& c) { return "<RunConfig run_id=" + c.run_id + ">"; });

  py::class_<ArtifactDigest>(m, "ArtifactDigest")
      .def_readonly("path", &ArtifactDigest::path)
      .def_readonly("bytes", &ArtifactDigest::bytes)
      .def_readonly("sha256", &ArtifactDigest::sha256);

  py::class_<RunManifest>(m, "RunManifest")
      .def_readonly("version", &RunManifest::version)
      .def_readonly("run_id", &RunManifest::run_id)
      .def_readonly("status", &RunManifest::status)
      .def_readonly("failed_stage", &RunManifest::failed_stage)
      .def_readonly("error", &RunManifest::error)
      .def_readonly("jobs", &RunManifest::jobs)
      .def_readonly("config", &RunManifest::config)
      .def_readonly("timings", &RunManifest::timings)
      .def_readonly("artifacts", &RunManifest::artifacts);

  m.def("run_pipeline", &run_pipeline, py::arg("config"), py::arg("out_root"), py::arg("jobs") = 1,
        py::call_guard<py::gil_scoped_release>());
  m.def("load_manifest", &load_manifest, py::arg("path"));
  m.def("verify_manifest", &verify_manifest, py::arg("run_dir"));
  m.def("sha256_hex", [](const std::string& s) { return sha256_hex(s); }, py::arg("data"));

  m.def("world_utilities", [](const RunConfig& c) {
    const World w = generate_world(c.effective_world(), c.effective_judge());
    std::vector<std::vector<double>> out(w.n_problems());
    for (std::uint32_t p = 0; p < w.n_problems(); ++p) {
      for (std::uint32_t s = 0; s < w.k_strategies(); ++s) out[p].push_back(w.utility(p, StrategyId{s}));
    }
    return out;
  }, py::arg("config"));

  m.def("bt_probability", [](double margin) { return bt_probability({margin}); }, py::arg("margin"));
  m.def("closed_form_policy", [](const std::vector<std::vector<double>>& utilities, double beta) {
    std::vector<std::uint32_t> counts;
    for (const auto& row : utilities) counts.push_back(static_cast<std::uint32_t>(row.size()));
    return closed_form_policy(ReferencePolicy::uniform(counts), utilities, beta);
  }, py::arg("utilities"), py::arg("beta"));

  py::class_<MonteCarloEstimate>(m, "MonteCarloEstimate")
      .def_readonly("mean", &MonteCarloEstimate::mean)
      .def_readonly("standard_error", &MonteCarloEstimate::standard_error)
      .def_readonly("trials", &MonteCarloEstimate::trials);

  m.def("harmonic", &harmonic, py::arg("n"));
  m.def("coupon_collector_expected", &coupon_collector_expected, py::arg("k"));
  m.def("simulate_binary_passive", &simulate_binary_passive, py::arg("k"), py::arg("trials"), py::arg("draw"),
        py::arg("jobs") = 1, py::call_guard<py::gil_scoped_release>());
  m.def("robust_sample_count", &robust_sample_count, py::arg("noise_bound"), py::arg("epsilon"), py::arg("eta"));
  m.def("noise_term", &noise_term, py::arg("n_problems"), py::arg("noise_bound"), py::arg("epsilon"));
  m.def("fano_lower_bound", &fano_lower_bound, py::arg("k"), py::arg("error_prob"));
  m.def("clean_fraction", &clean_fraction, py::arg("k"));
}
