// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "siit/cli.hpp"
#include "siit/discovery.hpp"
#include "siit/error.hpp"
#include "siit/persistence.hpp"
#include "siit/stats.hpp"
#include "siit/tasks.hpp"

namespace py = pybind11;
using namespace siit;

namespace {

EdgeScores to_scores(const std::map<std::string, double>& m) {
  EdgeScores out;
  for (const auto& [k, v] : m) out[Edge::parse(k)] = v;
  return out;
}

EdgeLabels to_labels(const std::map<std::string, bool>& m) {
  EdgeLabels out;
  for (const auto& [k, v] : m) out[Edge::parse(k)] = v;
  return out;
}

// (B, S, W) nested lists.
std::vector<std::vector<std::vector<double>>> nest(const Tensor& t) {
  const std::size_t b = t.dim(0), s = t.dim(1), w = t.dim(2);
  std::vector<std::vector<std::vector<double>>> out(b, std::vector<std::vector<double>>(s, std::vector<double>(w)));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < w; ++k) out[i][j][k] = t[(i * s + j) * w + k];
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Strict interchange intervention training and circuit discovery benchmark";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NodeError>(m, "NodeError", base.ptr());
  py::register_exception<IntegrityError>(m, "IntegrityError", base.ptr());
  py::register_exception<MigrationError>(m, "MigrationError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  m.attr("FORMAT_VERSION") = kFormatVersion;

  m.def("task_names", [] {
    std::vector<std::string> names;
    for (const TaskSpec& t : builtin_tasks()) names.push_back(t.name);
    return names;
  });
  m.def(
      "task_info",
      [](const std::string& name) {
        const TaskSpec& t = task_by_name(name);
        py::dict d;
        d["name"] = t.name;
        d["description"] = t.description;
        d["task_type"] = t.task_type();
        d["vocab"] = t.vocab;
        d["seq_len"] = t.seq_len;
        d["variables"] = t.high_level->variable_names();
        d["output_variable"] = t.high_level->output_variable();
        return d;
      },
      py::arg("task"));
  m.def(
      "sample_inputs",
      [](const std::string& name, std::size_t n, std::uint64_t seed) {
        return sample_dataset(task_by_name(name), n, seed).train.inputs;
      },
      py::arg("task"), py::arg("n"), py::arg("seed") = 0);
  m.def(
      "run_high_level",
      [](const std::string& name, const Sequence& input, const std::map<std::string, Values>& overrides) {
        const HLRun r = task_by_name(name).high_level->run(input, overrides);
        return py::make_tuple(r.output, r.cache);
      },
      py::arg("task"), py::arg("input"), py::arg("overrides") = std::map<std::string, Values>{});
  m.def(
      "int_inv",
      [](const std::string& name, const Sequence& base, const Sequence& source, const std::string& variable) {
        return task_by_name(name).high_level->int_inv(base, source, variable);
      },
      py::arg("task"), py::arg("base"), py::arg("source"), py::arg("variable"));

  py::class_<ModelBundle>(m, "Model")
      .def_static(
          "load", [](const std::filesystem::path& dir) { return load_bundle(dir); }, py::arg("dir"))
      .def(
          "forward", [](const ModelBundle& b, const std::vector<Sequence>& rows) {
            return nest(b.model.forward(TokenBatch::from_rows(rows)));
          },
          py::arg("rows"))
      .def_property_readonly("parameter_count", [](const ModelBundle& b) { return b.model.parameter_count(); })
      .def_property_readonly("case", [](const ModelBundle& b) { return b.meta.case_name; })
      .def_property_readonly("task", [](const ModelBundle& b) { return b.meta.task; })
      .def_property_readonly("circuit_nodes",
                             [](const ModelBundle& b) {
                               std::vector<std::string> out;
                               for (const NodeId& n : b.alignment.circuit_nodes()) out.push_back(n.str());
                               return out;
                             })
      .def_property_readonly("edge_labels", [](const ModelBundle& b) {
        std::map<std::string, bool> out;
        for (const auto& [e, v] : b.edges) out[e.str()] = v;
        return out;
      });

  m.def(
      "roc_auc",
      [](const std::map<std::string, double>& scores, const std::map<std::string, bool>& labels) {
        return roc_auc(to_scores(scores), to_labels(labels)).auc;
      },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "pair_statistic",
      [](const std::map<std::string, double>& scores, const std::map<std::string, bool>& labels) {
        return pair_statistic(to_scores(scores), to_labels(labels));
      },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "mann_whitney_u",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const MannWhitneyResult r = mann_whitney_u(a, b);
        return py::make_tuple(r.u, r.p, r.exact);
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "vargha_delaney_a12",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const A12Result r = vargha_delaney_a12(a, b);
        return py::make_tuple(r.value, std::string(to_string(r.magnitude)));
      },
      py::arg("a"), py::arg("b"));
  m.def("parse_sweep", [](const std::string& text) {
    const Sweep s = parse_sweep(text);
    return py::make_tuple(s.param, s.values);
  });

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
