// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.
//
//   siit_acceptance [--work DIR] [--schemas DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "siit/cli.hpp"
#include "siit/discovery.hpp"
#include "siit/error.hpp"
#include "siit/io.hpp"
#include "siit/ops.hpp"
#include "siit/persistence.hpp"
#include "siit/stats.hpp"
#include "support/composites.hpp"
#include "support/schema_check.hpp"

#ifndef SIIT_SOURCE_DIR
#define SIIT_SOURCE_DIR "."
#endif

using namespace siit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 3;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

void cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  std::cerr << "  $ siit";
  for (const std::string& a : args) std::cerr << ' ' << a;
  std::cerr << '\n';
  const int code = run_cli(args, out, err);
  if (code != 0) throw std::runtime_error("command failed (" + std::to_string(code) + "): " + err.str());
}

json load_json(const fs::path& p) { return json::parse(read_file(p)); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct Workspace {
  fs::path root;
  fs::path schemas;
  double train_seconds_seed0 = 0.0;

  fs::path model(int seed) const { return root / ("frac_x-s" + std::to_string(seed)); }
  fs::path control() const { return root / "frac_x-s0-iit"; }
  fs::path discovery(int seed, const std::string& algo) const {
    return root / "discovery" / ("frac_x-s" + std::to_string(seed) + "-" + algo + ".json");
  }
  fs::path eval_report(const fs::path& model, const std::string& kind) const {
    return root / "eval" / (model.filename().string() + "-" + kind + ".csv");
  }
  fs::path report_dir() const { return root / "report-frac_x-s0"; }
};

// ---- pipeline ----

void build(Workspace& w) {
  fs::remove_all(w.root);
  fs::create_directories(w.root / "discovery");
  fs::create_directories(w.root / "eval");
  for (int s = 0; s < kSeeds; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    cli({"train", "--task", "frac_x", "--seed", std::to_string(s), "--iia-target", "0.99", "--siia-target", "0.99",
         "--out", w.model(s).string()});
    if (s == 0) w.train_seconds_seed0 = seconds_since(t0);
  }
  cli({"train", "--task", "frac_x", "--seed", "0", "--iit-only", "--iia-target", "0.99", "--out",
       w.control().string()});
  for (const fs::path& m : {w.model(0), w.control()}) {
    cli({"eval", "--model", m.string(), "--ablation", "interchange", "--report", w.eval_report(m, "interchange").string()});
    cli({"eval", "--model", m.string(), "--ablation", "mean", "--report", w.eval_report(m, "mean").string()});
  }
  cli({"report", "--model", w.model(0).string(), "--compare-model", w.control().string(), "--out",
       w.report_dir().string()});
  for (int s = 0; s < kSeeds; ++s) {
    const std::string m = w.model(s).string();
    cli({"discover", "--model", m, "--algo", "acdc", "--sweep", "tau=1e-5..1e-1:log10", "--out",
         w.discovery(s, "acdc").string()});
    cli({"discover", "--model", m, "--algo", "node_sp", "--sweep", "lambda=1e-3..1e-1:log10", "--out",
         w.discovery(s, "node_sp").string()});
    cli({"discover", "--model", m, "--algo", "eap_ig", "--out", w.discovery(s, "eap_ig").string()});
  }
  cli({"compare", "--results", (w.root / "discovery" / "*.json").string(), "--out", (w.root / "comparison.csv").string()});
}

// ---- criteria ----

Verdict a1(const Workspace& w) {
  const json rep = load_json(w.model(0) / "train_report.json");
  const json& last = rep.at("epochs").back();
  const double iia = last.at("iia").get<double>(), siia = last.at("siia").get<double>();
  const int epochs = static_cast<int>(rep.at("epochs").size());
  const bool ok = iia >= 0.99 && siia >= 0.99 && epochs <= 200 && w.train_seconds_seed0 < 1800.0;
  return {ok, "IIA=" + fmt(iia) + " SIIA=" + fmt(siia) + " epochs=" + std::to_string(epochs) + " time=" +
                  fmt(w.train_seconds_seed0, 1) + "s (need IIA,SIIA>=0.99 within 200 epochs, <1800s)"};
}

Verdict a2(const Workspace& w) {
  const json siit = load_json(w.eval_report(w.model(0), "interchange").replace_extension(".json"));
  const json iit = load_json(w.eval_report(w.control(), "interchange").replace_extension(".json"));
  const double in_med = siit.at("in_circuit").at("median").get<double>();
  const double out_med = siit.at("out_of_circuit").at("median").get<double>();
  const double ctrl_max = iit.at("out_of_circuit").at("max").get<double>();
  const double siit_iia = load_json(w.model(0) / "meta.json").at("iia").get<double>();
  const double ctrl_iia = load_json(w.control() / "meta.json").at("iia").get<double>();
  const bool ok = out_med <= 0.02 && in_med >= 0.2 && ctrl_max >= 0.1 && ctrl_iia >= 0.99;
  return {ok, "SIIT out-median=" + fmt(out_med) + " (<=0.02) in-median=" + fmt(in_med) + " (>=0.2); IIT control max out=" +
                  fmt(ctrl_max) + " (>=0.1) at IIA " + fmt(ctrl_iia) + " vs " + fmt(siit_iia)};
}

Verdict a3(const Workspace& w) {
  const json rep = load_json(w.report_dir() / "report.json");
  std::map<double, double> acc;
  bool monotone = true;
  double prev = -1.0;
  for (const json& p : rep.at("atol_sweep")) {
    const double a = p.at("accuracy").get<double>();
    monotone = monotone && a >= prev;
    prev = a;
    acc[p.at("atol").get<double>()] = a;
  }
  const double at10 = acc.at(0.1), at25 = acc.at(0.25);
  const bool ok = at25 >= 0.8 && monotone && at25 - at10 >= 0.3;
  return {ok, "mean-ablated accuracy atol0.1=" + fmt(at10) + " atol0.25=" + fmt(at25) + " (>=0.8) rise=" +
                  fmt(at25 - at10) + " (>=0.3) monotone=" + (monotone ? "yes" : "no")};
}

Verdict a4(const Workspace& w) {
  std::vector<double> acdc, sp, ig, gap_sp, gap_ig;
  for (int s = 0; s < kSeeds; ++s) {
    acdc.push_back(load_json(w.discovery(s, "acdc")).at("best_auc").get<double>());
    sp.push_back(load_json(w.discovery(s, "node_sp")).at("best_auc").get<double>());
    ig.push_back(load_json(w.discovery(s, "eap_ig")).at("best_auc").get<double>());
    gap_sp.push_back(acdc.back() - sp.back());
    gap_ig.push_back(std::abs(acdc.back() - ig.back()));
  }
  const double min_acdc = *std::min_element(acdc.begin(), acdc.end());
  const bool ok = min_acdc >= 0.9 && median(gap_sp) >= 0.05 && median(gap_ig) <= 0.1;
  std::string per;
  for (int s = 0; s < kSeeds; ++s) {
    per += " s" + std::to_string(s) + "[acdc " + fmt(acdc[static_cast<std::size_t>(s)], 3) + " sp " +
           fmt(sp[static_cast<std::size_t>(s)], 3) + " ig " + fmt(ig[static_cast<std::size_t>(s)], 3) + "]";
  }
  return {ok, "min ACDC=" + fmt(min_acdc) + " (>=0.9) median(ACDC-nodeSP)=" + fmt(median(gap_sp)) +
                  " (>=0.05) median|ACDC-EAPIG|=" + fmt(median(gap_ig)) + " (<=0.1);" + per};
}

Verdict a5() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto composites = testing::gradcheck_composites();
  double worst = 0.0;
  std::string worst_name;
  bool failed = false;
  for (const auto& c : composites) {
    const GradCheckReport r = grad_check(c.f, c.x, 1e-5, 1e-4, c.kink);
    failed = failed || r.failed || r.checked == 0;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = c.name;
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = composites.size() >= 20 && !failed && worst < 1e-4 && secs < 60.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", worst);
  return {ok, std::to_string(composites.size()) + " composites, max rel error " + buf + " (" + worst_name +
                  ", <1e-4), " + fmt(secs, 1) + "s (<60s)"};
}

Verdict a6(const Workspace& w) {
  std::mt19937_64 gen(2026);
  // (i) trapezoid AUC against brute-force pair counting.
  const CircuitGraph g = build_edge_graph(task_by_name("frac_x").model_config(0), Granularity::head);
  std::uniform_int_distribution<int> level(0, 9);
  std::bernoulli_distribution coin(0.25);
  double roc_err = 0.0;
  for (int t = 0; t < 100; ++t) {
    EdgeScores s;
    EdgeLabels l;
    for (const Edge& e : g.edges) {
      s[e] = level(gen) / 9.0;
      l[e] = coin(gen);
    }
    l[g.edges.front()] = true;
    l[g.edges.back()] = false;
    double wins = 0.0, total = 0.0;
    for (const auto& [ep, lp] : l) {
      for (const auto& [en, ln] : l) {
        if (lp && !ln) {
          wins += s[ep] > s[en] ? 1.0 : (s[ep] == s[en] ? 0.5 : 0.0);
          total += 1.0;
        }
      }
    }
    roc_err = std::max(roc_err, std::abs(roc_auc(s, l).auc - wins / total));
  }
  // (ii) exact U-test p against enumeration of all relabellings.
  double mw_err = 0.0;
  int mw_cases = 0;
  for (std::size_t n = 1; n <= 5; ++n) {
    for (int t = 0; t < 20; ++t, ++mw_cases) {
      std::vector<double> a(n), b(n);
      for (double& x : a) x = level(gen) / 4.0;
      for (double& x : b) x = level(gen) / 4.0;
      std::vector<double> pooled = a;
      pooled.insert(pooled.end(), b.begin(), b.end());
      auto u_of = [](const std::vector<double>& x, const std::vector<double>& y) {
        double u = 0.0;
        for (double p : x) {
          for (double q : y) u += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
        }
        return u;
      };
      const double centre = static_cast<double>(n * n) / 2.0, obs = std::abs(u_of(a, b) - centre);
      std::size_t hits = 0, all = 0;
      for (unsigned mask = 0; mask < (1u << (2 * n)); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != n) continue;
        std::vector<double> x, y;
        for (std::size_t i = 0; i < 2 * n; ++i) ((mask >> i) & 1u ? x : y).push_back(pooled[i]);
        ++all;
        hits += std::abs(u_of(x, y) - centre) >= obs - 1e-9;
      }
      mw_err = std::max(mw_err, std::abs(mann_whitney_u(a, b).p - static_cast<double>(hits) / static_cast<double>(all)));
    }
  }
  // (iii) A12 antisymmetry.
  bool antisym = true;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> a(1 + t % 6), b(1 + t % 4);
    for (double& x : a) x = level(gen);
    for (double& x : b) x = level(gen);
    antisym = antisym && vargha_delaney_a12(a, b).value + vargha_delaney_a12(b, a).value == 1.0;
  }
  // (iv) routing every edge from the corrupted run, on the trained model.
  const ModelBundle b = load_bundle(w.model(0));
  const TaskSpec& task = task_by_name(b.meta.task);
  const Dataset clean = sample_dataset(task, 64, 99).train;
  const CorruptedPairs cp = make_corrupted_pairs(task, clean, 99);
  const TokenBatch corrupted = TokenBatch::from_rows(cp.corrupted);
  const auto [corr_logits, corr_cache] = b.model.forward_with_cache(corrupted);
  double route_err = 0.0;
  for (Granularity gran : {Granularity::head, Granularity::qkv}) {
    const CircuitGraph graph = build_edge_graph(b.model.config(), gran);
    const EdgeRouter router(b.model, gran, corr_cache.contributions);
    const std::set<Edge> all(graph.edges.begin(), graph.edges.end());
    route_err = std::max(route_err, max_abs_diff(router.forward(clean.batch(), all), corr_logits));
  }
  const bool ok = roc_err <= 1e-12 && mw_err <= 1e-12 && antisym && route_err <= 1e-9;
  char buf[160];
  std::snprintf(buf, sizeof buf, "roc-vs-pairs %.1e (<=1e-12); exact-p-vs-enumeration %.1e over %d cases; A12 antisymmetry %s; routing %.1e (<=1e-9)",
                roc_err, mw_err, mw_cases, antisym ? "exact" : "BROKEN", route_err);
  return {ok, buf};
}

Verdict a7() {
  int checked = 0, failures = 0;
  double worst_stream = 0.0;
  std::string first_failure;
  for (const TaskSpec& t : builtin_tasks()) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const Transformer m(t.model_config(seed));
      const DatasetSplit d = sample_dataset(t, 32, seed + 11);
      std::vector<Sequence> bs(d.train.inputs.begin(), d.train.inputs.begin() + 16);
      std::vector<Sequence> ss(d.train.inputs.begin() + 16, d.train.inputs.end());
      const TokenBatch base = TokenBatch::from_rows(bs), source = TokenBatch::from_rows(ss);
      const Tensor plain = m.forward(base);
      std::vector<NodeId> everything{NodeId::embed()};
      for (const NodeId& n : m.internal_nodes()) everything.push_back(n);
      const bool self = bitwise_equal(int_inv(m, base, base, m.internal_nodes()), plain);
      const bool empty = bitwise_equal(int_inv(m, base, source, {}), plain);
      const bool full = bitwise_equal(int_inv(m, base, source, everything), m.forward(source));
      // Internal nodes alone: the final stream is base embed + every source contribution.
      const auto src = m.forward_with_cache(source).second;
      Tensor want = m.forward_with_cache(base).second.at(NodeId::embed());
      for (const NodeId& n : m.internal_nodes()) want = ops::add(want, src.at(n));
      struct Final : ForwardHooks {
        PatchPlan plan;
        Tensor stream;
        Tensor node_output(const NodeId& n, const Tensor& natural) override {
          auto it = plan.find(n);
          return it == plan.end() ? natural : it->second;
        }
        void observe_final(const Tensor& s, const Tensor&) override { stream = s; }
      } hooks;
      hooks.plan = interchange_plan(src, m.internal_nodes());
      m.forward(base, &hooks);
      const double stream_err = max_abs_diff(hooks.stream, want);
      worst_stream = std::max(worst_stream, stream_err);
      const bool ok = self && empty && full && stream_err <= 1e-12;
      ++checked;
      if (!ok) {
        ++failures;
        if (first_failure.empty()) first_failure = " first failure: " + t.name + " seed " + std::to_string(seed);
      }
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1e", worst_stream);
  return {failures == 0, std::to_string(checked - failures) + "/" + std::to_string(checked) +
                             " task-seed cases: self, empty and embed+internal identities bitwise; internal-only stream oracle " +
                             buf + " (<=1e-12)" + first_failure};
}

std::string slurp(const fs::path& p) { return read_file(p); }

Verdict a8(const Workspace& w) {
  std::vector<std::string> problems;
  // Round trip through a second save.
  const ModelBundle b = load_bundle(w.model(0));
  const fs::path copy = w.root / "roundtrip";
  save_bundle(b, copy);
  const ModelBundle c = load_bundle(copy);
  const TokenBatch probe = sample_dataset(task_by_name("frac_x"), 128, 5).train.batch();
  if (!bitwise_equal(b.model.forward(probe), c.model.forward(probe))) problems.push_back("round-trip forward differs");
  if (slurp(copy / "weights.bin") != slurp(w.model(0) / "weights.bin")) problems.push_back("weights.bin differs after re-save");

  // Schema validation of every emitted document.
  std::size_t validated = 0;
  auto validate = [&](const std::string& schema_name, const json& doc, const std::string& what) {
    const json schema = load_json(w.schemas / schema_name);
    for (const std::string& e : testing::schema_errors(schema, doc)) problems.push_back(what + e);
    ++validated;
  };
  for (const fs::path& m : {w.model(0), w.model(1), w.model(2), w.control()}) {
    validate("metadata.schema.json", testing::csv_to_json(testing::parse_csv(slurp(m / "metadata.csv"))),
             (m / "metadata.csv").string());
    validate("metadata.schema.json", load_json(m / "metadata.json"), (m / "metadata.json").string());
    validate("model_config.schema.json", load_json(m / "config.json"), (m / "config.json").string());
    validate("weights_manifest.schema.json", load_json(m / "weights.manifest.json"), (m / "weights.manifest.json").string());
    validate("alignment.schema.json", load_json(m / "alignment.json"), (m / "alignment.json").string());
    validate("edges.schema.json", load_json(m / "edges.json"), (m / "edges.json").string());
    validate("training_meta.schema.json", load_json(m / "meta.json"), (m / "meta.json").string());
    validate("train_report.schema.json", load_json(m / "train_report.json"), (m / "train_report.json").string());
    validate("run_manifest.schema.json", load_json(m / "manifest.json"), (m / "manifest.json").string());
  }
  for (const fs::path& m : {w.model(0), w.control()}) {
    for (const char* kind : {"interchange", "mean"}) {
      const fs::path r = w.eval_report(m, kind);
      validate("node_effects.schema.json", load_json(fs::path(r).replace_extension(".json")), r.string());
    }
  }
  for (int s = 0; s < kSeeds; ++s) {
    for (const char* algo : {"acdc", "node_sp", "eap_ig"}) {
      validate("discovery.schema.json", load_json(w.discovery(s, algo)), w.discovery(s, algo).string());
    }
  }
  validate("comparison.schema.json", testing::csv_to_json(testing::parse_csv(slurp(w.root / "comparison.csv"))),
           "comparison.csv");
  validate("report.schema.json", load_json(w.report_dir() / "report.json"), "report.json");

  // Re-running each manifest rewrites its outputs byte for byte.
  std::vector<fs::path> manifests{w.model(0) / "manifest.json", w.report_dir() / "manifest.json",
                                  w.root / "comparison.manifest.json"};
  for (const char* kind : {"interchange", "mean"}) {
    manifests.push_back(fs::path(w.eval_report(w.model(0), kind)).replace_extension(".manifest.json"));
  }
  for (const char* algo : {"acdc", "node_sp", "eap_ig"}) {
    manifests.push_back(fs::path(w.discovery(0, algo)).replace_extension(".manifest.json"));
  }
  std::size_t compared = 0;
  for (const fs::path& mf : manifests) {
    const RunManifest rm = RunManifest::from_json(load_json(mf));
    std::map<std::string, std::string> before;
    for (const std::string& o : rm.outputs) before[o] = slurp(o);
    const std::string manifest_before = slurp(mf);
    cli({"rerun", "--manifest", mf.string()});
    for (const auto& [o, bytes] : before) {
      ++compared;
      if (slurp(o) != bytes) problems.push_back("rerun changed " + o);
    }
    if (slurp(mf) != manifest_before) problems.push_back("rerun changed " + mf.string());
  }
  std::string detail = "round trip bitwise; " + std::to_string(validated) + " documents schema-checked; " +
                       std::to_string(compared) + " outputs from " + std::to_string(manifests.size()) +
                       " manifests byte-identical on rerun";
  if (!problems.empty()) {
    detail = std::to_string(problems.size()) + " problem(s), first: " + problems.front();
  }
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  Workspace w;
  w.root = "acceptance-work";
  w.schemas = fs::path(SIIT_SOURCE_DIR) / "schemas";
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--work") {
      w.root = argv[i + 1];
    } else if (flag == "--schemas") {
      w.schemas = argv[i + 1];
    } else {
      std::cerr << "usage: siit_acceptance [--work DIR] [--schemas DIR]\n";
      return 2;
    }
  }
  w.root = fs::absolute(w.root);

  std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"A1", [&] { return a1(w); }}, {"A2", [&] { return a2(w); }}, {"A3", [&] { return a3(w); }},
      {"A4", [&] { return a4(w); }}, {"A5", [] { return a5(); }},   {"A6", [&] { return a6(w); }},
      {"A7", [] { return a7(); }},   {"A8", [&] { return a8(w); }}};

  std::string build_error;
  try {
    std::cerr << "building models and reports in " << w.root.string() << "\n";
    build(w);
  } catch (const std::exception& e) {
    build_error = e.what();
  }

  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Verdict v;
    const bool needs_build = name != "A5" && name != "A7";
    if (needs_build && !build_error.empty()) {
      v = {false, "pipeline failed: " + build_error};
    } else {
      try {
        v = run();
      } catch (const std::exception& e) {
        v = {false, std::string("error: ") + e.what()};
      }
    }
    failed += !v.pass;
    std::cout << name << ' ' << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
