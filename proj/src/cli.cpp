// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/cli.hpp"

#include <glob.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "siit/discovery.hpp"
#include "siit/error.hpp"
#include "siit/io.hpp"
#include "siit/metrics.hpp"
#include "siit/persistence.hpp"
#include "siit/rng.hpp"
#include "siit/stats.hpp"

namespace siit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double parse_number(std::string_view s, std::string_view grid) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("sweep '" + std::string(grid) + "': bad number '" + std::string(s) + "'");
  }
  return v;
}

struct Globals {
  int threads = 1;
  bool timing = false;
};

fs::path with_suffix(const fs::path& path, const std::string& suffix) {
  fs::path p = path;
  p.replace_extension();
  p += suffix;
  return p;
}

void write_manifest(const fs::path& path, const std::string& command, const json& options,
                    const std::vector<fs::path>& outputs) {
  RunManifest m;
  m.command = command;
  m.options = options;
  for (const fs::path& p : outputs) m.outputs.push_back(p.string());
  atomic_write(path, m.to_json().dump(2) + "\n");
}

// Held-out inputs for evaluation and discovery, drawn from their own streams.
Dataset held_out(const TaskSpec& task, std::size_t n, std::uint64_t seed, std::string_view tag) {
  return sample_dataset(task, n, derive_seed(seed, tag)).train;
}

// ---- train ----

struct TrainArgs {
  std::string task;
  std::uint64_t seed = 0;
  double weight_iit = 1.0;
  double weight_siit = 1.0;
  double weight_behavior = 1.0;
  bool iit_only = false;
  bool natural = false;
  std::size_t samples = 5000;
  int max_epochs = 200;
  std::size_t batch_size = 512;
  double lr = 0.001;
  std::string update_mode = "sequential";
  double atol = 0.05;
  double iia_target = 1.0;
  double siia_target = 1.0;
  std::size_t n_interventions = 0;
  std::string case_name;
  std::string out;
};

int cmd_train(TrainArgs a, bool siia_target_set, const Globals& g, std::ostream& out) {
  const TaskSpec& task = task_by_name(a.task);
  if (a.natural) {
    a.weight_iit = 0.0;
    a.weight_siit = 0.0;
  } else if (a.iit_only) {
    a.weight_siit = 0.0;
  }
  // Without the strictness term SIIA is not a training target.
  if (a.weight_siit == 0.0 && !siia_target_set) a.siia_target = 0.0;
  const std::string mode = a.weight_siit > 0.0 ? "siit" : (a.weight_iit > 0.0 ? "iit" : "natural");
  if (a.case_name.empty()) {
    a.case_name = a.task + "-s" + std::to_string(a.seed) + (mode == "siit" ? "" : "-" + mode);
  }
  const fs::path dir = a.out.empty() ? default_output_dir() / a.case_name : fs::path(a.out);

  TrainConfig cfg;
  cfg.weight_iit = a.weight_iit;
  cfg.weight_siit = a.weight_siit;
  cfg.weight_behavior = a.weight_behavior;
  cfg.batch_size = a.batch_size;
  cfg.lr = a.lr;
  cfg.max_epochs = a.max_epochs;
  cfg.iia_target = a.iia_target;
  cfg.siia_target = a.siia_target;
  cfg.update_mode = update_mode_from_string(a.update_mode);
  cfg.atol = a.atol;
  cfg.seed = a.seed;
  cfg.n_interventions = a.n_interventions;
  cfg.validate();

  Transformer model(task.model_config(a.seed));
  Alignment alignment = make_alignment(*task.high_level, model.config(), a.seed);
  const DatasetSplit data = sample_dataset(task, a.samples, a.seed);
  TrainOptions topt;
  topt.threads = g.threads;
  topt.timing = g.timing;
  topt.on_epoch = [&](const EpochRecord& e) {
    char line[128];
    std::snprintf(line, sizeof line, "epoch %d iia=%.4f siia=%.4f acc=%.4f\n", static_cast<int>(e.epoch), e.iia,
                  e.siia, e.behavior_accuracy);
    out << line;
  };
  const TrainReport report = train(model, task, alignment, data, cfg, topt);

  TrainingMeta meta;
  meta.case_name = a.case_name;
  meta.task = task.name;
  meta.task_type = task.task_type();
  meta.description = task.description;
  meta.mode = mode;
  meta.train = cfg;
  meta.n_samples = a.samples;
  meta.epochs_run = static_cast<int>(report.epochs.size());
  meta.stop_reason = report.stop_reason;
  if (!report.epochs.empty()) {
    meta.iia = report.final().iia;
    meta.siia = report.final().siia;
    meta.behavior_accuracy = report.final().behavior_accuracy;
  }
  meta.n_nodes = static_cast<std::size_t>(model.config().node_count());
  meta.n_circuit_nodes = alignment.circuit_nodes().size();

  const CircuitGraph graph = build_edge_graph(model.config(), Granularity::head);
  EdgeLabels edges = ground_truth_edges(graph, alignment, *task.high_level);
  ModelBundle bundle{std::move(model), std::move(alignment), std::move(edges), meta};
  save_bundle(bundle, dir);
  atomic_write(dir / "train_report.json", report.to_json().dump(2) + "\n");
  atomic_write(dir / "loss.csv", report.loss_csv());
  const MetadataExport md = export_metadata({meta});
  atomic_write(dir / "metadata.csv", md.csv);
  atomic_write(dir / "metadata.json", md.json.dump(2) + "\n");

  json opts = {{"task", a.task},
               {"seed", a.seed},
               {"weight-iit", a.weight_iit},
               {"weight-siit", a.weight_siit},
               {"weight-behavior", a.weight_behavior},
               {"samples", a.samples},
               {"max-epochs", a.max_epochs},
               {"batch-size", a.batch_size},
               {"lr", a.lr},
               {"update-mode", a.update_mode},
               {"atol", a.atol},
               {"iia-target", a.iia_target},
               {"siia-target", a.siia_target},
               {"n-interventions", a.n_interventions},
               {"case", a.case_name},
               {"out", dir.string()},
               {"threads", g.threads},
               {"timing", g.timing}};
  write_manifest(dir / "manifest.json", "train", opts,
                 {dir / "config.json", dir / "weights.bin", dir / "weights.manifest.json", dir / "alignment.json",
                  dir / "edges.json", dir / "meta.json", dir / "train_report.json", dir / "loss.csv",
                  dir / "metadata.csv", dir / "metadata.json"});
  out << "saved " << dir.string() << " (" << report.stop_reason << ")\n";
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string model;
  std::string ablation = "interchange";
  std::string report;
  std::size_t samples = 1000;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double atol = 0.0;
};

int cmd_eval(EvalArgs a, bool atol_set, const Globals& g, std::ostream& out) {
  const ModelBundle b = load_bundle(a.model);
  const TaskSpec& task = task_by_name(b.meta.task);
  if (!a.seed_set) a.seed = b.meta.train.seed;
  if (!atol_set) a.atol = b.meta.train.atol;
  const AblationKind kind = ablation_kind_from_string(a.ablation);
  const fs::path report = a.report.empty() ? default_output_dir() / (b.meta.case_name + "-" + a.ablation + ".csv")
                                           : fs::path(a.report);
  const Dataset data = held_out(task, a.samples, a.seed, "eval");
  const PairSet pairs = make_pairs(data, a.seed, "eval-pairs");
  MeanCache means;
  if (kind == AblationKind::mean) means = compute_mean_cache(b.model, data.batch());
  const NodeEffectReport r =
      node_effect_report(b.model, task, b.alignment, pairs, kind, a.atol, &means, g.threads);
  json j = r.to_json();
  j["case"] = b.meta.case_name;
  if (kind != AblationKind::interchange && !b.alignment.non_circuit_nodes().empty()) {
    j["circuit_ablation_accuracy"] = circuit_ablation_accuracy(b.model, task, b.alignment, data, kind, a.atol, &means);
  }
  if (kind == AblationKind::interchange && task.output_kind() == OutputKind::categorical) {
    json kl = json::array();
    for (const auto& [node, effect] : r.effects) {
      json row = {{"node", node.str()}};
      try {
        const KlResult k = normalized_kl(b.model, task, node, pairs);
        row["normalized_kl"] = k.value;
        row["used"] = k.used;
        row["skipped"] = k.skipped;
      } catch (const DomainError&) {
        row["normalized_kl"] = nullptr;
      }
      kl.push_back(row);
    }
    j["normalized_kl"] = kl;
  }
  const fs::path summary = with_suffix(report, ".summary.csv");
  const fs::path detail = with_suffix(report, ".json");
  atomic_write(report, r.nodes_csv());
  atomic_write(summary, r.summary_csv(b.meta.case_name, b.meta.train.weight_siit));
  atomic_write(detail, j.dump(2) + "\n");
  json opts = {{"model", a.model},     {"ablation", a.ablation}, {"report", report.string()},
               {"samples", a.samples}, {"seed", a.seed},         {"atol", a.atol},
               {"threads", g.threads}, {"timing", g.timing}};
  write_manifest(with_suffix(report, ".manifest.json"), "eval", opts, {report, summary, detail});
  out << "wrote " << report.string() << "\n";
  return 0;
}

// ---- discover ----

struct DiscoverArgs {
  std::string model;
  std::string algo;
  std::string sweep;
  std::string granularity = "head";
  std::string replacement = "mean";
  std::size_t samples = 200;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double tau = 0.01;
  double lambda = 0.01;
  int epochs = 200;
  int steps = 10;
  std::string out;
};

const char* sweep_param(const std::string& algo) {
  if (algo == "acdc") return "tau";
  if (algo == "node_sp" || algo == "edge_sp") return "lambda";
  if (algo == "eap_ig") return "steps";
  if (algo == "eap") return "";
  throw ConfigError("unknown algorithm '" + algo + "'");
}

DiscoveryResult run_algorithm(const DiscoverArgs& a, double value, const ModelBundle& b, const TaskSpec& task,
                              const CircuitGraph& graph, const CorruptedPairs& cp) {
  if (a.algo == "acdc") {
    AcdcOptions o;
    o.tau = value;
    o.replacement = a.replacement == "mean" ? EdgeReplacement::mean : EdgeReplacement::corrupted;
    return acdc(b.model, task, graph, cp, o);
  }
  if (a.algo == "node_sp" || a.algo == "edge_sp") {
    SpOptions o;
    o.lambda = value;
    o.epochs = a.epochs;
    o.seed = a.seed;
    return a.algo == "node_sp" ? node_sp(b.model, task, graph, cp.clean, o) : edge_sp(b.model, task, graph, cp.clean, o);
  }
  if (a.algo == "eap_ig") {
    if (value < 1.0 || value != std::floor(value)) throw ConfigError("eap_ig: steps must be a positive integer");
    return eap_ig(b.model, task, graph, cp, static_cast<int>(value));
  }
  return eap(b.model, task, graph, cp);
}

std::set<Edge> promote_set(const std::set<Edge>& kept) {
  std::set<Edge> out;
  for (const Edge& e : kept) out.insert(Edge{e.src.head_level(), e.dst.head_level()});
  return out;
}

int cmd_discover(DiscoverArgs a, const Globals& g, std::ostream& out) {
  const ModelBundle b = load_bundle(a.model);
  const TaskSpec& task = task_by_name(b.meta.task);
  if (!a.seed_set) a.seed = b.meta.train.seed;
  const std::string param = sweep_param(a.algo);
  if (a.granularity != "head" && a.granularity != "qkv") throw ConfigError("granularity must be head or qkv");
  if (a.replacement != "mean" && a.replacement != "corrupted") throw ConfigError("replacement must be mean or corrupted");
  const Granularity gran = a.granularity == "qkv" ? Granularity::qkv : Granularity::head;

  std::vector<double> values;
  std::optional<Sweep> sweep;
  if (!a.sweep.empty()) {
    sweep = parse_sweep(a.sweep);
    if (param.empty()) throw ConfigError("eap takes no sweep parameter");
    if (sweep->param != param) throw ConfigError(a.algo + " sweeps '" + param + "', not '" + sweep->param + "'");
    values = sweep->values;
  } else if (param == "tau") {
    values = {a.tau};
  } else if (param == "lambda") {
    values = {a.lambda};
  } else {
    values = {static_cast<double>(a.steps)};
  }

  const fs::path path = a.out.empty() ? default_output_dir() / (b.meta.case_name + "-" + a.algo + ".json") : fs::path(a.out);
  const CircuitGraph graph = build_edge_graph(b.model.config(), gran);
  const Dataset clean = held_out(task, a.samples, a.seed, "discover");
  const CorruptedPairs cp = make_corrupted_pairs(task, clean, a.seed);

  json results = json::array();
  json score_auc = json::array();
  std::vector<std::set<Edge>> kept;
  double best = -1.0;
  for (double v : values) {
    DiscoveryResult r = run_algorithm(a, v, b, task, graph, cp);
    if (!g.timing) r.runtime_s.reset();
    const EdgeScores scores = gran == Granularity::qkv ? promote_qkv_to_heads(r.scores) : r.scores;
    const double auc = roc_auc(scores, b.edges).auc;
    best = std::max(best, auc);
    score_auc.push_back(auc);
    if (r.kept) kept.push_back(gran == Granularity::qkv ? promote_set(*r.kept) : *r.kept);
    results.push_back(r.to_json());
    out << a.algo << (param.empty() ? "" : " " + param + "=" + format_double(v)) << " auc=" << format_double(auc)
        << "\n";
  }
  json doc = {{"format_version", kFormatVersion},
              {"case", b.meta.case_name},
              {"task", task.name},
              {"algorithm", a.algo},
              {"granularity", a.granularity},
              {"samples", a.samples},
              {"seed", a.seed},
              {"sweep", sweep ? json{{"param", sweep->param}, {"values", sweep->values}} : json(nullptr)},
              {"results", results},
              {"score_auc", score_auc},
              {"sweep_auc", nullptr},
              {"sweep_roc", nullptr}};
  if (!kept.empty() && values.size() > 1) {
    const RocCurve roc = roc_from_sets(kept, b.edges);
    json pts = json::array();
    for (const RocPoint& p : roc.points) pts.push_back({p.fpr, p.tpr});
    doc["sweep_auc"] = roc.auc;
    doc["sweep_roc"] = pts;
    best = std::max(best, roc.auc);
  }
  doc["best_auc"] = best;
  atomic_write(path, doc.dump(2) + "\n");
  json opts = {{"model", a.model},         {"algo", a.algo},   {"sweep", a.sweep},         {"granularity", a.granularity},
               {"replacement", a.replacement}, {"samples", a.samples}, {"seed", a.seed}, {"tau", a.tau},
               {"lambda", a.lambda},       {"epochs", a.epochs}, {"steps", a.steps},    {"out", path.string()},
               {"threads", g.threads},     {"timing", g.timing}};
  write_manifest(with_suffix(path, ".manifest.json"), "discover", opts, {path});
  out << "best_auc=" << format_double(best) << " wrote " << path.string() << "\n";
  return 0;
}

// ---- compare ----

std::vector<fs::path> expand_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<fs::path> out;
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw ConfigError("glob failed for '" + pattern + "'");
  return out;
}

struct CompareArgs {
  std::vector<std::string> results;
  std::string out;
  double alpha = 0.05;
};

int cmd_compare(const CompareArgs& a, const Globals& g, std::ostream& out) {
  std::vector<fs::path> files;
  for (const std::string& pattern : a.results) {
    for (fs::path& p : expand_glob(pattern)) {
      // Sibling manifests share the glob's extension.
      if (p.string().ends_with(".manifest.json")) continue;
      files.push_back(std::move(p));
    }
  }
  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  if (files.empty()) throw ConfigError("compare: no result files match");
  AucTable table;
  json cells = json::array();
  for (const fs::path& f : files) {
    json doc;
    try {
      doc = json::parse(read_file(f));
    } catch (const json::exception& e) {
      throw IntegrityError(f.string() + ": " + e.what());
    }
    check_format_version(doc, f.string());
    const std::string c = doc.at("case").get<std::string>();
    const std::string algo = doc.at("algorithm").get<std::string>();
    const double auc = doc.at("best_auc").get<double>();
    if (!table.emplace(std::make_pair(c, algo), auc).second) {
      throw ConfigError("compare: duplicate result for " + c + "/" + algo + " (" + f.string() + ")");
    }
    cells.push_back({{"case", c}, {"algorithm", algo}, {"auc", auc}, {"file", f.string()}});
  }
  const ComparisonTable t = compare_algorithms(table, a.alpha);
  const fs::path path = a.out.empty() ? default_output_dir() / "comparison.csv" : fs::path(a.out);
  const fs::path detail = with_suffix(path, ".json");
  json j = t.to_json();
  j["format_version"] = kFormatVersion;
  j["auc"] = cells;
  atomic_write(path, t.csv());
  atomic_write(detail, j.dump(2) + "\n");
  json opts = {{"results", a.results}, {"out", path.string()}, {"alpha", a.alpha}, {"threads", g.threads},
               {"timing", g.timing}};
  write_manifest(with_suffix(path, ".manifest.json"), "compare", opts, {path, detail});
  out << "compared " << t.algorithms.size() << " algorithms over " << t.tasks.size() << " cases, wrote "
      << path.string() << "\n";
  return 0;
}

// ---- report ----

struct ReportArgs {
  std::string model;
  std::string compare_model;
  std::string out;
  std::size_t bins = 40;
  std::size_t samples = 500;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string atols = "0,0.01,0.05,0.1,0.15,0.2,0.25,0.3,0.5,1";
  std::string taus = "1e-4,1e-3,1e-2,1e-1";
};

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    out.push_back(parse_number(std::string_view(text).substr(start, comma - start), what));
    start = comma + 1;
  }
  return out;
}

// Internal nodes with no kept outgoing edge at each threshold.
std::vector<std::vector<NodeId>> rejected_nodes(const ModelBundle& b, const TaskSpec& task, const Dataset& data,
                                                std::uint64_t seed, const std::vector<double>& taus) {
  const CircuitGraph graph = build_edge_graph(b.model.config(), Granularity::head);
  const CorruptedPairs cp = make_corrupted_pairs(task, data, seed);
  std::vector<std::vector<NodeId>> out;
  for (double tau : taus) {
    AcdcOptions o;
    o.tau = tau;
    const DiscoveryResult r = acdc(b.model, task, graph, cp, o);
    std::set<NodeId> used;
    for (const Edge& e : *r.kept) used.insert(e.src);
    std::vector<NodeId> rejected;
    for (const NodeId& n : b.model.internal_nodes()) {
      if (!used.contains(n)) rejected.push_back(n);
    }
    out.push_back(std::move(rejected));
  }
  return out;
}

int cmd_report(ReportArgs a, const Globals& g, std::ostream& out) {
  const ModelBundle b = load_bundle(a.model);
  const TaskSpec& task = task_by_name(b.meta.task);
  if (!a.seed_set) a.seed = b.meta.train.seed;
  const fs::path dir = a.out.empty() ? default_output_dir() / (b.meta.case_name + "-report") : fs::path(a.out);
  std::vector<fs::path> outputs;

  static const std::vector<std::pair<std::string, std::string>> groups = {
      {"all", ".*"}, {"embed", "^embed\\."}, {"attention", "\\.attn\\."}, {"mlp", "\\.mlp\\."}, {"unembed", "^unembed\\."}};
  std::string hist = csv_row({"group", "bin_lo", "bin_hi", "count"});
  for (const auto& [name, selector] : groups) {
    const Histogram h = weight_histogram(b.model, selector, a.bins);
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      hist += csv_row({name, format_double(h.edges[i]), format_double(h.edges[i + 1]), std::to_string(h.counts[i])});
    }
  }
  atomic_write(dir / "histograms.csv", hist);
  outputs.push_back(dir / "histograms.csv");

  const Dataset data = held_out(task, a.samples, a.seed, "report");
  json summary = {{"format_version", kFormatVersion}, {"case", b.meta.case_name}, {"histogram_bins", a.bins}};
  if (task.output_kind() == OutputKind::regression && !b.alignment.non_circuit_nodes().empty()) {
    const MeanCache means = compute_mean_cache(b.model, data.batch());
    const auto sweep = atol_sweep(b.model, task, b.alignment, data, AblationKind::mean, parse_list(a.atols, "atols"), &means);
    std::string csv = csv_row({"atol", "accuracy"});
    json pts = json::array();
    for (const AtolPoint& p : sweep) {
      csv += csv_row({format_double(p.atol), format_double(p.accuracy)});
      pts.push_back({{"atol", p.atol}, {"accuracy", p.accuracy}});
    }
    atomic_write(dir / "atol_sweep.csv", csv);
    outputs.push_back(dir / "atol_sweep.csv");
    summary["atol_sweep"] = pts;
  } else {
    summary["atol_sweep"] = nullptr;
    summary["atol_sweep_skipped"] = task.output_kind() == OutputKind::regression ? "no out-of-circuit nodes"
                                                                                 : "categorical task";
  }
  summary["realism"] = nullptr;
  if (!a.compare_model.empty()) {
    const ModelBundle other = load_bundle(a.compare_model);
    if (other.meta.task != b.meta.task) throw ConfigError("report: --compare-model is trained on a different task");
    const std::vector<double> taus = parse_list(a.taus, "taus");
    const Dataset disc = held_out(task, 200, a.seed, "discover");
    const RealismCurve curve = realism_curve(b.model, rejected_nodes(b, task, disc, a.seed, taus), other.model,
                                             rejected_nodes(other, task, disc, a.seed, taus), taus, task, data,
                                             b.meta.train.atol);
    atomic_write(dir / "realism.csv", curve.csv());
    outputs.push_back(dir / "realism.csv");
    summary["realism"] = curve.to_json();
    summary["realism"]["compare_case"] = other.meta.case_name;
  }
  atomic_write(dir / "report.json", summary.dump(2) + "\n");
  outputs.push_back(dir / "report.json");
  json opts = {{"model", a.model}, {"compare-model", a.compare_model}, {"out", dir.string()}, {"bins", a.bins},
               {"samples", a.samples}, {"seed", a.seed}, {"atols", a.atols}, {"taus", a.taus},
               {"threads", g.threads}, {"timing", g.timing}};
  write_manifest(dir / "manifest.json", "report", opts, outputs);
  out << "wrote " << dir.string() << "\n";
  return 0;
}

// Rebuilds a command line from a manifest's recorded options.
std::vector<std::string> manifest_args(const RunManifest& m, const std::string& out_override) {
  std::vector<std::string> args{m.command};
  const std::string out_key = m.command == "eval" ? "report" : "out";
  for (const auto& [key, value] : m.options.items()) {
    const std::string flag = "--" + key;
    if (key == out_key && !out_override.empty()) {
      args.insert(args.end(), {flag, out_override});
    } else if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) args.insert(args.end(), {flag, v.is_string() ? v.get<std::string>() : v.dump()});
    } else if (value.is_string()) {
      if (!value.get<std::string>().empty()) args.insert(args.end(), {flag, value.get<std::string>()});
    } else if (!value.is_null()) {
      args.insert(args.end(), {flag, value.dump()});
    }
  }
  return args;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

Sweep parse_sweep(std::string_view text) {
  const std::size_t eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("sweep '" + std::string(text) + "': expected name=grid");
  Sweep s;
  s.param = std::string(text.substr(0, eq));
  const std::string_view grid = text.substr(eq + 1);
  const std::size_t dots = grid.find("..");
  if (dots == std::string_view::npos) {
    s.values = parse_list(std::string(grid), std::string(text));
    return s;
  }
  const std::size_t colon = grid.find(':', dots);
  if (colon == std::string_view::npos) throw ConfigError("sweep '" + std::string(text) + "': range needs :log10, :logN or :linN");
  const double lo = parse_number(grid.substr(0, dots), text);
  const double hi = parse_number(grid.substr(dots + 2, colon - dots - 2), text);
  const std::string_view kind = grid.substr(colon + 1);
  if (hi < lo) throw ConfigError("sweep '" + std::string(text) + "': upper bound below lower bound");
  auto count = [&](std::string_view digits) {
    int n = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || n < 1) {
      throw ConfigError("sweep '" + std::string(text) + "': bad point count");
    }
    return n;
  };
  if (kind == "log10") {
    if (lo <= 0.0) throw ConfigError("sweep '" + std::string(text) + "': log grid needs positive bounds");
    const double e0 = std::log10(lo), e1 = std::log10(hi);
    if (std::abs(e0 - std::round(e0)) > 1e-9 || std::abs(e1 - std::round(e1)) > 1e-9) {
      throw ConfigError("sweep '" + std::string(text) + "': log10 grid needs powers of ten");
    }
    for (long e = std::lround(e0); e <= std::lround(e1); ++e) s.values.push_back(std::pow(10.0, static_cast<double>(e)));
  } else if (kind.starts_with("log")) {
    if (lo <= 0.0) throw ConfigError("sweep '" + std::string(text) + "': log grid needs positive bounds");
    const int n = count(kind.substr(3));
    const double e0 = std::log10(lo), e1 = std::log10(hi);
    for (int i = 0; i < n; ++i) s.values.push_back(n == 1 ? lo : std::pow(10.0, e0 + (e1 - e0) * i / (n - 1)));
  } else if (kind.starts_with("lin")) {
    const int n = count(kind.substr(3));
    for (int i = 0; i < n; ++i) s.values.push_back(n == 1 ? lo : lo + (hi - lo) * i / (n - 1));
  } else {
    throw ConfigError("sweep '" + std::string(text) + "': unknown spacing '" + std::string(kind) + "'");
  }
  return s;
}

fs::path default_output_dir() {
  const char* env = std::getenv("SIIT_OUTPUT_DIR");
  return env && *env ? fs::path(env) : fs::path("siit-out");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Strict interchange intervention training and circuit discovery benchmark", "siit"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--timing", g.timing, "Record wall-clock times in outputs");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model aligned to a task's high-level model");
  train_cmd->add_option("--task", ta.task, "frac_x, open_close, dedup or ioi")->required();
  train_cmd->add_option("--seed", ta.seed);
  train_cmd->add_option("--weight-iit", ta.weight_iit);
  train_cmd->add_option("--weight-siit", ta.weight_siit);
  train_cmd->add_option("--weight-behavior", ta.weight_behavior);
  auto* iit_flag = train_cmd->add_flag("--iit-only", ta.iit_only, "Drop the strictness term");
  auto* natural_flag = train_cmd->add_flag("--natural", ta.natural, "Behavior loss only");
  iit_flag->excludes(natural_flag);
  train_cmd->add_option("--samples", ta.samples);
  train_cmd->add_option("--max-epochs", ta.max_epochs);
  train_cmd->add_option("--batch-size", ta.batch_size);
  train_cmd->add_option("--lr", ta.lr);
  train_cmd->add_option("--update-mode", ta.update_mode)->check(CLI::IsMember({"sequential", "fused"}));
  train_cmd->add_option("--atol", ta.atol);
  train_cmd->add_option("--iia-target", ta.iia_target);
  auto* siia_target = train_cmd->add_option("--siia-target", ta.siia_target);
  train_cmd->add_option("--n-interventions", ta.n_interventions);
  train_cmd->add_option("--case", ta.case_name, "Case name (default TASK-sSEED)");
  train_cmd->add_option("--out", ta.out, "Bundle directory");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Node effects under an ablation");
  eval_cmd->add_option("--model", ea.model)->required();
  eval_cmd->add_option("--ablation", ea.ablation)->check(CLI::IsMember({"interchange", "mean", "zero"}));
  eval_cmd->add_option("--report", ea.report, "Per-node CSV");
  eval_cmd->add_option("--samples", ea.samples);
  auto* eval_seed = eval_cmd->add_option("--seed", ea.seed);
  auto* eval_atol = eval_cmd->add_option("--atol", ea.atol);

  DiscoverArgs da;
  auto* disc_cmd = app.add_subcommand("discover", "Run a circuit discovery algorithm");
  disc_cmd->add_option("--model", da.model)->required();
  disc_cmd->add_option("--algo", da.algo)->required()->check(CLI::IsMember({"acdc", "node_sp", "edge_sp", "eap", "eap_ig"}));
  disc_cmd->add_option("--sweep", da.sweep, "e.g. tau=1e-5..1e-1:log10");
  disc_cmd->add_option("--granularity", da.granularity)->check(CLI::IsMember({"head", "qkv"}));
  disc_cmd->add_option("--replacement", da.replacement)->check(CLI::IsMember({"mean", "corrupted"}));
  disc_cmd->add_option("--samples", da.samples);
  auto* disc_seed = disc_cmd->add_option("--seed", da.seed);
  disc_cmd->add_option("--tau", da.tau);
  disc_cmd->add_option("--lambda", da.lambda);
  disc_cmd->add_option("--epochs", da.epochs);
  disc_cmd->add_option("--steps", da.steps);
  disc_cmd->add_option("--out", da.out, "Result JSON");

  CompareArgs ca;
  auto* cmp_cmd = app.add_subcommand("compare", "Pairwise statistics over discovery results");
  cmp_cmd->add_option("--results", ca.results, "Glob of discovery JSON files (repeatable)")->required();
  cmp_cmd->add_option("--out", ca.out, "Comparison CSV");
  cmp_cmd->add_option("--alpha", ca.alpha);

  ReportArgs ra;
  auto* rep_cmd = app.add_subcommand("report", "Weight histograms, atol sweeps and realism curves");
  rep_cmd->add_option("--model", ra.model)->required();
  rep_cmd->add_option("--compare-model", ra.compare_model, "Second bundle for the realism curve");
  rep_cmd->add_option("--out", ra.out);
  rep_cmd->add_option("--bins", ra.bins);
  rep_cmd->add_option("--samples", ra.samples);
  auto* rep_seed = rep_cmd->add_option("--seed", ra.seed);
  rep_cmd->add_option("--atols", ra.atols);
  rep_cmd->add_option("--taus", ra.taus);

  std::string manifest_path, rerun_out;
  auto* rerun_cmd = app.add_subcommand("rerun", "Repeat a run from its manifest");
  rerun_cmd->add_option("--manifest", manifest_path)->required();
  rerun_cmd->add_option("--out", rerun_out, "Replacement output path");

  std::vector<std::string> argv_store{"siit"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const std::string& s : argv_store) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    err << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(ta, siia_target->count() > 0, g, out);
    if (*eval_cmd) {
      ea.seed_set = eval_seed->count() > 0;
      return cmd_eval(ea, eval_atol->count() > 0, g, out);
    }
    if (*disc_cmd) {
      da.seed_set = disc_seed->count() > 0;
      return cmd_discover(da, g, out);
    }
    if (*cmp_cmd) return cmd_compare(ca, g, out);
    if (*rep_cmd) {
      ra.seed_set = rep_seed->count() > 0;
      return cmd_report(ra, g, out);
    }
    if (*rerun_cmd) {
      json j;
      try {
        j = json::parse(read_file(manifest_path));
      } catch (const json::exception& e) {
        throw IntegrityError(manifest_path + ": " + e.what());
      }
      const RunManifest m = RunManifest::from_json(j);
      if (m.command == "rerun") throw ConfigError("manifest records a rerun");
      return run_cli(manifest_args(m, rerun_out), out, err);
    }
  } catch (const Error& e) {
    err << "error: " << e.code() << ": " << one_line(e.what()) << "\n";
    return 1;
  } catch (const json::exception& e) {
    err << "error: format: " << one_line(e.what()) << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 1;
}

}  // namespace siit
