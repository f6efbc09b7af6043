// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include "siit/error.hpp"
#include "siit/io.hpp"
#include "siit/ops.hpp"
#include "siit/parallel.hpp"

namespace siit {

namespace {

TokenBatch rows_of(const Dataset& data, const std::vector<std::size_t>& rows) {
  std::vector<Sequence> seqs;
  seqs.reserve(rows.size());
  for (std::size_t r : rows) seqs.push_back(data.inputs[r]);
  return TokenBatch::from_rows(seqs);
}

std::vector<Values> labels_of(const Dataset& data, const std::vector<std::size_t>& rows) {
  std::vector<Values> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(data.labels[r]);
  return out;
}

double effect_with(const Transformer& model, const TaskSpec& task, const NodeId& node, const TokenBatch& base,
                   const std::vector<Values>& labels, AblationKind kind, double atol,
                   const ActivationCache* source, const MeanCache* means) {
  const Tensor out = model.forward_with_patch(base, ablation_plan(model, kind, base, source, means, {node}));
  return 1.0 - agreement_rate(task, out, labels, atol);
}

// Cross-entropy against the labels, averaged over scored positions, per row.
std::vector<double> label_ce(const TaskSpec& task, const Tensor& logits, const std::vector<Values>& labels) {
  const Tensor ls = ops::log_softmax(logits);
  const std::size_t B = logits.dim(0), S = logits.dim(1), V = logits.dim(2);
  std::vector<double> out(B, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t n = 0;
    for (std::size_t s = 0; s < S; ++s) {
      if (!task.eval_positions[s]) continue;
      out[b] -= ls[(b * S + s) * V + static_cast<std::size_t>(labels[b][s])];
      ++n;
    }
    out[b] /= static_cast<double>(std::max<std::size_t>(n, 1));
  }
  return out;
}

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

nlohmann::json quartiles_json(const std::optional<Quartiles>& q) {
  if (!q) return nullptr;
  return {{"count", q->count}, {"min", q->min},       {"q1", q->q1},
          {"median", q->median}, {"q3", q->q3}, {"max", q->max}, {"range", q->max - q->min}};
}

}  // namespace

double node_effect(const Transformer& model, const TaskSpec& task, const NodeId& node, const PairSet& pairs,
                   AblationKind kind, double atol, const MeanCache* means) {
  if (pairs.size() == 0) throw ConfigError("node_effect: no pairs");
  const TokenBatch base = rows_of(*pairs.data, pairs.base);
  std::optional<ActivationCache> source;
  if (kind == AblationKind::interchange) source = model.forward_with_cache(rows_of(*pairs.data, pairs.source)).second;
  return effect_with(model, task, node, base, labels_of(*pairs.data, pairs.base), kind, atol,
                     source ? &*source : nullptr, means);
}

Quartiles quartiles(std::vector<double> values) {
  if (values.empty()) throw ConfigError("quartiles: empty sample");
  std::sort(values.begin(), values.end());
  Quartiles q;
  q.count = values.size();
  q.min = values.front();
  q.max = values.back();
  q.q1 = quantile_sorted(values, 0.25);
  q.median = quantile_sorted(values, 0.5);
  q.q3 = quantile_sorted(values, 0.75);
  return q;
}

NodeEffectReport node_effect_report(const Transformer& model, const TaskSpec& task, const Alignment& alignment,
                                    const PairSet& pairs, AblationKind kind, double atol, const MeanCache* means,
                                    int threads) {
  if (pairs.size() == 0) throw ConfigError("node_effect_report: no pairs");
  NodeEffectReport r;
  r.kind = kind;
  r.atol = atol;
  const TokenBatch base = rows_of(*pairs.data, pairs.base);
  const std::vector<Values> labels = labels_of(*pairs.data, pairs.base);
  std::optional<ActivationCache> source;
  if (kind == AblationKind::interchange) source = model.forward_with_cache(rows_of(*pairs.data, pairs.source)).second;
  const std::vector<NodeId> nodes = model.internal_nodes();
  std::vector<double> eff(nodes.size());
  parallel_for(nodes.size(), threads, [&](std::size_t i) {
    eff[i] = effect_with(model, task, nodes[i], base, labels, kind, atol, source ? &*source : nullptr, means);
  });
  std::vector<double> in, out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const bool c = alignment.in_circuit(nodes[i]);
    r.effects.emplace_back(nodes[i], eff[i]);
    r.in_circuit.push_back(c);
    (c ? in : out).push_back(eff[i]);
  }
  if (!in.empty()) r.in_group = quartiles(in);
  if (!out.empty()) r.out_group = quartiles(out);
  return r;
}

nlohmann::json NodeEffectReport::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < effects.size(); ++i) {
    nodes.push_back({{"node", effects[i].first.str()}, {"in_circuit", in_circuit[i]}, {"effect", effects[i].second}});
  }
  return {{"ablation", to_string(kind)},
          {"atol", atol},
          {"nodes", nodes},
          {"in_circuit", quartiles_json(in_group)},
          {"out_of_circuit", quartiles_json(out_group)}};
}

std::string NodeEffectReport::summary_csv(const std::string& case_name, double weight_siit) const {
  std::string out = csv_row({"case", "weight_siit", "ablation", "group", "count", "min", "q1", "median", "q3", "max",
                             "range"});
  auto row = [&](const char* group, const std::optional<Quartiles>& q) {
    if (!q) {
      out += csv_row({case_name, format_double(weight_siit), to_string(kind), group, "0", "", "", "", "", "", ""});
      return;
    }
    out += csv_row({case_name, format_double(weight_siit), to_string(kind), group, std::to_string(q->count),
                    format_double(q->min), format_double(q->q1), format_double(q->median), format_double(q->q3),
                    format_double(q->max), format_double(q->max - q->min)});
  };
  row("in_circuit", in_group);
  row("out_of_circuit", out_group);
  return out;
}

std::string NodeEffectReport::nodes_csv() const {
  std::string out = csv_row({"node", "in_circuit", "effect"});
  for (std::size_t i = 0; i < effects.size(); ++i) {
    out += csv_row({effects[i].first.str(), in_circuit[i] ? "true" : "false", format_double(effects[i].second)});
  }
  return out;
}

KlResult normalized_kl(const Transformer& model, const TaskSpec& task, const NodeId& node, const PairSet& pairs) {
  if (task.output_kind() != OutputKind::categorical) {
    throw ConfigError("normalized_kl: task " + task.name + " is not categorical");
  }
  const TokenBatch base = rows_of(*pairs.data, pairs.base);
  const std::vector<Values> labels = labels_of(*pairs.data, pairs.base);
  auto [source_logits, source] = model.forward_with_cache(rows_of(*pairs.data, pairs.source));
  const std::vector<double> d_base = label_ce(task, model.forward(base), labels);
  const std::vector<double> d_source = label_ce(task, source_logits, labels);
  const std::vector<double> d_patch = label_ce(task, int_inv(model, base, source, {node}), labels);
  KlResult r;
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double denom = d_source[i] - d_base[i];
    if (std::abs(denom) < 1e-6) {
      ++r.skipped;
      continue;
    }
    total += (d_patch[i] - d_base[i]) / denom;
    ++r.used;
  }
  if (r.used == 0) throw DomainError("normalized_kl: all " + std::to_string(r.skipped) + " pairs skipped");
  r.value = total / static_cast<double>(r.used);
  return r;
}

double circuit_ablation_accuracy(const Transformer& model, const TaskSpec& task, const Alignment& alignment,
                                 const Dataset& data, AblationKind kind, double atol, const MeanCache* means) {
  if (kind == AblationKind::interchange) throw ConfigError("circuit_ablation_accuracy: use mean or zero ablation");
  const TokenBatch base = data.batch();
  const Tensor out =
      model.forward_with_patch(base, ablation_plan(model, kind, base, nullptr, means, alignment.non_circuit_nodes()));
  return agreement_rate(task, out, data.labels, atol);
}

std::vector<AtolPoint> atol_sweep(const Transformer& model, const TaskSpec& task, const Alignment& alignment,
                                  const Dataset& data, AblationKind kind, const std::vector<double>& atols,
                                  const MeanCache* means) {
  if (task.output_kind() != OutputKind::regression) {
    throw ConfigError("atol_sweep: task " + task.name + " is not a regression task");
  }
  if (kind == AblationKind::interchange) throw ConfigError("atol_sweep: use mean or zero ablation");
  const TokenBatch base = data.batch();
  const Tensor out =
      model.forward_with_patch(base, ablation_plan(model, kind, base, nullptr, means, alignment.non_circuit_nodes()));
  std::vector<double> err;
  for (std::size_t b = 0; b < base.batch; ++b) {
    for (std::size_t s = 0; s < base.seq; ++s) {
      if (task.eval_positions[s]) err.push_back(std::abs(out[b * base.seq + s] - data.labels[b][s]));
    }
  }
  std::vector<AtolPoint> curve;
  for (double a : atols) {
    const auto hits = std::count_if(err.begin(), err.end(), [a](double e) { return e <= a; });
    curve.push_back({a, err.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(err.size())});
  }
  return curve;
}

std::size_t Histogram::total() const {
  std::size_t n = 0;
  for (std::size_t c : counts) n += c;
  return n;
}

std::string Histogram::csv() const {
  std::string out = csv_row({"bin_lo", "bin_hi", "count"});
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out += csv_row({format_double(edges[i]), format_double(edges[i + 1]), std::to_string(counts[i])});
  }
  return out;
}

Histogram weight_histogram(const Transformer& model, const std::string& selector, std::size_t bins) {
  if (bins == 0) throw ConfigError("weight_histogram: bins must be at least 1");
  std::regex re;
  try {
    re = std::regex(selector);
  } catch (const std::regex_error& e) {
    throw ConfigError("weight_histogram: bad selector '" + selector + "': " + e.what());
  }
  std::vector<double> values;
  for (const NamedTensor& p : model.parameters()) {
    if (std::regex_search(p.name, re)) values.insert(values.end(), p.tensor.data().begin(), p.tensor.data().end());
  }
  if (values.empty()) throw ConfigError("weight_histogram: selector '" + selector + "' matches no parameter");
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(lo + width * static_cast<double>(i));
  h.edges.back() = hi;
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto k = static_cast<std::size_t>((v - lo) / width);
    h.counts[std::min(k, bins - 1)]++;
  }
  return h;
}

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) return std::nullopt;
  // Exact test: a rounded mean can leave a spurious residual variance.
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(a) || constant(b)) return std::nullopt;
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

nlohmann::json RealismCurve::to_json() const {
  nlohmann::json j{{"thresholds", thresholds},
                   {"accuracy_a", accuracy_a},
                   {"accuracy_b", accuracy_b},
                   {"correlation", nullptr},
                   {"skip_reason", skip_reason.empty() ? nlohmann::json(nullptr) : nlohmann::json(skip_reason)}};
  if (correlation) j["correlation"] = *correlation;
  return j;
}

std::string RealismCurve::csv() const {
  std::string out = csv_row({"threshold", "accuracy_a", "accuracy_b"});
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    out += csv_row({format_double(thresholds[i]), format_double(accuracy_a[i]), format_double(accuracy_b[i])});
  }
  return out;
}

RealismCurve realism_curve(const Transformer& model_a, const std::vector<std::vector<NodeId>>& rejected_a,
                           const Transformer& model_b, const std::vector<std::vector<NodeId>>& rejected_b,
                           const std::vector<double>& thresholds, const TaskSpec& task, const Dataset& data,
                           double atol) {
  if (thresholds.size() < 3) throw ConfigError("realism_curve: need at least 3 thresholds");
  if (rejected_a.size() != thresholds.size() || rejected_b.size() != thresholds.size()) {
    throw ConfigError("realism_curve: one rejected-node set per threshold is required");
  }
  RealismCurve c;
  c.thresholds = thresholds;
  const TokenBatch base = data.batch();
  const MeanCache means_a = compute_mean_cache(model_a, base);
  const MeanCache means_b = compute_mean_cache(model_b, base);
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    c.accuracy_a.push_back(agreement_rate(task, mean_ablate(model_a, base, rejected_a[i], means_a), data.labels, atol));
    c.accuracy_b.push_back(agreement_rate(task, mean_ablate(model_b, base, rejected_b[i], means_b), data.labels, atol));
  }
  c.correlation = pearson(c.accuracy_a, c.accuracy_b);
  if (!c.correlation) c.skip_reason = "zero variance in an accuracy sequence";
  return c;
}

}  // namespace siit
