// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "siit/intervention.hpp"
#include "siit/training.hpp"

namespace siit {

// Fraction of (pair, scored position) cells where the output on the base with
// `node` ablated disagrees with the base label. Interchange ablation takes the
// replacement from the pair's source; mean ablation needs `means`.
double node_effect(const Transformer& model, const TaskSpec& task, const NodeId& node, const PairSet& pairs,
                   AblationKind kind, double atol, const MeanCache* means = nullptr);

struct Quartiles {
  std::size_t count = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

// Linear-interpolation quartiles. Throws ConfigError on an empty sample.
Quartiles quartiles(std::vector<double> values);

struct NodeEffectReport {
  AblationKind kind = AblationKind::interchange;
  double atol = 0.05;
  std::vector<std::pair<NodeId, double>> effects;
  std::vector<bool> in_circuit;
  std::optional<Quartiles> in_group;
  std::optional<Quartiles> out_group;

  nlohmann::json to_json() const;
  // One row per group: case, weight_siit, kind, group, count, min, q1, median, q3, max, range.
  std::string summary_csv(const std::string& case_name, double weight_siit) const;
  // One row per node: node, in_circuit, effect.
  std::string nodes_csv() const;
};

NodeEffectReport node_effect_report(const Transformer& model, const TaskSpec& task, const Alignment& alignment,
                                    const PairSet& pairs, AblationKind kind, double atol,
                                    const MeanCache* means = nullptr, int threads = 1);

struct KlResult {
  double value = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

// Mean over pairs of [D(patched) - D(base)] / [D(source) - D(base)], with D the
// cross-entropy against the base label averaged over scored positions. Pairs
// with |denominator| < 1e-6 are skipped. Throws ConfigError for regression
// tasks and DomainError when every pair is skipped.
KlResult normalized_kl(const Transformer& model, const TaskSpec& task, const NodeId& node, const PairSet& pairs);

// Accuracy against labels with every non-circuit node ablated at once.
double circuit_ablation_accuracy(const Transformer& model, const TaskSpec& task, const Alignment& alignment,
                                 const Dataset& data, AblationKind kind, double atol,
                                 const MeanCache* means = nullptr);

struct AtolPoint {
  double atol = 0.0;
  double accuracy = 0.0;
};

// Circuit-ablation accuracy per tolerance, from a single ablated forward pass.
// Throws ConfigError for categorical tasks.
std::vector<AtolPoint> atol_sweep(const Transformer& model, const TaskSpec& task, const Alignment& alignment,
                                  const Dataset& data, AblationKind kind, const std::vector<double>& atols,
                                  const MeanCache* means = nullptr);

struct Histogram {
  std::vector<double> edges;  // bins + 1 entries
  std::vector<std::size_t> counts;
  std::size_t total() const;
  std::string csv() const;
};

// Histogram of all parameters whose name matches the ECMAScript regex
// `selector`. Throws ConfigError when nothing matches or bins == 0.
Histogram weight_histogram(const Transformer& model, const std::string& selector, std::size_t bins);

struct RealismCurve {
  std::vector<double> thresholds;
  std::vector<double> accuracy_a;
  std::vector<double> accuracy_b;
  std::optional<double> correlation;
  std::string skip_reason;

  nlohmann::json to_json() const;
  std::string csv() const;
};

// Pearson correlation; nullopt when either side has zero variance.
std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b);

// For each threshold, mean-ablates the nodes each model's discovery run
// rejected and records accuracy on `data`. Throws ConfigError with fewer than
// three thresholds or mismatched list lengths.
RealismCurve realism_curve(const Transformer& model_a, const std::vector<std::vector<NodeId>>& rejected_a,
                           const Transformer& model_b, const std::vector<std::vector<NodeId>>& rejected_b,
                           const std::vector<double>& thresholds, const TaskSpec& task, const Dataset& data,
                           double atol);

}  // namespace siit
