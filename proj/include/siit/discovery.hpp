// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "siit/intervention.hpp"
#include "siit/tasks.hpp"
#include "siit/training.hpp"

namespace siit {

// Residual-stream computational graph. Sources are head-level nodes; at qkv
// granularity every head destination is split into its q, k and v ports.
struct CircuitGraph {
  Granularity granularity = Granularity::head;
  int n_layers = 0;
  int n_heads = 0;
  // Topological order. At qkv granularity each head's ports precede the head.
  std::vector<NodeId> nodes;
  std::vector<Edge> edges;

  // Destinations in topological order (everything but embed, and at qkv
  // granularity ports instead of whole heads).
  std::vector<NodeId> destinations() const;
  std::vector<Edge> incoming(const NodeId& dst) const;
  bool has_edge(const Edge& e) const;
};

// True when the output of `src` is part of the stream `dst` reads.
bool feeds(const NodeId& src, const NodeId& dst);

CircuitGraph build_edge_graph(const ModelConfig& cfg, Granularity granularity);

using EdgeLabels = std::map<Edge, bool>;
using EdgeScores = std::map<Edge, double>;

// An edge is in the circuit when both endpoints are, and either its endpoints
// realise a high-level edge (or lie inside one multi-node variable), or it
// connects embed to an input-reading variable, or the output variable to output.
EdgeLabels ground_truth_edges(const CircuitGraph& graph, const Alignment& alignment, const HighLevelModel& hl);
std::vector<Edge> positive_edges(const EdgeLabels& labels);

// Clean inputs with their corrupted partners.
struct CorruptedPairs {
  Dataset clean;
  std::vector<Sequence> corrupted;
};

CorruptedPairs make_corrupted_pairs(const TaskSpec& task, const Dataset& clean, std::uint64_t seed);

enum class EdgeReplacement { mean, corrupted };

const char* to_string(EdgeReplacement r);

// Forward pass in which every destination reads its own input. Edges listed in
// `replaced` carry `replacement[src]` instead of the current activation of src.
class EdgeRouter {
 public:
  EdgeRouter(const Transformer& model, Granularity granularity, std::map<NodeId, Tensor> replacement);

  Tensor forward(const TokenBatch& tokens, const std::set<Edge>& replaced) const;

 private:
  const Transformer& model_;
  Granularity granularity_;
  std::map<NodeId, Tensor> replacement_;
};

struct DiscoveryResult {
  std::string algorithm;
  nlohmann::json hyperparameters = nlohmann::json::object();
  EdgeScores scores;
  std::map<NodeId, double> node_scores;
  // Edges kept by the run (ACDC) or selected by thresholding masks (SP).
  std::optional<std::set<Edge>> kept;
  std::optional<double> runtime_s;

  nlohmann::json to_json() const;
  static DiscoveryResult from_json(const nlohmann::json& j);
};

struct AcdcOptions {
  double tau = 0.01;
  EdgeReplacement replacement = EdgeReplacement::mean;
};

// Greedy pruning in reverse topological order of destinations. An edge is
// removed when |metric change caused by replacing it| < tau. Metric: KL to the
// unpruned model's output (categorical) or root mean squared difference
// (regression), over scored positions.
DiscoveryResult acdc(const Transformer& model, const TaskSpec& task, const CircuitGraph& graph,
                     const CorruptedPairs& data, const AcdcOptions& options);

struct SpOptions {
  double lambda = 0.01;
  int epochs = 200;
  double lr = 0.05;
  double init_logit = 3.0;
  // Masks at or above this value count as kept.
  double keep_threshold = 0.5;
  std::uint64_t seed = 0;
};

// Sigmoid node masks mixing clean and mean activations, trained on divergence
// to the unmasked model plus lambda * sum of masks.
DiscoveryResult node_sp(const Transformer& model, const TaskSpec& task, const CircuitGraph& graph,
                        const Dataset& data, const SpOptions& options);
// Same objective with one mask per edge.
DiscoveryResult edge_sp(const Transformer& model, const TaskSpec& task, const CircuitGraph& graph,
                        const Dataset& data, const SpOptions& options);

// Edge score = min of endpoint scores; embed and output count as 1.
EdgeScores node_scores_to_edge_scores(const std::map<NodeId, double>& node_scores, const CircuitGraph& graph);

// |sum (corrupted - clean source activation) * d metric / d destination input|,
// metric = cross-entropy (categorical) or mean absolute error (regression)
// against labels over scored positions.
DiscoveryResult eap(const Transformer& model, const TaskSpec& task, const CircuitGraph& graph,
                    const CorruptedPairs& data);
// Gradients averaged over embeddings corrupted + (k/steps)(clean - corrupted), k = 1..steps.
DiscoveryResult eap_ig(const Transformer& model, const TaskSpec& task, const CircuitGraph& graph,
                       const CorruptedPairs& data, int steps = 10);

// Replaces port destinations by their head, keeping the max score.
EdgeScores promote_qkv_to_heads(const EdgeScores& scores);
EdgeLabels promote_qkv_labels(const EdgeLabels& labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

// Thresholds at every distinct score; trapezoid AUC. Edges missing from
// `scores` count as -inf. Throws DomainError unless both classes occur.
RocCurve roc_auc(const EdgeScores& scores, const EdgeLabels& labels);
// Probability that a positive outscores a negative, ties counted half.
double pair_statistic(const EdgeScores& scores, const EdgeLabels& labels);
// One (fpr, tpr) point per predicted edge set, plus (0,0) and (1,1).
RocCurve roc_from_sets(const std::vector<std::set<Edge>>& predicted, const EdgeLabels& labels);

}  // namespace siit
