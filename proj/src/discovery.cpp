// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/discovery.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "siit/error.hpp"
#include "siit/ops.hpp"
#include "siit/optim.hpp"

namespace siit {

namespace {

// Layer at which a node's output becomes visible, and the layer whose stream a
// destination reads. Heads of layer l write for the mlp of layer l onwards.
double write_rank(const NodeId& n, int n_layers) {
  switch (n.kind) {
    case NodeKind::embed: return -1.0;
    case NodeKind::attn_head: return n.layer + 0.25;
    case NodeKind::mlp: return n.layer + 0.75;
    case NodeKind::output: return n_layers + 1.0;
  }
  return 0.0;
}

double read_rank(const NodeId& n, int n_layers) {
  switch (n.kind) {
    case NodeKind::embed: return -2.0;
    case NodeKind::attn_head: return n.layer;
    case NodeKind::mlp: return n.layer + 0.5;
    case NodeKind::output: return n_layers;
  }
  return 0.0;
}

Tensor expand_to(const Tensor& t, const Shape& shape) {
  if (t.shape() == shape) return t;
  throw ShapeError("replacement of shape " + shape_str(t.shape()) + " does not match " + shape_str(shape));
}

// Broadcast multiply of a (..., D) tensor by a one-element mask tensor.
Tensor scale_by(const Tensor& x, const Tensor& m) {
  const Shape shape = x.shape();
  return ops::reshape(ops::mul(ops::reshape(x, {x.numel(), 1}), m), shape);
}

// m * a + (1 - m) * b with a one-element mask.
Tensor mix(const Tensor& a, const Tensor& b, const Tensor& m) {
  return ops::add(b, scale_by(ops::sub(a, b), m));
}

class RoutingHooks : public ForwardHooks {
 public:
  RoutingHooks(Granularity g, const std::map<NodeId, Tensor>& replacement, const std::set<Edge>& replaced)
      : granularity_(g), replacement_(replacement), replaced_(replaced) {}
  bool routes_inputs() const override { return true; }
  Granularity input_granularity() const override { return granularity_; }
  Tensor node_input(const NodeId& dst, const Tensor& stream, std::span<const Contribution> upstream) override {
    bool any = false;
    for (const Contribution& c : upstream) {
      if (replaced_.contains(Edge{c.node, dst})) {
        any = true;
        break;
      }
    }
    if (!any) return stream;
    Tensor sum;
    for (const Contribution& c : upstream) {
      Tensor v = c.value;
      if (replaced_.contains(Edge{c.node, dst})) v = expand_to(replacement_.at(c.node), c.value.shape());
      sum = sum.defined() ? ops::add(sum, v) : v;
    }
    return sum;
  }

 private:
  Granularity granularity_;
  const std::map<NodeId, Tensor>& replacement_;
  const std::set<Edge>& replaced_;
};

std::vector<std::size_t> scored_cells(const TaskSpec& task, std::size_t B, std::size_t S) {
  std::vector<std::size_t> cells;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < S; ++s) {
      if (task.eval_positions[s]) cells.push_back(b * S + s);
    }
  }
  return cells;
}

// Divergence of `logits` from `reference` over scored positions (no tape).
double divergence(const TaskSpec& task, const Tensor& reference, const Tensor& logits) {
  const std::size_t B = logits.dim(0), S = logits.dim(1), W = logits.dim(2);
  const std::vector<std::size_t> cells = scored_cells(task, B, S);
  double total = 0.0;
  if (task.output_kind() == OutputKind::regression) {
    for (std::size_t c : cells) {
      const double d = logits[c] - reference[c];
      total += d * d;
    }
    return std::sqrt(total / static_cast<double>(cells.size()));
  }
  const Tensor lp = ops::log_softmax(reference);
  const Tensor lq = ops::log_softmax(logits);
  for (std::size_t c : cells) {
    for (std::size_t v = 0; v < W; ++v) {
      const double p = std::exp(lp[c * W + v]);
      if (p > 0) total += p * (lp[c * W + v] - lq[c * W + v]);
    }
  }
  return total / static_cast<double>(cells.size());
}

// Differentiable form of `divergence` up to a constant (KL) or squared (MSE).
Tensor divergence_loss(const TaskSpec& task, const Tensor& reference, const Tensor& logits) {
  const std::size_t B = logits.dim(0), S = logits.dim(1), W = logits.dim(2);
  std::vector<double> mask(B * S, 0.0);
  std::size_t count = 0;
  for (std::size_t c : scored_cells(task, B, S)) {
    mask[c] = 1.0;
    ++count;
  }
  const double inv = 1.0 / static_cast<double>(count);
  if (task.output_kind() == OutputKind::regression) {
    Tensor diff = ops::sub(logits, reference.detach());
    return ops::mul_scalar(ops::sum(ops::mul(ops::mul(diff, diff), Tensor::from({B, S, 1}, mask))), inv);
  }
  const Tensor lp = ops::log_softmax(reference);
  std::vector<double> weights(B * S * W, 0.0);
  double entropy_term = 0.0;
  for (std::size_t c = 0; c < B * S; ++c) {
    if (mask[c] == 0.0) continue;
    for (std::size_t v = 0; v < W; ++v) {
      const double p = std::exp(lp[c * W + v]);
      weights[c * W + v] = p;
      if (p > 0) entropy_term += p * lp[c * W + v];
    }
  }
  Tensor cross = ops::sum(ops::mul(ops::log_softmax(logits), Tensor::from({B, S, W}, std::move(weights))));
  return ops::mul_scalar(ops::add_scalar(ops::mul_scalar(cross, -1.0), entropy_term), inv);
}

// Loss against labels used by attribution patching.
Tensor label_metric(const TaskSpec& task, const Tensor& logits, const std::vector<Values>& labels) {
  const std::size_t B = logits.dim(0), S = logits.dim(1);
  const std::vector<std::size_t> cells = scored_cells(task, B, S);
  const double inv = 1.0 / static_cast<double>(cells.size());
  std::vector<double> mask(B * S, 0.0);
  for (std::size_t c : cells) mask[c] = 1.0;
  if (task.output_kind() == OutputKind::regression) {
    std::vector<double> y(B * S, 0.0);
    for (std::size_t c : cells) y[c] = labels[c / S][c % S];
    Tensor err = ops::abs(ops::sub(logits, Tensor::from({B, S, 1}, std::move(y))));
    return ops::mul_scalar(ops::sum(ops::mul(err, Tensor::from({B, S, 1}, std::move(mask)))), inv);
  }
  std::vector<int> idx(B * S, 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < S; ++s) idx[b * S + s] = static_cast<int>(labels[b][s]);
  }
  Tensor picked = ops::gather_last(ops::log_softmax(logits), idx);
  return ops::mul_scalar(ops::sum(ops::mul(picked, Tensor::from({B, S}, std::move(mask)))), -inv);
}

std::map<NodeId, Tensor> mean_replacements(const Transformer& model, const TokenBatch& clean) {
  const MeanCache means = compute_mean_cache(model, clean, MeanMode::per_position);
  std::map<NodeId, Tensor> out;
  // Embed has no mean-cache entry; its mean is computed the same way.
  const auto [_, cache] = model.forward_with_cache(clean);
  for (const auto& [node, act] : cache.contributions) {
    if (node.is_internal()) {
      out[node] = means.expand(node, clean.batch, clean.seq);
      continue;
    }
    const std::size_t B = clean.batch, S = clean.seq, D = act.shape().back();
    std::vector<double> acc(S * D, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < S * D; ++i) acc[i] += act[b * S * D + i];
    }
    for (double& x : acc) x /= static_cast<double>(B);
    std::vector<double> full(B * S * D);
    for (std::size_t b = 0; b < B; ++b) std::copy(acc.begin(), acc.end(), full.begin() + static_cast<std::ptrdiff_t>(b * S * D));
    out[node] = Tensor::from({B, S, D}, std::move(full));
  }
  return out;
}

Transformer frozen_copy(const Transformer& model) {
  Transformer m = model.clone();
  m.set_trainable(false);
  return m;
}

std::vector<Values> labels_of(const Dataset& d) { return d.labels; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

bool feeds(const NodeId& src, const NodeId& dst) {
  // Ranks only depend on layer structure, so n_layers only matters for output;
  // a large constant keeps output last.
  constexpr int kBig = 1 << 20;
  return write_rank(src, kBig) < read_rank(dst, kBig) && src.kind != NodeKind::output &&
         dst.kind != NodeKind::embed;
}

std::vector<NodeId> CircuitGraph::destinations() const {
  std::vector<NodeId> out;
  for (const NodeId& n : nodes) {
    if (n.kind == NodeKind::embed) continue;
    if (granularity == Granularity::qkv && n.kind == NodeKind::attn_head && n.port == QkvPort::none) continue;
    out.push_back(n);
  }
  return out;
}

std::vector<Edge> CircuitGraph::incoming(const NodeId& dst) const {
  std::vector<Edge> out;
  for (const Edge& e : edges) {
    if (e.dst == dst) out.push_back(e);
  }
  return out;
}

bool CircuitGraph::has_edge(const Edge& e) const { return std::find(edges.begin(), edges.end(), e) != edges.end(); }

CircuitGraph build_edge_graph(const ModelConfig& cfg, Granularity granularity) {
  CircuitGraph g;
  g.granularity = granularity;
  g.n_layers = cfg.n_layers;
  g.n_heads = cfg.n_heads;
  const std::vector<NodeId> heads = enumerate_nodes(cfg.n_layers, cfg.n_heads, Granularity::head);
  std::vector<NodeId> dsts;
  for (const NodeId& n : heads) {
    if (granularity == Granularity::qkv && n.kind == NodeKind::attn_head) {
      for (QkvPort p : {QkvPort::q, QkvPort::k, QkvPort::v}) {
        g.nodes.push_back(NodeId::attn_port(n.layer, n.head, p));
        dsts.push_back(g.nodes.back());
      }
      g.nodes.push_back(n);
    } else {
      g.nodes.push_back(n);
      if (n.kind != NodeKind::embed) dsts.push_back(n);
    }
  }
  for (const NodeId& dst : dsts) {
    for (const NodeId& src : heads) {
      if (src.kind != NodeKind::output && feeds(src, dst)) g.edges.push_back({src, dst});
    }
  }
  return g;
}

EdgeLabels ground_truth_edges(const CircuitGraph& graph, const Alignment& alignment, const HighLevelModel& hl) {
  std::map<NodeId, std::string> var_of;
  for (const auto& [var, nodes] : alignment.pi) {
    for (const NodeId& n : nodes) var_of[n] = var;
  }
  std::set<std::pair<std::string, std::string>> hl_edges;
  for (const auto& e : hl.edges()) hl_edges.insert(e);
  const std::vector<std::string> inputs = hl.input_adjacent();
  EdgeLabels labels;
  for (const Edge& e : graph.edges) {
    const NodeId src = e.src.head_level(), dst = e.dst.head_level();
    bool in = false;
    auto vs = var_of.find(src);
    auto vd = var_of.find(dst);
    if (src.kind == NodeKind::embed && vd != var_of.end()) {
      in = std::find(inputs.begin(), inputs.end(), vd->second) != inputs.end();
    } else if (dst.kind == NodeKind::output && vs != var_of.end()) {
      in = vs->second == hl.output_variable();
    } else if (vs != var_of.end() && vd != var_of.end()) {
      in = vs->second == vd->second || hl_edges.contains({vs->second, vd->second});
    }
    labels[e] = in;
  }
  return labels;
}

std::vector<Edge> positive_edges(const EdgeLabels& labels) {
  std::vector<Edge> out;
  for (const auto& [e, l] : labels) {
    if (l) out.push_back(e);
  }
  return out;
}

CorruptedPairs make_corrupted_pairs(const TaskSpec& task, const Dataset& clean, std::uint64_t seed) {
  CorruptedPairs p;
  p.clean = clean;
  Rng rng(seed, "corrupt:" + task.name);
  for (const Sequence& s : clean.inputs) p.corrupted.push_back(task.corrupt(s, rng));
  return p;
}

const char* to_string(EdgeReplacement r) { return r == EdgeReplacement::mean ? "mean" : "corrupted"; }

EdgeRouter::EdgeRouter(const Transformer& model, Granularity granularity, std::map<NodeId, Tensor> replacement)
    : model_(model), granularity_(granularity), replacement_(std::move(replacement)) {}

Tensor EdgeRouter::forward(const TokenBatch& tokens, const std::set<Edge>& replaced) const {
  RoutingHooks hooks(granularity_, replacement_, replaced);
  return model_.forward(tokens, &hooks);
}

nlohmann::json DiscoveryResult::to_json() const {
  nlohmann::json s = nlohmann::json::array();
  for (const auto& [e, v] : scores) s.push_back({{"edge", e.str()}, {"score", v}});
  nlohmann::json j{{"algorithm", algorithm},
                   {"hyperparameters", hyperparameters},
                   {"scores", s},
                   {"runtime_s", nullptr},
                   {"kept", nullptr}};
  if (!node_scores.empty()) {
    nlohmann::json ns = nlohmann::json::array();
    for (const auto& [n, v] : node_scores) ns.push_back({{"node", n.str()}, {"score", v}});
    j["node_scores"] = ns;
  }
  if (kept) {
    nlohmann::json k = nlohmann::json::array();
    for (const Edge& e : *kept) k.push_back(e.str());
    j["kept"] = k;
  }
  if (runtime_s) j["runtime_s"] = *runtime_s;
  return j;
}

DiscoveryResult DiscoveryResult::from_json(const nlohmann::json& j) {
  DiscoveryResult r;
  try {
    r.algorithm = j.at("algorithm").get<std::string>();
    r.hyperparameters = j.value("hyperparameters", nlohmann::json::object());
    for (const auto& s : j.at("scores")) r.scores[Edge::parse(s.at("edge").get<std::string>())] = s.at("score").get<double>();
    if (j.contains("node_scores")) {
      for (const auto& s : j.at("node_scores")) {
        r.node_scores[NodeId::parse(s.at("node").get<std::string>())] = s.at("score").get<double>();
      }
    }
    if (j.contains("kept") && !j.at("kept").is_null()) {
      std::set<Edge> k;
      for (const auto& e : j.at("kept")) k.insert(Edge::parse(e.get<std::string>()));
      r.kept = std::move(k);
    }
    if (j.contains("runtime_s") && !j.at("runtime_s").is_null()) r.runtime_s = j.at("runtime_s").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("discovery result json: ") + e.what());
  }
  return r;
}

DiscoveryResult acdc(const Transformer& model, const TaskSpec& task, const CircuitGraph& graph,
                     const CorruptedPairs& data, const AcdcOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const TokenBatch clean = data.clean.batch();
  std::map<NodeId, Tensor> replacement;
  if (options.replacement == EdgeReplacement::mean) {
    replacement = mean_replacements(model, clean);
  } else {
    replacement = model.forward_with_cache(TokenBatch::from_rows(data.corrupted)).second.contributions;
  }
  const EdgeRouter router(model, graph.granularity, std::move(replacement));
  const Tensor reference = model.forward(clean);
  std::set<Edge> removed;
  double current = 0.0;
  DiscoveryResult r;
  r.algorithm = "acdc";
  r.hyperparameters = {{"tau", options.tau},
                       {"replacement", to_string(options.replacement)},
                       {"metric", task.output_kind() == OutputKind::regression ? "l2" : "kl"}};
  std::vector<NodeId> dsts = graph.destinations();
  std::reverse(dsts.begin(), dsts.end());
  for (const NodeId& dst : dsts) {
    std::vector<Edge> in = graph.incoming(dst);
    std::sort(in.begin(), in.end(), [&](const Edge& a, const Edge& b) {
      return stream_index(a.src, graph.n_layers, graph.n_heads) > stream_index(b.src, graph.n_layers, graph.n_heads);
    });
    for (const Edge& e : in) {
      removed.insert(e);
      const double m = divergence(task, reference, router.forward(clean, removed));
      const double increase = m - current;
      r.scores[e] = std::abs(increase);
      if (std::abs(increase) < options.tau) {
        current = m;
      } else {
        removed.erase(e);
      }
    }
  }
  std::set<Edge> kept;
  for (const Edge& e : graph.edges) {
    if (!removed.contains(e)) kept.insert(e);
  }
  r.kept = std::move(kept);
  r.runtime_s = seconds_since(t0);
  return r;
}

namespace {

class NodeMaskHooks : public ForwardHooks {
 public:
  NodeMaskHooks(const std::map<NodeId, Tensor>& masks, const std::map<NodeId, Tensor>& means)
      : masks_(masks), means_(means) {}
  Tensor node_output(const NodeId& node, const Tensor& natural) override {
    auto it = masks_.find(node);
    if (it == masks_.end()) return natural;
    return mix(natural, means_.at(node), ops::sigmoid(it->second));
  }

 private:
  const std::map<NodeId, Tensor>& masks_;
  const std::map<NodeId, Tensor>& means_;
};

class EdgeMaskHooks : public ForwardHooks {
 public:
  EdgeMaskHooks(Granularity g, const std::map<Edge, Tensor>& masks, const std::map<NodeId, Tensor>& means)
      : granularity_(g), masks_(masks), means_(means) {}
  bool routes_inputs() const override { return true; }
  Granularity input_granularity() const override { return granularity_; }
  Tensor node_input(const NodeId& dst, const Tensor&, std::span<const Contribution> upstream) override {
    Tensor sum;
    for (const Contribution& c : upstream) {
      Tensor v = c.value;
      auto it = masks_.find(Edge{c.node, dst});
      if (it != masks_.end()) v = mix(c.value, means_.at(c.node), ops::sigmoid(it->second));
      sum = sum.defined() ? ops::add(sum, v) : v;
    }
    return sum;
  }

 private:
  Granularity granularity_;
  const std::map<Edge, Tensor>& masks_;
  const std::map<NodeId, Tensor>& means_;
};

template <typename Key>
std::map<Key, double> train_masks(const Transformer& frozen, const TaskSpec& task, const TokenBatch& clean,
                                  std::map<Key, Tensor>& logits, ForwardHooks& hooks, const SpOptions& options) {
  if (options.epochs < 1) throw ConfigError("subnetwork probing: epochs must be at least 1");
  const Tensor reference = frozen.forward(clean);
  std::vector<NamedTensor> params;
  for (auto& [k, t] : logits) params.push_back({k.str(), t});
  Adam adam(params, AdamOptions{options.lr, 0.9, 0.999, 1e-8});
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = divergence_loss(task, reference, frozen.forward(clean, &hooks));
    Tensor penalty;
    for (auto& [k, t] : logits) {
      Tensor m = ops::sum(ops::sigmoid(t));
      penalty = penalty.defined() ? ops::add(penalty, m) : m;
    }
    loss = ops::add(loss, ops::mul_scalar(penalty, options.lambda));
    try {
      tape.backward(loss);
    } catch (const DivergenceError& e) {
      throw DivergenceError("subnetwork probing diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    adam.step();
  }
  std::map<Key, double> out;
  for (auto& [k, t] : logits) out[k] = 1.0 / (1.0 + std::exp(-t[0]));
  return out;
}

nlohmann::json sp_hyper(const SpOptions& o) {
  return {{"lambda", o.lambda}, {"epochs", o.epochs}, {"lr", o.lr}, {"init_logit", o.init_logit},
          {"keep_threshold", o.keep_threshold}};
}

}  // namespace

DiscoveryResult node_sp(const Transformer& model, const TaskSpec& task, const CircuitGraph& graph,
                        const Dataset& data, const SpOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const Transformer frozen = frozen_copy(model);
  const TokenBatch clean = data.batch();
  const std::map<NodeId, Tensor> means = mean_replacements(frozen, clean);
  std::map<NodeId, Tensor> logits;
  for (const NodeId& n : frozen.internal_nodes()) logits[n] = Tensor::parameter({1}, {options.init_logit});
  NodeMaskHooks hooks(logits, means);
  DiscoveryResult r;
  r.algorithm = "node_sp";
  r.hyperparameters = sp_hyper(options);
  r.node_scores = train_masks(frozen, task, clean, logits, hooks, options);
  r.scores = node_scores_to_edge_scores(r.node_scores, graph);
  std::set<Edge> kept;
  for (const auto& [e, s] : r.scores) {
    if (s >= options.keep_threshold) kept.insert(e);
  }
  r.kept = std::move(kept);
  r.runtime_s = seconds_since(t0);
  return r;
}

DiscoveryResult edge_sp(const Transformer& model, const TaskSpec& task, const CircuitGraph& graph,
                        const Dataset& data, const SpOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const Transformer frozen = frozen_copy(model);
  const TokenBatch clean = data.batch();
  const std::map<NodeId, Tensor> means = mean_replacements(frozen, clean);
  std::map<Edge, Tensor> logits;
  for (const Edge& e : graph.edges) logits[e] = Tensor::parameter({1}, {options.init_logit});
  EdgeMaskHooks hooks(graph.granularity, logits, means);
  DiscoveryResult r;
  r.algorithm = "edge_sp";
  r.hyperparameters = sp_hyper(options);
  r.scores = train_masks(frozen, task, clean, logits, hooks, options);
  std::set<Edge> kept;
  for (const auto& [e, s] : r.scores) {
    if (s >= options.keep_threshold) kept.insert(e);
  }
  r.kept = std::move(kept);
  r.runtime_s = seconds_since(t0);
  return r;
}

EdgeScores node_scores_to_edge_scores(const std::map<NodeId, double>& node_scores, const CircuitGraph& graph) {
  auto score = [&](const NodeId& n) {
    if (!n.is_internal()) return 1.0;
    auto it = node_scores.find(n.head_level());
    if (it == node_scores.end()) throw NodeError("node score missing for " + n.head_level().str());
    return it->second;
  };
  EdgeScores out;
  for (const Edge& e : graph.edges) out[e] = std::min(score(e.src), score(e.dst));
  return out;
}

namespace {

class AttributionHooks : public ForwardHooks {
 public:
  AttributionHooks(Granularity g, Tensor embed) : granularity_(g), embed_(std::move(embed)) {}
  Tensor node_output(const NodeId& node, const Tensor& natural) override {
    if (node.kind == NodeKind::embed) return embed_;
    return natural;
  }
  bool routes_inputs() const override { return true; }
  Granularity input_granularity() const override { return granularity_; }
  Tensor node_input(const NodeId& dst, const Tensor& stream, std::span<const Contribution>) override {
    Tensor t = ops::identity(stream);
    inputs[dst] = t;
    return t;
  }
  std::map<NodeId, Tensor> inputs;

 private:
  Granularity granularity_;
  Tensor embed_;
};

// Gradients of the label metric at every destination input, averaged over the
// interpolation points alphas.
std::map<NodeId, std::vector<double>> input_gradients(const Transformer& frozen, const TaskSpec& task,
                                                      const TokenBatch& clean, const std::vector<Values>& labels,
                                                      const Tensor& clean_embed, const Tensor& corr_embed,
                                                      Granularity g, const std::vector<double>& alphas) {
  std::map<NodeId, std::vector<double>> grads;
  for (double alpha : alphas) {
    Tensor embed;
    if (alpha == 1.0) {
      embed = clean_embed.detach();
    } else {
      std::vector<double> v(clean_embed.numel());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = corr_embed[i] + alpha * (clean_embed[i] - corr_embed[i]);
      embed = Tensor::from(clean_embed.shape(), std::move(v));
    }
    embed.set_requires_grad(true);
    AttributionHooks hooks(g, embed);
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor loss = label_metric(task, frozen.forward(clean, &hooks), labels);
    tape.backward(loss);
    for (const auto& [dst, t] : hooks.inputs) {
      std::vector<double>& acc = grads[dst];
      if (acc.empty()) acc.assign(t.numel(), 0.0);
      std::span<const double> gr = t.grad();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gr[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(alphas.size());
  for (auto& [_, acc] : grads) {
    for (double& x : acc) x *= inv;
  }
  return grads;
}

DiscoveryResult attribution(const Transformer& model, const TaskSpec& task, const CircuitGraph& graph,
                            const CorruptedPairs& data, const std::vector<double>& alphas) {
  const Transformer frozen = frozen_copy(model);
  const TokenBatch clean = data.clean.batch();
  const TokenBatch corrupted = TokenBatch::from_rows(data.corrupted);
  const ActivationCache clean_cache = frozen.forward_with_cache(clean).second;
  const ActivationCache corr_cache = frozen.forward_with_cache(corrupted).second;
  const auto grads = input_gradients(frozen, task, clean, labels_of(data.clean), clean_cache.at(NodeId::embed()),
                                     corr_cache.at(NodeId::embed()), graph.granularity, alphas);
  DiscoveryResult r;
  for (const Edge& e : graph.edges) {
    const Tensor& a = clean_cache.at(e.src);
    const Tensor& c = corr_cache.at(e.src);
    const std::vector<double>& g = grads.at(e.dst);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += (c[i] - a[i]) * g[i];
    r.scores[e] = std::abs(s);
  }
  return r;
}

}  // namespace

DiscoveryResult eap(const Transformer& model, const TaskSpec& task, const CircuitGraph& graph,
                    const CorruptedPairs& data) {
  const auto t0 = std::chrono::steady_clock::now();
  DiscoveryResult r = attribution(model, task, graph, data, {1.0});
  r.algorithm = "eap";
  r.hyperparameters = {{"metric", task.output_kind() == OutputKind::regression ? "mae" : "cross_entropy"}};
  r.runtime_s = seconds_since(t0);
  return r;
}

DiscoveryResult eap_ig(const Transformer& model, const TaskSpec& task, const CircuitGraph& graph,
                       const CorruptedPairs& data, int steps) {
  if (steps < 1) throw ConfigError("eap_ig: steps must be at least 1");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> alphas;
  for (int k = 1; k <= steps; ++k) alphas.push_back(static_cast<double>(k) / static_cast<double>(steps));
  DiscoveryResult r = attribution(model, task, graph, data, alphas);
  r.algorithm = "eap_ig";
  r.hyperparameters = {{"metric", task.output_kind() == OutputKind::regression ? "mae" : "cross_entropy"},
                       {"steps", steps}};
  r.runtime_s = seconds_since(t0);
  return r;
}

EdgeScores promote_qkv_to_heads(const EdgeScores& scores) {
  EdgeScores out;
  for (const auto& [e, s] : scores) {
    const Edge h{e.src.head_level(), e.dst.head_level()};
    auto it = out.find(h);
    if (it == out.end()) {
      out[h] = s;
    } else {
      it->second = std::max(it->second, s);
    }
  }
  return out;
}

EdgeLabels promote_qkv_labels(const EdgeLabels& labels) {
  EdgeLabels out;
  for (const auto& [e, l] : labels) {
    const Edge h{e.src.head_level(), e.dst.head_level()};
    out[h] = out[h] || l;
  }
  return out;
}

RocCurve roc_auc(const EdgeScores& scores, const EdgeLabels& labels) {
  std::vector<std::pair<double, bool>> items;
  std::size_t pos = 0, neg = 0;
  for (const auto& [e, l] : labels) {
    auto it = scores.find(e);
    const double s = it == scores.end() ? -std::numeric_limits<double>::infinity() : it->second;
    if (std::isnan(s)) throw DomainError("roc_auc: score of " + e.str() + " is NaN");
    items.emplace_back(s, l);
    (l ? pos : neg)++;
  }
  if (pos == 0 || neg == 0) throw DomainError("roc_auc: labels must contain both classes");
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  RocCurve c;
  c.points.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    while (j < items.size() && items[j].first == items[i].first) {
      (items[j].second ? tp : fp)++;
      ++j;
    }
    const RocPoint next{static_cast<double>(fp) / static_cast<double>(neg),
                        static_cast<double>(tp) / static_cast<double>(pos)};
    c.auc += (next.fpr - c.points.back().fpr) * (next.tpr + c.points.back().tpr) / 2.0;
    c.points.push_back(next);
    i = j;
  }
  return c;
}

double pair_statistic(const EdgeScores& scores, const EdgeLabels& labels) {
  std::vector<double> p, n;
  for (const auto& [e, l] : labels) {
    auto it = scores.find(e);
    const double s = it == scores.end() ? -std::numeric_limits<double>::infinity() : it->second;
    (l ? p : n).push_back(s);
  }
  if (p.empty() || n.empty()) throw DomainError("pair_statistic: labels must contain both classes");
  double wins = 0.0;
  for (double a : p) {
    for (double b : n) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  return wins / (static_cast<double>(p.size()) * static_cast<double>(n.size()));
}

RocCurve roc_from_sets(const std::vector<std::set<Edge>>& predicted, const EdgeLabels& labels) {
  std::size_t pos = 0, neg = 0;
  for (const auto& [_, l] : labels) (l ? pos : neg)++;
  if (pos == 0 || neg == 0) throw DomainError("roc_from_sets: labels must contain both classes");
  RocCurve c;
  std::vector<RocPoint> pts{{0.0, 0.0}, {1.0, 1.0}};
  for (const std::set<Edge>& s : predicted) {
    std::size_t tp = 0, fp = 0;
    for (const auto& [e, l] : labels) {
      if (s.contains(e)) (l ? tp : fp)++;
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)});
  }
  std::sort(pts.begin(), pts.end(), [](const RocPoint& a, const RocPoint& b) {
    return a.fpr != b.fpr ? a.fpr < b.fpr : a.tpr < b.tpr;
  });
  c.points = pts;
  for (std::size_t i = 1; i < pts.size(); ++i) c.auc += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  return c;
}

}  // namespace siit
