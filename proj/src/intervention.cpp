// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/intervention.hpp"

#include <algorithm>
#include <set>

#include "siit/error.hpp"
#include "siit/rng.hpp"

namespace siit {

namespace {

bool in_model(const NodeId& n, int n_layers, int n_heads) {
  if (n.port != QkvPort::none || !n.is_internal()) return false;
  if (n.layer < 0 || n.layer >= n_layers) return false;
  return n.kind == NodeKind::mlp || (n.head >= 0 && n.head < n_heads);
}

}  // namespace

std::vector<NodeId> Alignment::aligned_nodes() const {
  std::vector<NodeId> out;
  for (const NodeId& n : enumerate_nodes(n_layers, n_heads, Granularity::head)) {
    if (n.is_internal() && in_circuit(n)) out.push_back(n);
  }
  return out;
}

std::vector<NodeId> Alignment::circuit_nodes() const {
  std::vector<NodeId> out;
  for (const NodeId& n : enumerate_nodes(n_layers, n_heads, Granularity::head)) {
    if (in_circuit(n)) out.push_back(n);
  }
  return out;
}

std::vector<NodeId> Alignment::non_circuit_nodes() const {
  std::vector<NodeId> out;
  for (const NodeId& n : enumerate_nodes(n_layers, n_heads, Granularity::head)) {
    if (!in_circuit(n)) out.push_back(n);
  }
  return out;
}

bool Alignment::in_circuit(const NodeId& node) const {
  if (!node.is_internal()) return true;
  const NodeId head = node.head_level();
  for (const auto& [_, nodes] : pi) {
    if (std::find(nodes.begin(), nodes.end(), head) != nodes.end()) return true;
  }
  return false;
}

void Alignment::validate(const HighLevelModel& hl) const {
  std::set<NodeId> used;
  for (const auto& [var, nodes] : pi) {
    const HLVariable& v = hl.variable(var);
    if (nodes.empty()) throw ConfigError("alignment: variable '" + var + "' has no nodes");
    for (const NodeId& n : nodes) {
      if (!in_model(n, n_layers, n_heads)) {
        throw ConfigError("alignment: " + n.str() + " (variable '" + var + "') is not an internal node");
      }
      if (n.layer != v.layer) {
        throw ConfigError("alignment: " + n.str() + " of variable '" + var + "' is not in layer " +
                          std::to_string(v.layer));
      }
      if (!used.insert(n).second) {
        throw ConfigError("alignment: node " + n.str() + " is aligned with more than one variable");
      }
    }
  }
  for (const std::string& name : hl.variable_names()) {
    if (!pi.contains(name)) throw ConfigError("alignment: variable '" + name + "' is not aligned");
  }
}

nlohmann::json Alignment::to_json() const {
  nlohmann::json p = nlohmann::json::object();
  for (const auto& [var, nodes] : pi) {
    nlohmann::json arr = nlohmann::json::array();
    for (const NodeId& n : nodes) arr.push_back(n.str());
    p[var] = arr;
  }
  return {{"pi", p}, {"seed", seed}};
}

Alignment Alignment::from_json(const nlohmann::json& j, int n_layers, int n_heads) {
  Alignment a;
  a.n_layers = n_layers;
  a.n_heads = n_heads;
  try {
    a.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [var, arr] : j.at("pi").items()) {
      std::vector<NodeId> nodes;
      for (const auto& s : arr) nodes.push_back(NodeId::parse(s.get<std::string>()));
      a.pi[var] = std::move(nodes);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("alignment json: ") + e.what());
  }
  return a;
}

Alignment make_alignment(const HighLevelModel& hl, const ModelConfig& cfg, std::uint64_t seed) {
  Alignment a;
  a.seed = seed;
  a.n_layers = cfg.n_layers;
  a.n_heads = cfg.n_heads;
  Rng rng(seed, "alignment");
  std::map<int, std::vector<int>> free_heads;
  std::set<int> mlp_taken, layer_taken;
  for (int l = 0; l < cfg.n_layers; ++l) {
    std::vector<int> heads(cfg.n_heads);
    for (int h = 0; h < cfg.n_heads; ++h) heads[h] = h;
    free_heads[l] = heads;
  }
  for (const HLVariable& v : hl.variables()) {
    if (v.layer < 0 || v.layer >= cfg.n_layers) {
      throw ConfigError("alignment: variable '" + v.name + "' wants layer " + std::to_string(v.layer) +
                        " but the model has " + std::to_string(cfg.n_layers));
    }
    const std::string where = "layer " + std::to_string(v.layer);
    if (layer_taken.contains(v.layer)) throw ConfigError("alignment: " + where + " is fully assigned");
    std::vector<NodeId>& nodes = a.pi[v.name];
    switch (v.role) {
      case NodeRole::attention: {
        std::vector<int>& heads = free_heads[v.layer];
        if (heads.empty()) throw ConfigError("alignment: no free attention head left in " + where);
        const std::size_t pick = rng.uniform_index(heads.size());
        nodes.push_back(NodeId::attn(v.layer, heads[pick]));
        heads.erase(heads.begin() + static_cast<std::ptrdiff_t>(pick));
        break;
      }
      case NodeRole::mlp:
        if (!mlp_taken.insert(v.layer).second) throw ConfigError("alignment: mlp of " + where + " is taken");
        nodes.push_back(NodeId::mlp(v.layer));
        break;
      case NodeRole::layer:
        if (mlp_taken.contains(v.layer) ||
            free_heads[v.layer].size() != static_cast<std::size_t>(cfg.n_heads)) {
          throw ConfigError("alignment: " + where + " is partially assigned");
        }
        for (int h = 0; h < cfg.n_heads; ++h) nodes.push_back(NodeId::attn(v.layer, h));
        nodes.push_back(NodeId::mlp(v.layer));
        layer_taken.insert(v.layer);
        mlp_taken.insert(v.layer);
        free_heads[v.layer].clear();
        break;
    }
    std::sort(nodes.begin(), nodes.end());
  }
  a.validate(hl);
  return a;
}

const char* to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::interchange: return "interchange";
    case AblationKind::mean: return "mean";
    case AblationKind::zero: return "zero";
  }
  return "?";
}

AblationKind ablation_kind_from_string(std::string_view text) {
  if (text == "interchange") return AblationKind::interchange;
  if (text == "mean") return AblationKind::mean;
  if (text == "zero") return AblationKind::zero;
  throw ConfigError("unknown ablation '" + std::string(text) + "' (expected interchange|mean|zero)");
}

Tensor MeanCache::expand(const NodeId& node, std::size_t batch, std::size_t seq) const {
  auto it = means.find(node);
  if (it == means.end()) throw NodeError("mean cache has no entry for " + node.str());
  const Tensor& m = it->second;
  const std::size_t D = m.shape().back();
  std::vector<double> out(batch * seq * D);
  if (mode == MeanMode::per_position) {
    if (m.dim(0) < seq) {
      throw ShapeError("mean cache for " + node.str() + " covers " + std::to_string(m.dim(0)) +
                       " positions, need " + std::to_string(seq));
    }
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(m.data().begin(), seq * D, out.begin() + static_cast<std::ptrdiff_t>(b * seq * D));
    }
  } else {
    for (std::size_t r = 0; r < batch * seq; ++r) {
      std::copy(m.data().begin(), m.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r * D));
    }
  }
  return Tensor::from({batch, seq, D}, std::move(out));
}

MeanCache compute_mean_cache(const Transformer& model, const TokenBatch& inputs, MeanMode mode) {
  if (inputs.batch == 0) throw ConfigError("compute_mean_cache: empty dataset");
  const auto [_, cache] = model.forward_with_cache(inputs);
  MeanCache out;
  out.mode = mode;
  out.samples = inputs.batch;
  const std::size_t B = inputs.batch, S = inputs.seq;
  for (const auto& [node, act] : cache.contributions) {
    if (!node.is_internal()) continue;
    const std::size_t D = act.shape().back();
    std::vector<double> acc(S * D, 0.0);
    // Fixed summation order over rows keeps the result reproducible.
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < S * D; ++i) acc[i] += act[b * S * D + i];
    }
    if (mode == MeanMode::per_position) {
      for (double& x : acc) x /= static_cast<double>(B);
      out.means[node] = Tensor::from({S, D}, std::move(acc));
    } else {
      std::vector<double> avg(D, 0.0);
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t d = 0; d < D; ++d) avg[d] += acc[s * D + d];
      }
      for (double& x : avg) x /= static_cast<double>(B * S);
      out.means[node] = Tensor::from({D}, std::move(avg));
    }
  }
  return out;
}

PatchPlan interchange_plan(const ActivationCache& source, const std::vector<NodeId>& nodes) {
  PatchPlan plan;
  for (const NodeId& n : nodes) plan[n] = source.at(n);
  return plan;
}

PatchPlan mean_plan(const MeanCache& cache, const std::vector<NodeId>& nodes, std::size_t batch,
                    std::size_t seq) {
  PatchPlan plan;
  for (const NodeId& n : nodes) plan[n] = cache.expand(n, batch, seq);
  return plan;
}

PatchPlan zero_plan(const Transformer& model, const std::vector<NodeId>& nodes, std::size_t batch,
                    std::size_t seq) {
  PatchPlan plan;
  const Shape shape{batch, seq, static_cast<std::size_t>(model.config().d_model)};
  for (const NodeId& n : nodes) plan[n] = Tensor::zeros(shape);
  return plan;
}

Tensor int_inv(const Transformer& model, const TokenBatch& base, const TokenBatch& source,
               const std::vector<NodeId>& nodes) {
  if (base.batch != source.batch || base.seq != source.seq) {
    throw ShapeError("int_inv: base batch " + std::to_string(base.batch) + "x" + std::to_string(base.seq) +
                     " and source batch " + std::to_string(source.batch) + "x" +
                     std::to_string(source.seq) + " differ");
  }
  if (nodes.empty()) return model.forward(base);
  const auto [_, cache] = model.forward_with_cache(source);
  return int_inv(model, base, cache, nodes);
}

Tensor int_inv(const Transformer& model, const TokenBatch& base, const ActivationCache& source,
               const std::vector<NodeId>& nodes) {
  return model.forward_with_patch(base, interchange_plan(source, nodes));
}

Tensor mean_ablate(const Transformer& model, const TokenBatch& base, const std::vector<NodeId>& nodes,
                   const MeanCache& cache) {
  return model.forward_with_patch(base, mean_plan(cache, nodes, base.batch, base.seq));
}

Tensor zero_ablate(const Transformer& model, const TokenBatch& base, const std::vector<NodeId>& nodes) {
  return model.forward_with_patch(base, zero_plan(model, nodes, base.batch, base.seq));
}

PatchPlan ablation_plan(const Transformer& model, AblationKind kind, const TokenBatch& base,
                        const ActivationCache* source, const MeanCache* means,
                        const std::vector<NodeId>& nodes) {
  switch (kind) {
    case AblationKind::interchange:
      if (source == nullptr) throw ConfigError("interchange ablation needs a source run");
      return interchange_plan(*source, nodes);
    case AblationKind::mean:
      if (means == nullptr) throw ConfigError("mean ablation needs a mean cache");
      return mean_plan(*means, nodes, base.batch, base.seq);
    case AblationKind::zero:
      return zero_plan(model, nodes, base.batch, base.seq);
  }
  return {};
}

}  // namespace siit
