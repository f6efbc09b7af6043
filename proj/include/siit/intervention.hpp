// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "siit/tasks.hpp"
#include "siit/transformer.hpp"

namespace siit {

// Map from high-level variables to disjoint sets of low-level nodes.
struct Alignment {
  std::map<std::string, std::vector<NodeId>> pi;
  std::uint64_t seed = 0;
  int n_layers = 0;
  int n_heads = 0;

  // Aligned internal nodes plus embed and output, in stream order.
  std::vector<NodeId> circuit_nodes() const;
  // Aligned internal nodes only.
  std::vector<NodeId> aligned_nodes() const;
  std::vector<NodeId> non_circuit_nodes() const;
  bool in_circuit(const NodeId& node) const;

  // Throws ConfigError on overlapping images, nodes outside the model, nodes
  // in the wrong layer, or variables unknown to `hl`.
  void validate(const HighLevelModel& hl) const;

  nlohmann::json to_json() const;
  // The model shape is not part of the serialized form.
  static Alignment from_json(const nlohmann::json& j, int n_layers, int n_heads);
};

// Attention variables get distinct random heads of their layer, mlp variables
// the layer's mlp, layer variables every node of the layer.
Alignment make_alignment(const HighLevelModel& hl, const ModelConfig& cfg, std::uint64_t seed);

enum class AblationKind { interchange, mean, zero };

const char* to_string(AblationKind kind);
AblationKind ablation_kind_from_string(std::string_view text);

enum class MeanMode { per_position, averaged };

struct MeanCache {
  MeanMode mode = MeanMode::per_position;
  std::size_t samples = 0;
  // (S, d_model) per position, or (d_model) when averaged.
  std::map<NodeId, Tensor> means;

  // Broadcast of the stored mean to (batch, seq, d_model).
  Tensor expand(const NodeId& node, std::size_t batch, std::size_t seq) const;
};

MeanCache compute_mean_cache(const Transformer& model, const TokenBatch& inputs,
                             MeanMode mode = MeanMode::per_position);

// Replacement plans. All ablations run through forward_with_patch.
PatchPlan interchange_plan(const ActivationCache& source, const std::vector<NodeId>& nodes);
PatchPlan mean_plan(const MeanCache& cache, const std::vector<NodeId>& nodes, std::size_t batch,
                    std::size_t seq);
PatchPlan zero_plan(const Transformer& model, const std::vector<NodeId>& nodes, std::size_t batch,
                    std::size_t seq);

// Throws ShapeError when base and source differ in shape.
Tensor int_inv(const Transformer& model, const TokenBatch& base, const TokenBatch& source,
               const std::vector<NodeId>& nodes);
// Same, with the source forward already cached.
Tensor int_inv(const Transformer& model, const TokenBatch& base, const ActivationCache& source,
               const std::vector<NodeId>& nodes);
// Throws NodeError when the cache lacks one of `nodes`.
Tensor mean_ablate(const Transformer& model, const TokenBatch& base, const std::vector<NodeId>& nodes,
                   const MeanCache& cache);
Tensor zero_ablate(const Transformer& model, const TokenBatch& base, const std::vector<NodeId>& nodes);

// Plan for `kind`; `source` is used by interchange, `means` by mean.
PatchPlan ablation_plan(const Transformer& model, AblationKind kind, const TokenBatch& base,
                        const ActivationCache* source, const MeanCache* means,
                        const std::vector<NodeId>& nodes);

}  // namespace siit
