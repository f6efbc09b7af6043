// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "siit/node.hpp"
#include "siit/optim.hpp"
#include "siit/tensor.hpp"

namespace siit {

enum class OutputKind { categorical, regression };

const char* to_string(OutputKind kind);
OutputKind output_kind_from_string(std::string_view text);

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_head = 8;
  int d_model = 32;
  int d_mlp = 128;
  int vocab_size = 8;
  int max_seq_len = 8;
  OutputKind output_kind = OutputKind::categorical;
  std::uint64_t seed = 0;

  // Fills d_model = d_head * n_heads and d_mlp = 4 * d_model.
  static ModelConfig derived(int n_layers, int n_heads, int d_head, int vocab_size, int max_seq_len,
                             OutputKind output_kind, std::uint64_t seed);
  // Throws ConfigError naming the violated invariant.
  void validate() const;
  // embed + layers * (heads + mlp) + output, at head granularity.
  int node_count() const { return 2 + n_layers * (n_heads + 1); }
  int output_width() const { return output_kind == OutputKind::regression ? 1 : vocab_size; }
};

// Row-major batch of equal-length token sequences.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> ids;

  static TokenBatch from_rows(const std::vector<std::vector<int>>& rows);
  TokenBatch select(std::span<const std::size_t> rows) const;
  std::span<const int> row(std::size_t b) const { return {ids.data() + b * seq, seq}; }
};

// One node's residual-stream write, as seen by downstream nodes.
struct Contribution {
  NodeId node;
  Tensor value;
};

// Interception points of a forward pass. The defaults leave the computation
// untouched.
class ForwardHooks {
 public:
  virtual ~ForwardHooks() = default;
  // Receives a node's natural residual contribution (B, S, d_model) and
  // returns what is written into the stream instead.
  virtual Tensor node_output(const NodeId& node, const Tensor& natural) {
    (void)node;
    return natural;
  }
  // When routes_inputs() is true, every destination (head, or head port at
  // qkv granularity, mlp, output) asks for its own input. `stream` is the sum
  // of `upstream`.
  virtual bool routes_inputs() const { return false; }
  virtual Granularity input_granularity() const { return Granularity::head; }
  virtual Tensor node_input(const NodeId& dst, const Tensor& stream,
                            std::span<const Contribution> upstream) {
    (void)dst;
    (void)upstream;
    return stream;
  }
  virtual void observe_final(const Tensor& final_stream, const Tensor& logits) {
    (void)final_stream;
    (void)logits;
  }
};

struct ActivationCache {
  // Residual contribution of embed and every internal node.
  std::map<NodeId, Tensor> contributions;
  Tensor final_stream;
  Tensor logits;

  std::size_t internal_count() const;
  const Tensor& at(const NodeId& node) const;
};

using PatchPlan = std::map<NodeId, Tensor>;

// Pre-norm decoder-only transformer whose heads write separate residual
// contributions. Each head owns its slice of the output projection.
class Transformer {
 public:
  explicit Transformer(const ModelConfig& config);

  Transformer(Transformer&&) = default;
  Transformer& operator=(Transformer&&) = default;
  Transformer(const Transformer&) = delete;
  Transformer& operator=(const Transformer&) = delete;

  // Deep copy of parameters.
  Transformer clone() const;

  const ModelConfig& config() const { return config_; }
  std::vector<NodeId> list_nodes(Granularity granularity = Granularity::head) const;
  bool has_node(const NodeId& node) const;
  std::vector<NodeId> internal_nodes() const;

  // logits: (B, S, vocab) for categorical models, (B, S, 1) for regression.
  Tensor forward(const TokenBatch& tokens, ForwardHooks* hooks = nullptr) const;
  std::pair<Tensor, ActivationCache> forward_with_cache(const TokenBatch& tokens) const;
  // Embed and internal nodes are patchable. Throws NodeError for other nodes
  // and ShapeError for replacements of the wrong shape.
  Tensor forward_with_patch(const TokenBatch& tokens, const PatchPlan& plan) const;

  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  const Tensor& parameter(std::string_view name) const;
  std::size_t parameter_count() const;
  void set_trainable(bool trainable);

 private:
  struct HeadParams {
    Tensor W_Q, b_Q, W_K, b_K, W_V, b_V, W_O, b_O;
  };
  struct LayerParams {
    Tensor ln1_w, ln1_b, ln2_w, ln2_b;
    std::vector<HeadParams> heads;
    Tensor W_in, b_in, W_out, b_out;
  };

  Transformer() = default;
  Tensor& add_param(const std::string& name, Shape shape, double stddev, double fill, class Rng* rng);
  void bind();
  void check_tokens(const TokenBatch& tokens) const;

  ModelConfig config_;
  std::vector<NamedTensor> params_;
  Tensor W_E_, W_pos_, lnf_w_, lnf_b_, W_U_, b_U_;
  std::vector<LayerParams> layers_;
};

// Checks a patch plan against a model without running it.
void validate_patch_plan(const Transformer& model, const PatchPlan& plan, const TokenBatch& tokens);

}  // namespace siit
