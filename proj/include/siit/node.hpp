// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace siit {

enum class NodeKind { embed, attn_head, mlp, output };
enum class QkvPort { none, q, k, v };
enum class Granularity { head, qkv };

// A computational node of the transformer. String forms: "embed", "output",
// "a{layer}.h{head}", "m{layer}", and "a{layer}.h{head}.{q|k|v}" for the
// query/key/value input ports of a head.
struct NodeId {
  NodeKind kind = NodeKind::embed;
  int layer = -1;
  int head = -1;
  QkvPort port = QkvPort::none;

  static NodeId embed() { return {NodeKind::embed, -1, -1, QkvPort::none}; }
  static NodeId output() { return {NodeKind::output, -1, -1, QkvPort::none}; }
  static NodeId attn(int layer, int head) { return {NodeKind::attn_head, layer, head, QkvPort::none}; }
  static NodeId attn_port(int layer, int head, QkvPort port) {
    return {NodeKind::attn_head, layer, head, port};
  }
  static NodeId mlp(int layer) { return {NodeKind::mlp, layer, -1, QkvPort::none}; }

  // Throws NodeError on malformed input.
  static NodeId parse(std::string_view text);
  std::string str() const;

  bool is_internal() const { return kind == NodeKind::attn_head || kind == NodeKind::mlp; }
  NodeId head_level() const { return {kind, layer, head, QkvPort::none}; }

  auto operator<=>(const NodeId&) const = default;
};

struct Edge {
  NodeId src;
  NodeId dst;

  static Edge parse(std::string_view text);  // "a0.h1->m1"
  std::string str() const;

  auto operator<=>(const Edge&) const = default;
};

// Stream order: embed, layer 0 heads, layer 0 mlp, ..., output. At qkv
// granularity every head is replaced by its q, k, v ports.
std::vector<NodeId> enumerate_nodes(int n_layers, int n_heads, Granularity granularity);

// Replaces q/k/v ports by their head, dropping duplicates while keeping order.
std::vector<NodeId> promote_to_heads(std::span<const NodeId> nodes);

// Position of a head-level node in the residual stream (embed = 0).
int stream_index(const NodeId& node, int n_layers, int n_heads);

}  // namespace siit
