// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/node.hpp"

#include <algorithm>
#include <charconv>

#include "siit/error.hpp"

namespace siit {

namespace {

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && out >= 0;
}

}  // namespace

NodeId NodeId::parse(std::string_view text) {
  auto fail = [&]() -> NodeId { throw NodeError("unrecognized node '" + std::string(text) + "'"); };
  if (text == "embed") return embed();
  if (text == "output") return output();
  if (text.size() >= 2 && text[0] == 'm') {
    int layer;
    if (!parse_int(text.substr(1), layer)) return fail();
    return mlp(layer);
  }
  if (text.size() >= 4 && text[0] == 'a') {
    const auto dot = text.find(".h");
    if (dot == std::string_view::npos) return fail();
    int layer, head;
    if (!parse_int(text.substr(1, dot - 1), layer)) return fail();
    std::string_view rest = text.substr(dot + 2);
    QkvPort port = QkvPort::none;
    const auto pdot = rest.find('.');
    if (pdot != std::string_view::npos) {
      const std::string_view p = rest.substr(pdot + 1);
      if (p == "q") port = QkvPort::q;
      else if (p == "k") port = QkvPort::k;
      else if (p == "v") port = QkvPort::v;
      else return fail();
      rest = rest.substr(0, pdot);
    }
    if (!parse_int(rest, head)) return fail();
    return attn_port(layer, head, port);
  }
  return fail();
}

std::string NodeId::str() const {
  switch (kind) {
    case NodeKind::embed: return "embed";
    case NodeKind::output: return "output";
    case NodeKind::mlp: return "m" + std::to_string(layer);
    case NodeKind::attn_head: {
      std::string s = "a" + std::to_string(layer) + ".h" + std::to_string(head);
      switch (port) {
        case QkvPort::q: return s + ".q";
        case QkvPort::k: return s + ".k";
        case QkvPort::v: return s + ".v";
        case QkvPort::none: return s;
      }
    }
  }
  return "?";
}

Edge Edge::parse(std::string_view text) {
  const auto arrow = text.find("->");
  if (arrow == std::string_view::npos) throw NodeError("unrecognized edge '" + std::string(text) + "'");
  return {NodeId::parse(text.substr(0, arrow)), NodeId::parse(text.substr(arrow + 2))};
}

std::string Edge::str() const { return src.str() + "->" + dst.str(); }

std::vector<NodeId> enumerate_nodes(int n_layers, int n_heads, Granularity granularity) {
  std::vector<NodeId> out{NodeId::embed()};
  for (int l = 0; l < n_layers; ++l) {
    for (int h = 0; h < n_heads; ++h) {
      if (granularity == Granularity::head) {
        out.push_back(NodeId::attn(l, h));
      } else {
        for (QkvPort p : {QkvPort::q, QkvPort::k, QkvPort::v}) out.push_back(NodeId::attn_port(l, h, p));
      }
    }
    out.push_back(NodeId::mlp(l));
  }
  out.push_back(NodeId::output());
  return out;
}

std::vector<NodeId> promote_to_heads(std::span<const NodeId> nodes) {
  std::vector<NodeId> out;
  for (const NodeId& n : nodes) {
    const NodeId h = n.head_level();
    if (std::find(out.begin(), out.end(), h) == out.end()) out.push_back(h);
  }
  return out;
}

int stream_index(const NodeId& node, int n_layers, int n_heads) {
  switch (node.kind) {
    case NodeKind::embed: return 0;
    case NodeKind::attn_head: return 1 + node.layer * (n_heads + 1) + node.head;
    case NodeKind::mlp: return 1 + node.layer * (n_heads + 1) + n_heads;
    case NodeKind::output: return 1 + n_layers * (n_heads + 1);
  }
  return -1;
}

}  // namespace siit
