// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "siit/error.hpp"
#include "siit/ops.hpp"
#include "siit/rng.hpp"

namespace siit {

const char* to_string(OutputKind kind) {
  return kind == OutputKind::regression ? "regression" : "categorical";
}

OutputKind output_kind_from_string(std::string_view text) {
  if (text == "regression") return OutputKind::regression;
  if (text == "categorical") return OutputKind::categorical;
  throw ConfigError("unknown output kind '" + std::string(text) + "'");
}

ModelConfig ModelConfig::derived(int n_layers, int n_heads, int d_head, int vocab_size,
                                 int max_seq_len, OutputKind output_kind, std::uint64_t seed) {
  ModelConfig c;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.d_head = d_head;
  c.d_model = d_head * n_heads;
  c.d_mlp = 4 * c.d_model;
  c.vocab_size = vocab_size;
  c.max_seq_len = max_seq_len;
  c.output_kind = output_kind;
  c.seed = seed;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(v));
  };
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_head, "d_head");
  positive(d_model, "d_model");
  positive(d_mlp, "d_mlp");
  positive(vocab_size, "vocab_size");
  positive(max_seq_len, "max_seq_len");
  if (d_model != d_head * n_heads) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must equal d_head * n_heads (" +
                      std::to_string(d_head * n_heads) + ")");
  }
  if (d_mlp != 4 * d_model) {
    throw ConfigError("d_mlp (" + std::to_string(d_mlp) + ") must equal 4 * d_model (" +
                      std::to_string(4 * d_model) + ")");
  }
}

TokenBatch TokenBatch::from_rows(const std::vector<std::vector<int>>& rows) {
  TokenBatch t;
  t.batch = rows.size();
  t.seq = rows.empty() ? 0 : rows[0].size();
  t.ids.reserve(t.batch * t.seq);
  for (const auto& r : rows) {
    if (r.size() != t.seq) throw ShapeError("token batch: rows have different lengths");
    t.ids.insert(t.ids.end(), r.begin(), r.end());
  }
  return t;
}

TokenBatch TokenBatch::select(std::span<const std::size_t> rows) const {
  TokenBatch t;
  t.batch = rows.size();
  t.seq = seq;
  t.ids.reserve(t.batch * seq);
  for (std::size_t r : rows) {
    const auto src = row(r);
    t.ids.insert(t.ids.end(), src.begin(), src.end());
  }
  return t;
}

std::size_t ActivationCache::internal_count() const {
  return static_cast<std::size_t>(std::count_if(contributions.begin(), contributions.end(),
                                                [](const auto& kv) { return kv.first.is_internal(); }));
}

const Tensor& ActivationCache::at(const NodeId& node) const {
  auto it = contributions.find(node);
  if (it == contributions.end()) throw NodeError("activation cache has no entry for " + node.str());
  return it->second;
}

Tensor& Transformer::add_param(const std::string& name, Shape shape, double stddev, double fill,
                               Rng* rng) {
  std::vector<double> data(shape_numel(shape), fill);
  if (stddev > 0.0) {
    for (double& v : data) v = stddev * rng->normal();
  }
  params_.push_back({name, Tensor::parameter(std::move(shape), std::move(data))});
  return params_.back().tensor;
}

Transformer::Transformer(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed, "model-init");
  const std::size_t D = config_.d_model, dh = config_.d_head, M = config_.d_mlp;
  const double std_main = 0.02;
  const double std_out = 0.02 / std::sqrt(2.0 * config_.n_layers);
  add_param("embed.W_E", {static_cast<std::size_t>(config_.vocab_size), D}, std_main, 0.0, &rng);
  add_param("embed.W_pos", {static_cast<std::size_t>(config_.max_seq_len), D}, std_main, 0.0, &rng);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    add_param(p + "ln1.w", {D}, 0.0, 1.0, &rng);
    add_param(p + "ln1.b", {D}, 0.0, 0.0, &rng);
    for (int h = 0; h < config_.n_heads; ++h) {
      const std::string a = p + "attn." + std::to_string(h) + ".";
      add_param(a + "W_Q", {D, dh}, std_main, 0.0, &rng);
      add_param(a + "b_Q", {dh}, 0.0, 0.0, &rng);
      add_param(a + "W_K", {D, dh}, std_main, 0.0, &rng);
      add_param(a + "b_K", {dh}, 0.0, 0.0, &rng);
      add_param(a + "W_V", {D, dh}, std_main, 0.0, &rng);
      add_param(a + "b_V", {dh}, 0.0, 0.0, &rng);
      add_param(a + "W_O", {dh, D}, std_out, 0.0, &rng);
      add_param(a + "b_O", {D}, 0.0, 0.0, &rng);
    }
    add_param(p + "ln2.w", {D}, 0.0, 1.0, &rng);
    add_param(p + "ln2.b", {D}, 0.0, 0.0, &rng);
    add_param(p + "mlp.W_in", {D, M}, std_main, 0.0, &rng);
    add_param(p + "mlp.b_in", {M}, 0.0, 0.0, &rng);
    add_param(p + "mlp.W_out", {M, D}, std_out, 0.0, &rng);
    add_param(p + "mlp.b_out", {D}, 0.0, 0.0, &rng);
  }
  add_param("ln_final.w", {D}, 0.0, 1.0, &rng);
  add_param("ln_final.b", {D}, 0.0, 0.0, &rng);
  const std::size_t out = static_cast<std::size_t>(config_.output_width());
  add_param("unembed.W_U", {D, out}, std_main, 0.0, &rng);
  add_param("unembed.b_U", {out}, 0.0, 0.0, &rng);
  bind();
}

void Transformer::bind() {
  W_E_ = parameter("embed.W_E");
  W_pos_ = parameter("embed.W_pos");
  layers_.assign(config_.n_layers, {});
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    LayerParams& L = layers_[l];
    L.ln1_w = parameter(p + "ln1.w");
    L.ln1_b = parameter(p + "ln1.b");
    L.ln2_w = parameter(p + "ln2.w");
    L.ln2_b = parameter(p + "ln2.b");
    for (int h = 0; h < config_.n_heads; ++h) {
      const std::string a = p + "attn." + std::to_string(h) + ".";
      L.heads.push_back({parameter(a + "W_Q"), parameter(a + "b_Q"), parameter(a + "W_K"),
                         parameter(a + "b_K"), parameter(a + "W_V"), parameter(a + "b_V"),
                         parameter(a + "W_O"), parameter(a + "b_O")});
    }
    L.W_in = parameter(p + "mlp.W_in");
    L.b_in = parameter(p + "mlp.b_in");
    L.W_out = parameter(p + "mlp.W_out");
    L.b_out = parameter(p + "mlp.b_out");
  }
  lnf_w_ = parameter("ln_final.w");
  lnf_b_ = parameter("ln_final.b");
  W_U_ = parameter("unembed.W_U");
  b_U_ = parameter("unembed.b_U");
}

Transformer Transformer::clone() const {
  Transformer copy;
  copy.config_ = config_;
  for (const auto& p : params_) {
    Tensor t = Tensor::parameter(p.tensor.shape(),
                                 std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()));
    t.set_requires_grad(p.tensor.requires_grad());
    copy.params_.push_back({p.name, t});
  }
  copy.bind();
  return copy;
}

const Tensor& Transformer::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ConfigError("model has no parameter '" + std::string(name) + "'");
}

std::size_t Transformer::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void Transformer::set_trainable(bool trainable) {
  for (auto& p : params_) p.tensor.set_requires_grad(trainable);
}

std::vector<NodeId> Transformer::list_nodes(Granularity granularity) const {
  return enumerate_nodes(config_.n_layers, config_.n_heads, granularity);
}

bool Transformer::has_node(const NodeId& node) const {
  switch (node.kind) {
    case NodeKind::embed:
    case NodeKind::output:
      return node.layer == -1 && node.head == -1 && node.port == QkvPort::none;
    case NodeKind::mlp:
      return node.layer >= 0 && node.layer < config_.n_layers && node.head == -1 &&
             node.port == QkvPort::none;
    case NodeKind::attn_head:
      return node.layer >= 0 && node.layer < config_.n_layers && node.head >= 0 &&
             node.head < config_.n_heads;
  }
  return false;
}

std::vector<NodeId> Transformer::internal_nodes() const {
  std::vector<NodeId> out;
  for (const NodeId& n : list_nodes()) {
    if (n.is_internal()) out.push_back(n);
  }
  return out;
}

void Transformer::check_tokens(const TokenBatch& tokens) const {
  if (tokens.batch == 0 || tokens.seq == 0) throw ShapeError("forward: empty token batch");
  if (tokens.ids.size() != tokens.batch * tokens.seq) throw ShapeError("forward: malformed token batch");
  if (tokens.seq > static_cast<std::size_t>(config_.max_seq_len)) {
    throw ShapeError("forward: sequence length " + std::to_string(tokens.seq) + " exceeds max_seq_len " +
                     std::to_string(config_.max_seq_len));
  }
  for (int id : tokens.ids) {
    if (id < 0 || id >= config_.vocab_size) {
      throw ShapeError("forward: token id " + std::to_string(id) + " out of range for vocabulary of " +
                       std::to_string(config_.vocab_size));
    }
  }
}

namespace {

void check_replacement(const NodeId& node, const Tensor& got, const Tensor& natural) {
  if (got.shape() != natural.shape()) {
    throw ShapeError("patch for " + node.str() + ": shape " + shape_str(got.shape()) +
                     " differs from natural " + shape_str(natural.shape()));
  }
}

Tensor affine_norm(const Tensor& x, const Tensor& w, const Tensor& b) {
  return ops::add(ops::mul(ops::layer_stats(x), w), b);
}

}  // namespace

Tensor Transformer::forward(const TokenBatch& tokens, ForwardHooks* hooks) const {
  check_tokens(tokens);
  ForwardHooks passthrough;
  ForwardHooks& hk = hooks ? *hooks : passthrough;
  const bool routes = hk.routes_inputs();
  const bool qkv = routes && hk.input_granularity() == Granularity::qkv;
  const std::size_t B = tokens.batch, S = tokens.seq;
  const double scale = 1.0 / std::sqrt(static_cast<double>(config_.d_head));

  std::vector<std::uint8_t> causal(S * S, 0);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = i + 1; j < S; ++j) causal[i * S + j] = 1;
  }

  std::vector<Contribution> contribs;
  auto emit = [&](const NodeId& node, const Tensor& natural) {
    Tensor out = hk.node_output(node, natural);
    check_replacement(node, out, natural);
    contribs.push_back({node, out});
    return out;
  };

  Tensor embed = ops::add(ops::embedding(W_E_, tokens.ids, {B, S}), ops::slice(W_pos_, 0, 0, S));
  Tensor stream = emit(NodeId::embed(), embed);

  for (int l = 0; l < config_.n_layers; ++l) {
    const LayerParams& L = layers_[l];
    const Tensor layer_in = stream;
    const std::size_t upstream = contribs.size();
    std::vector<std::pair<const TensorImpl*, Tensor>> normed;
    auto norm1 = [&](const Tensor& x) {
      for (const auto& [key, val] : normed) {
        if (key == x.impl().get()) return val;
      }
      Tensor n = affine_norm(x, L.ln1_w, L.ln1_b);
      normed.emplace_back(x.impl().get(), n);
      return n;
    };
    std::vector<Tensor> head_out;
    for (int h = 0; h < config_.n_heads; ++h) {
      const HeadParams& P = L.heads[h];
      Tensor in_q = layer_in, in_k = layer_in, in_v = layer_in;
      const std::span<const Contribution> up(contribs.data(), upstream);
      if (qkv) {
        in_q = hk.node_input(NodeId::attn_port(l, h, QkvPort::q), layer_in, up);
        in_k = hk.node_input(NodeId::attn_port(l, h, QkvPort::k), layer_in, up);
        in_v = hk.node_input(NodeId::attn_port(l, h, QkvPort::v), layer_in, up);
      } else if (routes) {
        in_q = in_k = in_v = hk.node_input(NodeId::attn(l, h), layer_in, up);
      }
      Tensor q = ops::add(ops::matmul(norm1(in_q), P.W_Q), P.b_Q);
      Tensor k = ops::add(ops::matmul(norm1(in_k), P.W_K), P.b_K);
      Tensor v = ops::add(ops::matmul(norm1(in_v), P.W_V), P.b_V);
      Tensor scores = ops::mul_scalar(ops::matmul(q, ops::transpose(k)), scale);
      scores = ops::mask_fill(scores, {S, S}, causal, -1e30);
      Tensor z = ops::matmul(ops::softmax(scores), v);
      Tensor c = ops::add(ops::matmul(z, P.W_O), P.b_O);
      head_out.push_back(hk.node_output(NodeId::attn(l, h), c));
      check_replacement(NodeId::attn(l, h), head_out.back(), c);
    }
    for (int h = 0; h < config_.n_heads; ++h) {
      contribs.push_back({NodeId::attn(l, h), head_out[h]});
      stream = ops::add(stream, head_out[h]);
    }

    Tensor mlp_in = routes ? hk.node_input(NodeId::mlp(l), stream, contribs) : stream;
    Tensor x = affine_norm(mlp_in, L.ln2_w, L.ln2_b);
    Tensor hidden = ops::gelu(ops::add(ops::matmul(x, L.W_in), L.b_in));
    Tensor m = ops::add(ops::matmul(hidden, L.W_out), L.b_out);
    stream = ops::add(stream, emit(NodeId::mlp(l), m));
  }

  Tensor final_stream = routes ? hk.node_input(NodeId::output(), stream, contribs) : stream;
  Tensor logits = ops::add(ops::matmul(affine_norm(final_stream, lnf_w_, lnf_b_), W_U_), b_U_);
  hk.observe_final(final_stream, logits);
  return logits;
}

namespace {

class CacheHooks : public ForwardHooks {
 public:
  explicit CacheHooks(ActivationCache& cache) : cache_(cache) {}
  Tensor node_output(const NodeId& node, const Tensor& natural) override {
    cache_.contributions[node] = natural;
    return natural;
  }
  void observe_final(const Tensor& final_stream, const Tensor& logits) override {
    cache_.final_stream = final_stream;
    cache_.logits = logits;
  }

 private:
  ActivationCache& cache_;
};

class PatchHooks : public ForwardHooks {
 public:
  explicit PatchHooks(const PatchPlan& plan) : plan_(plan) {
    for (const auto& [node, _] : plan_) {
      if (node.port != QkvPort::none) ports_ = true;
    }
  }
  Tensor node_output(const NodeId& node, const Tensor& natural) override {
    auto it = plan_.find(node);
    return it == plan_.end() ? natural : it->second;
  }
  bool routes_inputs() const override { return ports_; }
  Granularity input_granularity() const override { return Granularity::qkv; }
  Tensor node_input(const NodeId& dst, const Tensor& stream, std::span<const Contribution>) override {
    if (dst.port == QkvPort::none) return stream;
    auto it = plan_.find(dst);
    if (it == plan_.end()) return stream;
    check_replacement(dst, it->second, stream);
    return it->second;
  }

 private:
  const PatchPlan& plan_;
  bool ports_ = false;
};

}  // namespace

std::pair<Tensor, ActivationCache> Transformer::forward_with_cache(const TokenBatch& tokens) const {
  ActivationCache cache;
  CacheHooks hooks(cache);
  Tensor logits = forward(tokens, &hooks);
  return {logits, std::move(cache)};
}

void validate_patch_plan(const Transformer& model, const PatchPlan& plan, const TokenBatch& tokens) {
  const Shape expected{tokens.batch, tokens.seq, static_cast<std::size_t>(model.config().d_model)};
  for (const auto& [node, value] : plan) {
    if (!(node.is_internal() || node.kind == NodeKind::embed) || node.port != QkvPort::none || !model.has_node(node)) {
      throw NodeError("patch plan: model has no patchable node " + node.str());
    }
    if (value.shape() != expected) {
      throw ShapeError("patch for " + node.str() + ": shape " + shape_str(value.shape()) +
                       " differs from natural " + shape_str(expected));
    }
  }
}

Tensor Transformer::forward_with_patch(const TokenBatch& tokens, const PatchPlan& plan) const {
  check_tokens(tokens);
  validate_patch_plan(*this, plan, tokens);
  PatchHooks hooks(plan);
  return forward(tokens, &hooks);
}

}  // namespace siit
