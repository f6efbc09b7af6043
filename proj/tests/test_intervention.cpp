// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "siit/error.hpp"
#include "siit/intervention.hpp"
#include "siit/ops.hpp"
#include "siit/optim.hpp"

using namespace siit;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void zero_parameter(Transformer& m, const std::string& name) {
  for (NamedTensor& p : m.parameters()) {
    if (p.name == name) {
      for (double& x : p.tensor.mutable_data()) x = 0.0;
      return;
    }
  }
  FAIL("no parameter " << name);
}

struct Fixture {
  const TaskSpec& task;
  Transformer model;
  TokenBatch base, source;

  Fixture(const std::string& name, std::uint64_t seed, std::size_t n = 8)
      : task(task_by_name(name)), model(task.model_config(seed)) {
    const DatasetSplit d = sample_dataset(task, 2 * n, seed);
    std::vector<Sequence> b(d.train.inputs.begin(), d.train.inputs.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<Sequence> s(d.train.inputs.begin() + static_cast<std::ptrdiff_t>(n), d.train.inputs.end());
    base = TokenBatch::from_rows(b);
    source = TokenBatch::from_rows(s);
  }
};

}  // namespace

TEST_CASE("int_inv identities on every task and seed") {
  for (const TaskSpec& t : builtin_tasks()) {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      CAPTURE(t.name);
      CAPTURE(seed);
      Fixture f(t.name, seed);
      const Tensor plain = f.model.forward(f.base);
      CHECK(values(int_inv(f.model, f.base, f.base, f.model.internal_nodes())) == values(plain));
      CHECK(values(int_inv(f.model, f.base, f.source, {})) == values(plain));
      std::vector<NodeId> all{NodeId::embed()};
      for (const NodeId& n : f.model.internal_nodes()) all.push_back(n);
      CHECK(values(int_inv(f.model, f.base, f.source, all)) == values(f.model.forward(f.source)));
    }
  }
}

TEST_CASE("patching all internal nodes leaves the base embedding in the stream") {
  Fixture f("frac_x", 3);
  const auto src = f.model.forward_with_cache(f.source).second;
  const auto bse = f.model.forward_with_cache(f.base).second;
  // Oracle: the final stream is the base embedding plus every source contribution.
  Tensor want = bse.at(NodeId::embed());
  for (const NodeId& n : f.model.internal_nodes()) want = ops::add(want, src.at(n));
  struct Final : ForwardHooks {
    PatchPlan plan;
    Tensor final;
    Tensor node_output(const NodeId& n, const Tensor& natural) override {
      auto it = plan.find(n);
      return it == plan.end() ? natural : it->second;
    }
    void observe_final(const Tensor& s, const Tensor&) override { final = s; }
  } hooks;
  hooks.plan = interchange_plan(src, f.model.internal_nodes());
  f.model.forward(f.base, &hooks);
  CHECK(max_abs_diff(hooks.final, want) < 1e-12);
  CHECK(values(int_inv(f.model, f.base, f.source, f.model.internal_nodes())) != values(f.model.forward(f.source)));
}

TEST_CASE("cached and uncached int_inv agree bitwise") {
  Fixture f("dedup", 1);
  const auto cache = f.model.forward_with_cache(f.source).second;
  const std::vector<NodeId> nodes{NodeId::attn(0, 1), NodeId::mlp(1)};
  CHECK(values(int_inv(f.model, f.base, f.source, nodes)) == values(int_inv(f.model, f.base, cache, nodes)));
}

TEST_CASE("int_inv rejects mismatched shapes") {
  Fixture f("frac_x", 0);
  const TokenBatch one = f.source.select(std::vector<std::size_t>{0});
  CHECK_THROWS_AS(int_inv(f.model, f.base, one, {NodeId::mlp(0)}), ShapeError);
}

TEST_CASE("disjoint patches compose in either order") {
  Fixture f("open_close", 2);
  const auto src = f.model.forward_with_cache(f.source).second;
  const std::vector<NodeId> v1{NodeId::attn(0, 0), NodeId::mlp(1)}, v2{NodeId::attn(1, 2), NodeId::mlp(0)};
  std::vector<NodeId> both = v1;
  both.insert(both.end(), v2.begin(), v2.end());
  const Tensor joint = int_inv(f.model, f.base, src, both);
  PatchPlan a = interchange_plan(src, v1), b = interchange_plan(src, v2);
  PatchPlan ab = a, ba = b;
  ab.insert(b.begin(), b.end());
  ba.insert(a.begin(), a.end());
  CHECK(values(f.model.forward_with_patch(f.base, ab)) == values(joint));
  CHECK(values(f.model.forward_with_patch(f.base, ba)) == values(joint));
}

TEST_CASE("ablation kinds share routing and differ only in the replacement") {
  Fixture f("frac_x", 4);
  const auto src = f.model.forward_with_cache(f.source).second;
  const MeanCache means = compute_mean_cache(f.model, f.source);
  const std::vector<NodeId> nodes{NodeId::attn(1, 3)};
  const Tensor zero = Tensor::zeros({f.base.batch, f.base.seq, static_cast<std::size_t>(f.model.config().d_model)});
  CHECK(values(ablation_plan(f.model, AblationKind::zero, f.base, nullptr, nullptr, nodes).at(nodes[0])) == values(zero));
  CHECK(values(f.model.forward_with_patch(f.base, ablation_plan(f.model, AblationKind::interchange, f.base, &src,
                                                                 nullptr, nodes))) ==
        values(int_inv(f.model, f.base, src, nodes)));
  CHECK(values(f.model.forward_with_patch(f.base, ablation_plan(f.model, AblationKind::mean, f.base, nullptr,
                                                                 &means, nodes))) ==
        values(mean_ablate(f.model, f.base, nodes, means)));
  CHECK(values(f.model.forward_with_patch(f.base, {{nodes[0], zero}})) == values(zero_ablate(f.model, f.base, nodes)));
  CHECK_THROWS_AS(ablation_plan(f.model, AblationKind::mean, f.base, nullptr, nullptr, nodes), ConfigError);
  CHECK_THROWS_AS(ablation_plan(f.model, AblationKind::interchange, f.base, nullptr, nullptr, nodes), ConfigError);
  CHECK(ablation_kind_from_string("mean") == AblationKind::mean);
  CHECK_THROWS_AS(ablation_kind_from_string("resample"), ConfigError);
}

TEST_CASE("empty ablations are plain forwards") {
  Fixture f("dedup", 0);
  const Tensor plain = f.model.forward(f.base);
  CHECK(values(mean_ablate(f.model, f.base, {}, compute_mean_cache(f.model, f.source))) == values(plain));
  CHECK(values(zero_ablate(f.model, f.base, {})) == values(plain));
}

TEST_CASE("zero-ablating a zero contribution changes nothing") {
  Fixture f("frac_x", 0);
  Transformer m = f.model.clone();
  // A head with zero output weights and bias contributes exactly zero.
  zero_parameter(m, "blocks.0.attn.2.W_O");
  zero_parameter(m, "blocks.0.attn.2.b_O");
  CHECK(values(zero_ablate(m, f.base, {NodeId::attn(0, 2)})) == values(m.forward(f.base)));
}

TEST_CASE("mean-ablating a constant node equals interchange with any source") {
  Fixture f("frac_x", 0);
  Transformer m = f.model.clone();
  zero_parameter(m, "blocks.1.attn.0.W_O");
  const MeanCache means = compute_mean_cache(m, f.source);
  const NodeId n = NodeId::attn(1, 0);
  CHECK(values(mean_ablate(m, f.base, {n}, means)) == values(int_inv(m, f.base, f.source, {n})));
}

TEST_CASE("mean cache arithmetic") {
  Fixture f("open_close", 1, 2);
  const TokenBatch a = f.base.select(std::vector<std::size_t>{0});
  const TokenBatch b = f.base.select(std::vector<std::size_t>{1});
  const auto ca = f.model.forward_with_cache(a).second, cb = f.model.forward_with_cache(b).second;
  const NodeId n = NodeId::mlp(1);
  const MeanCache one = compute_mean_cache(f.model, a);
  CHECK(values(one.means.at(n)) == values(ca.at(n)));
  const MeanCache two = compute_mean_cache(f.model, f.base);
  const Tensor want = ops::mul_scalar(ops::add(ca.at(n), cb.at(n)), 0.5);
  CHECK(max_abs_diff(two.means.at(n), ops::reshape(want, two.means.at(n).shape())) < 1e-15);
  const MeanCache avg = compute_mean_cache(f.model, f.base, MeanMode::averaged);
  CHECK(avg.means.at(n).shape() == Shape{static_cast<std::size_t>(f.model.config().d_model)});
  CHECK(avg.expand(n, 3, 4).shape() == Shape{3, 4, static_cast<std::size_t>(f.model.config().d_model)});
  CHECK_THROWS_AS(one.expand(NodeId::embed(), 1, 1), NodeError);
  CHECK_THROWS_AS(compute_mean_cache(f.model, TokenBatch{0, 6, {}}), ConfigError);
}

TEST_CASE("mean cache is invariant to shuffling") {
  Fixture f("dedup", 2, 12);
  const MeanCache a = compute_mean_cache(f.model, f.base);
  std::vector<std::size_t> rows(f.base.batch);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = rows.size() - 1 - i;
  const MeanCache b = compute_mean_cache(f.model, f.base.select(rows));
  for (const auto& [node, m] : a.means) CHECK(max_abs_diff(m, b.means.at(node)) < 1e-12);
}

TEST_CASE("alignment partitions internal nodes on every task and seed") {
  for (const TaskSpec& t : builtin_tasks()) {
    for (std::uint64_t seed : {0u, 1u, 2u, 3u, 4u}) {
      CAPTURE(t.name);
      const Transformer m(t.model_config(seed));
      const Alignment a = make_alignment(*t.high_level, m.config(), seed);
      std::set<NodeId> seen;
      for (const auto& [var, nodes] : a.pi) {
        for (const NodeId& n : nodes) {
          CHECK(seen.insert(n).second);
          CHECK(n.layer == t.high_level->variable(var).layer);
        }
      }
      std::set<NodeId> circuit, rest;
      for (const NodeId& n : a.aligned_nodes()) circuit.insert(n);
      for (const NodeId& n : a.non_circuit_nodes()) rest.insert(n);
      CHECK(circuit == seen);
      for (const NodeId& n : rest) CHECK(circuit.count(n) == 0);
      CHECK(circuit.size() + rest.size() == m.internal_nodes().size());
      const auto cn = a.circuit_nodes();
      CHECK(std::count(cn.begin(), cn.end(), NodeId::embed()) == 1);
      CHECK(std::count(cn.begin(), cn.end(), NodeId::output()) == 1);
    }
  }
}

TEST_CASE("frac_x alignment uses one head of four") {
  const TaskSpec& t = task_by_name("frac_x");
  const Alignment a = make_alignment(*t.high_level, t.model_config(0), 0);
  REQUIRE(a.pi.at("frac_x").size() == 1);
  CHECK(a.pi.at("frac_x")[0].kind == NodeKind::attn_head);
  CHECK(a.pi.at("is_x") == std::vector<NodeId>{NodeId::mlp(0)});
  int non_circuit_heads = 0;
  for (const NodeId& n : a.non_circuit_nodes()) non_circuit_heads += n.kind == NodeKind::attn_head && n.layer == 1;
  CHECK(non_circuit_heads == 3);
  CHECK(make_alignment(*t.high_level, t.model_config(0), 7).to_json() ==
        make_alignment(*t.high_level, t.model_config(0), 7).to_json());
}

TEST_CASE("ioi variables map to whole layers") {
  const TaskSpec& t = task_by_name("ioi");
  const Alignment a = make_alignment(*t.high_level, t.model_config(0), 0);
  for (const auto& [var, nodes] : a.pi) CHECK(nodes.size() == static_cast<std::size_t>(t.n_heads) + 1);
}

TEST_CASE("alignment validation") {
  const TaskSpec& t = task_by_name("frac_x");
  Alignment a = make_alignment(*t.high_level, t.model_config(0), 0);
  SUBCASE("overlap") {
    a.pi["frac_x"] = a.pi["is_x"];
    CHECK_THROWS_AS(a.validate(*t.high_level), ConfigError);
  }
  SUBCASE("wrong layer") {
    a.pi["frac_x"] = {NodeId::attn(0, 0)};
    CHECK_THROWS_AS(a.validate(*t.high_level), ConfigError);
  }
  SUBCASE("outside the model") {
    a.pi["frac_x"] = {NodeId::attn(1, 9)};
    CHECK_THROWS_AS(a.validate(*t.high_level), ConfigError);
  }
  SUBCASE("unknown variable") {
    a.pi["ghost"] = {NodeId::attn(1, 1)};
    CHECK_THROWS_AS(a.validate(*t.high_level), NodeError);
  }
  SUBCASE("json round trip") {
    const Alignment b = Alignment::from_json(a.to_json(), a.n_layers, a.n_heads);
    CHECK(b.pi == a.pi);
    CHECK(b.seed == a.seed);
  }
}

TEST_CASE("alignment capacity errors name the layer") {
  auto fn = [](const Sequence& s, const std::vector<const Values*>&) { return Values(s.size(), 0.0); };
  std::vector<HLVariable> vars;
  for (int i = 0; i < 3; ++i) vars.push_back({"v" + std::to_string(i), {HighLevelModel::kInput}, NodeRole::attention, 1, fn});
  const HighLevelModel hl(vars, "v0", OutputKind::regression);
  const ModelConfig cfg = ModelConfig::derived(2, 2, 4, 4, 4, OutputKind::regression, 0);
  try {
    make_alignment(hl, cfg, 0);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}
