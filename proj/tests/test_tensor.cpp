// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "siit/error.hpp"
#include "siit/gradcheck.hpp"
#include "siit/ops.hpp"
#include "siit/optim.hpp"
#include "siit/rng.hpp"
#include "support/composites.hpp"

using namespace siit;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("matmul by the identity returns the operand") {
  const Tensor I = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {3, 4, 5, 6});
  CHECK(values(ops::matmul(I, m)) == std::vector<double>{3, 4, 5, 6});
}

TEST_CASE("matmul of two 2x2 matrices") {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  CHECK(values(ops::matmul(a, b)) == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("softmax of equal logits is uniform") {
  CHECK(values(ops::softmax(Tensor::from({2}, {0, 0}))) == std::vector<double>{0.5, 0.5});
}

TEST_CASE("shape mismatches name the operation and shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(ops::matmul(a, b), ShapeError);
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);
  try {
    ops::add(a, b);
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("(2,3)") != std::string::npos);
  }
}

TEST_CASE("log and div reject domain violations") {
  CHECK_THROWS_AS(ops::log(Tensor::from({2}, {1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(ops::log(Tensor::from({1}, {-1.0})), DomainError);
  CHECK_THROWS_AS(ops::div(Tensor::from({2}, {1, 1}), Tensor::from({2}, {1, 0})), DomainError);
}

TEST_CASE("only suffix broadcasting is accepted") {
  const Tensor a = Tensor::zeros({2, 3});
  CHECK(ops::add(a, Tensor::full({3}, 1.0)).shape() == Shape{2, 3});
  CHECK_THROWS_AS(ops::add(a, Tensor::zeros({2})), ShapeError);
}

TEST_CASE("backward of sum gives ones") {
  Tensor x = Tensor::parameter({3}, {1, 2, 3});
  Tape tape;
  Tensor loss;
  {
    Tape::Scope s(tape);
    loss = ops::sum(x);
  }
  tape.backward(loss);
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward of sum of squares gives 2x") {
  Tensor x = Tensor::parameter({2}, {2, -1});
  Tape tape;
  Tensor loss;
  {
    Tape::Scope s(tape);
    loss = ops::sum(ops::mul(x, x));
  }
  tape.backward(loss);
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{4, -2});
}

TEST_CASE("backward errors: non-scalar, repeated, disconnected") {
  Tensor x = Tensor::parameter({2}, {1, 2});
  {
    Tape tape;
    Tensor y;
    {
      Tape::Scope s(tape);
      y = ops::mul(x, x);
    }
    CHECK_THROWS_AS(tape.backward(y), AutogradError);
  }
  {
    Tape tape;
    Tensor loss;
    {
      Tape::Scope s(tape);
      loss = ops::sum(x);
    }
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), AutogradError);
    tape.reset();
  }
  {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), AutogradError);
  }
}

TEST_CASE("unreached requires-grad tensors receive zero gradients") {
  Tensor x = Tensor::parameter({2}, {1, 2});
  Tensor unused = Tensor::parameter({2}, {3, 4});
  Tape tape;
  Tensor loss;
  {
    Tape::Scope s(tape);
    ops::mul(unused, unused);
    loss = ops::sum(x);
  }
  tape.backward(loss);
  REQUIRE(unused.has_grad());
  CHECK(std::vector<double>(unused.grad().begin(), unused.grad().end()) == std::vector<double>{0, 0});
}

TEST_CASE("gradients are linear in the loss") {
  Rng rng(5);
  const Tensor xv = random({3, 4}, rng);
  const Tensor w = random({4, 2}, rng);
  auto grad_of = [&](int which) {
    Tensor x = Tensor::parameter(xv.shape(), values(xv));
    Tape tape;
    Tensor loss;
    {
      Tape::Scope s(tape);
      const Tensor l1 = ops::mean(ops::exp(ops::matmul(x, w)));
      const Tensor l2 = ops::sum(ops::mul(x, x));
      loss = which == 0 ? l1 : which == 1 ? l2 : ops::add(l1, l2);
    }
    tape.backward(loss);
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const auto g1 = grad_of(0), g2 = grad_of(1), g12 = grad_of(2);
  for (std::size_t i = 0; i < g12.size(); ++i) CHECK(g12[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
}

TEST_CASE("forward passes are deterministic") {
  Rng rng(9);
  const Tensor a = random({5, 7}, rng), b = random({7, 3}, rng);
  CHECK(values(ops::softmax(ops::matmul(a, b))) == values(ops::softmax(ops::matmul(a, b))));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p = Tensor::parameter({3}, {1, 2, 3});
  Adam adam({{"p", p}});
  adam.step();
  CHECK(values(p) == std::vector<double>{1, 2, 3});
  CHECK(adam.step_count() == 1);
}

TEST_CASE("adam: first step on a unit gradient moves by the learning rate") {
  Tensor p = Tensor::parameter({1}, {1.0});
  Adam adam({{"p", p}});
  CHECK(adam.options().learning_rate == 0.001);
  CHECK(adam.options().beta1 == 0.9);
  CHECK(adam.options().beta2 == 0.999);
  p.mutable_grad()[0] = 1.0;
  adam.step();
  CHECK(p[0] == doctest::Approx(0.999).epsilon(1e-9));
  CHECK(p.grad()[0] == 0.0);
}

TEST_CASE("adam: missing gradient names the parameter") {
  Tensor p = Tensor::parameter({1}, {1.0});
  Adam adam({{"weights.w", p}});
  p.clear_grad();
  try {
    adam.step();
    FAIL("expected AutogradError");
  } catch (const AutogradError& e) {
    CHECK(std::string(e.what()).find("weights.w") != std::string::npos);
  }
}

TEST_CASE("adam: converges on a quadratic") {
  Tensor p = Tensor::parameter({1}, {0.0});
  Adam adam({{"p", p}}, AdamOptions{0.1});
  double prev = 3.0;
  for (int i = 0; i < 100; ++i) {
    Tape tape;
    Tensor loss;
    {
      Tape::Scope s(tape);
      const Tensor d = ops::add_scalar(p, -3.0);
      loss = ops::sum(ops::mul(d, d));
    }
    tape.backward(loss);
    adam.step();
    const double gap = std::abs(p[0] - 3.0);
    // Adam overshoots once momentum builds; require progress after warmup.
    if (i >= 5 && i < 20) CHECK(gap < prev);
    prev = gap;
  }
  CHECK(std::abs(p[0] - 3.0) < 0.5);
}

TEST_CASE("grad_check: linear function has zero error") {
  Rng rng(3);
  const GradCheckReport r = grad_check([](const Tensor& x) { return ops::sum(x); }, random({4, 3}, rng), 1e-5, 1e-4);
  CHECK(r.max_rel_error == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_FALSE(r.failed);
}

TEST_CASE("grad_check: softmax cross-entropy on random logits") {
  Rng rng(4);
  const std::vector<int> labels{0, 2, 1};
  const GradCheckReport r = grad_check(
      [&](const Tensor& x) { return ops::mul_scalar(ops::mean(ops::gather_last(ops::log_softmax(x), labels)), -1.0); },
      random({3, 4}, rng), 1e-5, 1e-4);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("grad_check: kinks are excluded") {
  for (const auto& c : testing::gradcheck_composites()) {
    if (c.name != "mask_fill_relu" && c.name != "abs") continue;
    const GradCheckReport r = grad_check(c.f, c.x, 1e-5, 1e-4, c.kink);
    CHECK(r.excluded >= 1);
    CHECK_FALSE(r.failed);
  }
}

TEST_CASE("grad_check: every composite passes") {
  for (const auto& c : testing::gradcheck_composites()) {
    CAPTURE(c.name);
    const GradCheckReport r = grad_check(c.f, c.x, 1e-5, 1e-4, c.kink);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("grad_check: transformer parameters") {
  const ModelConfig cfg = ModelConfig::derived(2, 2, 4, 5, 4, OutputKind::categorical, 21);
  for (const char* name : {"blocks.0.attn.1.W_Q", "blocks.1.mlp.W_in", "unembed.W_U", "embed.W_pos"}) {
    CAPTURE(name);
    CHECK(testing::parameter_grad_check(cfg, name, 1e-5, 1e-4).max_rel_error < 1e-4);
  }
}
