// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/optim.hpp"

#include <cmath>

#include "siit/error.hpp"

namespace siit {

Adam::Adam(std::vector<NamedTensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    first_moment_.emplace_back(p.tensor.numel(), 0.0);
    second_moment_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) throw AutogradError("adam: parameter '" + p.name + "' has no gradient");
  }
  ++step_count_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& t = params_[k].tensor;
    auto w = t.mutable_data();
    auto g = t.mutable_grad();
    auto& m = first_moment_[k];
    auto& v = second_moment_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
      g[i] = 0.0;
    }
  }
}

void zero_grads(std::vector<NamedTensor>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace siit
