// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "siit/gradcheck.hpp"
#include "siit/transformer.hpp"

namespace siit::testing {

struct Composite {
  std::string name;
  Tensor x;
  std::function<Tensor(const Tensor&)> f;
  std::function<bool(std::size_t, double, double)> kink;
};

// Differentiable composites covering every op, up to full transformer losses
// with respect to an additive perturbation of the residual stream.
std::vector<Composite> gradcheck_composites();

// Central differences on a model parameter, perturbed in place, against the
// tape gradient of the mean cross-entropy (or mse) of a random batch.
GradCheckReport parameter_grad_check(const ModelConfig& cfg, const std::string& param, double h, double tol,
                                     std::size_t max_coords = 24);

}  // namespace siit::testing
