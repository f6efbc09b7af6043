// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "siit/tensor.hpp"

namespace siit {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates skipped because a kink (mask boundary, |x| at 0, ...) lies
  // inside the finite-difference stencil.
  std::size_t excluded = 0;
  bool failed = false;
};

// Compares autodiff gradients of scalar `f` at `x` against central finite
// differences with step `h`. The relative error per coordinate is
// |auto - fd| / max(1, |auto|, |fd|). `kink` may flag coordinates whose
// stencil [x - h, x + h] straddles a non-differentiable point.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h,
                           double tol,
                           const std::function<bool(std::size_t index, double value, double h)>& kink = {});

}  // namespace siit
