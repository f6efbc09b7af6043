// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace siit {

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h,
                           double tol,
                           const std::function<bool(std::size_t, double, double)>& kink) {
  Tensor leaf = Tensor::parameter(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = f(leaf);
  }
  tape.backward(loss);
  const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  GradCheckReport report;
  std::vector<double> probe(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    if (kink && kink(i, probe[i], h)) {
      ++report.excluded;
      continue;
    }
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(Tensor::from(x.shape(), probe)).item();
    probe[i] = orig - h;
    const double fm = f(Tensor::from(x.shape(), probe)).item();
    probe[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(fd)});
    report.max_rel_error = std::max(report.max_rel_error, std::fabs(analytic[i] - fd) / denom);
    ++report.checked;
  }
  report.failed = report.max_rel_error > tol;
  return report;
}

}  // namespace siit
