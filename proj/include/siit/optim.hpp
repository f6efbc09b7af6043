// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "siit/tensor.hpp"

namespace siit {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct AdamOptions {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moment buffers are allocated per parameter on
// construction; step() consumes and zeroes the gradients.
class Adam {
 public:
  Adam(std::vector<NamedTensor> params, AdamOptions options = {});

  // Throws AutogradError naming the first parameter that has no gradient.
  void step();

  std::uint64_t step_count() const { return step_count_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<NamedTensor>& params() const { return params_; }
  std::size_t moment_size() const { return first_moment_.size(); }

 private:
  std::vector<NamedTensor> params_;
  AdamOptions options_;
  std::uint64_t step_count_ = 0;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
};

void zero_grads(std::vector<NamedTensor>& params);

}  // namespace siit
