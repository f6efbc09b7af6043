// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace siit {

// Derives an independent sub-seed from (seed, purpose tag). Every stochastic
// stage draws from its own derived stream so stages reproduce in isolation.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

// Seeded generator with distribution code written out explicitly, so streams
// do not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view tag) : engine_(derive_seed(seed, tag)) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  double normal();
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace siit
