// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace siit {

struct MannWhitneyResult {
  // U statistic of the first sample: pairs (a, b) with a > b, ties counted half.
  double u = 0.0;
  double p = 1.0;  // two-sided
  bool exact = false;
};

// Midrank U test. The p-value is exact by enumeration of all group
// assignments when n_a + n_b <= 12, otherwise a normal approximation with tie
// and continuity corrections. Throws DomainError on an empty sample.
MannWhitneyResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b);
// Forces the normal approximation (for boundary checks).
double mann_whitney_normal_p(const std::vector<double>& a, const std::vector<double>& b);

// Magnitude buckets of max(A, 1 - A).
enum class EffectMagnitude { negligible, small, medium, large };

const char* to_string(EffectMagnitude m);

struct A12Result {
  double value = 0.5;
  EffectMagnitude magnitude = EffectMagnitude::negligible;
};

// [#(a > b) + #(a == b) / 2] / (n_a n_b). Throws DomainError on an empty sample.
A12Result vargha_delaney_a12(const std::vector<double>& a, const std::vector<double>& b);

struct PairComparison {
  std::string algo_a;
  std::string algo_b;
  double u = 0.0;
  double p = 1.0;
  bool exact = false;
  // Holm step-down adjustment over all pairs of the table.
  double p_holm = 1.0;
  double a12 = 0.5;
  EffectMagnitude magnitude = EffectMagnitude::negligible;
  bool significant = false;
};

struct ComparisonTable {
  std::vector<std::string> algorithms;
  std::vector<std::string> tasks;
  double alpha = 0.05;
  // Upper triangle in algorithm order.
  std::vector<PairComparison> pairs;

  const PairComparison& find(const std::string& a, const std::string& b) const;
  nlohmann::json to_json() const;
  std::string csv() const;
};

// (task, algorithm) -> AUC.
using AucTable = std::map<std::pair<std::string, std::string>, double>;

// Pairwise U tests and A12 over per-task AUC samples. Throws ConfigError with
// fewer than 2 algorithms or 3 tasks, or listing every missing cell.
ComparisonTable compare_algorithms(const AucTable& table, double alpha = 0.05);

}  // namespace siit
