// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "siit/error.hpp"
#include "siit/io.hpp"

namespace siit {

namespace {

// Midranks (1-based) of the pooled sample.
std::vector<double> midranks(const std::vector<double>& pooled) {
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
  std::vector<double> ranks(pooled.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && pooled[order[j]] == pooled[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

void check_samples(const std::vector<double>& a, const std::vector<double>& b, const char* what) {
  if (a.empty() || b.empty()) throw DomainError(std::string(what) + ": samples must be non-empty");
  for (double x : a) {
    if (std::isnan(x)) throw DomainError(std::string(what) + ": NaN in sample");
  }
  for (double x : b) {
    if (std::isnan(x)) throw DomainError(std::string(what) + ": NaN in sample");
  }
}

// Visits every size-k subset of [0, n) as a rank sum.
void enumerate_rank_sums(const std::vector<double>& ranks, std::size_t k, std::size_t start, double partial,
                         std::vector<double>& sums) {
  if (k == 0) {
    sums.push_back(partial);
    return;
  }
  for (std::size_t i = start; i + k <= ranks.size(); ++i) enumerate_rank_sums(ranks, k - 1, i + 1, partial + ranks[i], sums);
}

}  // namespace

MannWhitneyResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b) {
  check_samples(a, b, "mann_whitney_u");
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> ranks = midranks(pooled);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double ra = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ra += ranks[i];
  MannWhitneyResult r;
  r.u = ra - na * (na + 1.0) / 2.0;
  if (pooled.size() > 12) {
    r.p = mann_whitney_normal_p(a, b);
    return r;
  }
  r.exact = true;
  const double mean = na * nb / 2.0;
  const double observed = std::abs(r.u - mean);
  std::vector<double> sums;
  enumerate_rank_sums(ranks, a.size(), 0, 0.0, sums);
  std::size_t extreme = 0;
  for (double s : sums) {
    const double u = s - na * (na + 1.0) / 2.0;
    if (std::abs(u - mean) >= observed - 1e-9) ++extreme;
  }
  r.p = static_cast<double>(extreme) / static_cast<double>(sums.size());
  return r;
}

double mann_whitney_normal_p(const std::vector<double>& a, const std::vector<double>& b) {
  check_samples(a, b, "mann_whitney_u");
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> ranks = midranks(pooled);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double n = na + nb;
  double ra = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ra += ranks[i];
  const double u = ra - na * (na + 1.0) / 2.0;
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double var = na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
  if (var <= 0.0) return 1.0;
  const double z = std::max(0.0, std::abs(u - na * nb / 2.0) - 0.5) / std::sqrt(var);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

const char* to_string(EffectMagnitude m) {
  switch (m) {
    case EffectMagnitude::negligible: return "negligible";
    case EffectMagnitude::small: return "small";
    case EffectMagnitude::medium: return "medium";
    case EffectMagnitude::large: return "large";
  }
  return "?";
}

A12Result vargha_delaney_a12(const std::vector<double>& a, const std::vector<double>& b) {
  check_samples(a, b, "vargha_delaney_a12");
  double wins = 0.0;
  for (double x : a) {
    for (double y : b) wins += x > y ? 2.0 : (x == y ? 1.0 : 0.0);
  }
  // Counting in half units keeps A12(a,b) + A12(b,a) == 1 exact.
  A12Result r;
  r.value = wins / (2.0 * static_cast<double>(a.size()) * static_cast<double>(b.size()));
  const double m = std::max(r.value, 1.0 - r.value);
  r.magnitude = m < 0.56   ? EffectMagnitude::negligible
                : m < 0.64 ? EffectMagnitude::small
                : m < 0.71 ? EffectMagnitude::medium
                           : EffectMagnitude::large;
  return r;
}

const PairComparison& ComparisonTable::find(const std::string& a, const std::string& b) const {
  for (const PairComparison& p : pairs) {
    if (p.algo_a == a && p.algo_b == b) return p;
  }
  throw ConfigError("comparison table has no pair (" + a + ", " + b + ")");
}

nlohmann::json ComparisonTable::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const PairComparison& p : pairs) {
    rows.push_back({{"algo_a", p.algo_a},
                    {"algo_b", p.algo_b},
                    {"u", p.u},
                    {"p_value", p.p},
                    {"exact", p.exact},
                    {"p_holm", p.p_holm},
                    {"a12", p.a12},
                    {"magnitude", to_string(p.magnitude)},
                    {"significant", p.significant}});
  }
  return {{"algorithms", algorithms}, {"tasks", tasks}, {"alpha", alpha}, {"pairs", rows}};
}

std::string ComparisonTable::csv() const {
  std::string out =
      csv_row({"algo_a", "algo_b", "u", "p_value", "exact", "p_holm", "a12", "magnitude", "significant"});
  for (const PairComparison& p : pairs) {
    out += csv_row({p.algo_a, p.algo_b, format_double(p.u), format_double(p.p), p.exact ? "true" : "false",
                    format_double(p.p_holm), format_double(p.a12), to_string(p.magnitude),
                    p.significant ? "true" : "false"});
  }
  return out;
}

ComparisonTable compare_algorithms(const AucTable& table, double alpha) {
  std::set<std::string> tasks, algos;
  for (const auto& [key, _] : table) {
    tasks.insert(key.first);
    algos.insert(key.second);
  }
  if (algos.size() < 2) throw ConfigError("compare_algorithms: need at least 2 algorithms");
  if (tasks.size() < 3) throw ConfigError("compare_algorithms: need at least 3 tasks");
  std::string missing;
  for (const auto& t : tasks) {
    for (const auto& a : algos) {
      if (!table.contains({t, a})) missing += (missing.empty() ? "" : ", ") + t + "/" + a;
    }
  }
  if (!missing.empty()) throw ConfigError("compare_algorithms: missing cells: " + missing);
  ComparisonTable c;
  c.alpha = alpha;
  c.algorithms.assign(algos.begin(), algos.end());
  c.tasks.assign(tasks.begin(), tasks.end());
  auto column = [&](const std::string& algo) {
    std::vector<double> v;
    for (const auto& t : c.tasks) v.push_back(table.at({t, algo}));
    return v;
  };
  for (std::size_t i = 0; i < c.algorithms.size(); ++i) {
    for (std::size_t j = i + 1; j < c.algorithms.size(); ++j) {
      const auto a = column(c.algorithms[i]), b = column(c.algorithms[j]);
      const MannWhitneyResult mw = mann_whitney_u(a, b);
      const A12Result e = vargha_delaney_a12(a, b);
      PairComparison p;
      p.algo_a = c.algorithms[i];
      p.algo_b = c.algorithms[j];
      p.u = mw.u;
      p.p = mw.p;
      p.exact = mw.exact;
      p.a12 = e.value;
      p.magnitude = e.magnitude;
      p.significant = mw.p < alpha;
      c.pairs.push_back(p);
    }
  }
  std::vector<std::size_t> order(c.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return c.pairs[x].p < c.pairs[y].p; });
  double running = 0.0;
  const double m = static_cast<double>(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    running = std::max(running, std::min(1.0, (m - static_cast<double>(k)) * c.pairs[order[k]].p));
    c.pairs[order[k]].p_holm = running;
  }
  return c;
}

}  // namespace siit
