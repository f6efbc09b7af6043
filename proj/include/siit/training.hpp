// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "siit/intervention.hpp"
#include "siit/optim.hpp"
#include "siit/tasks.hpp"

namespace siit {

enum class UpdateMode { sequential, fused };

const char* to_string(UpdateMode mode);
UpdateMode update_mode_from_string(std::string_view text);

struct TrainConfig {
  double weight_iit = 1.0;
  double weight_siit = 1.0;
  double weight_behavior = 1.0;
  std::size_t batch_size = 512;
  double lr = 0.001;
  int max_epochs = 200;
  double iia_target = 1.0;
  double siia_target = 1.0;
  UpdateMode update_mode = UpdateMode::sequential;
  double atol = 0.05;
  std::uint64_t seed = 0;
  // Validation pairs per variable (IIA) and per node (SIIA); 0 means all.
  std::size_t n_interventions = 0;

  // Throws ConfigError on negative weights, non-positive atol, lr or batch.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct StepLosses {
  double iit = 0.0;
  double siit = 0.0;
  double behavior = 0.0;
  std::string variable;
  std::string strict_node;
};

struct EpochRecord {
  int epoch = 0;
  double iia = 0.0;
  double siia = 0.0;
  double behavior_accuracy = 0.0;
  double loss_iit = 0.0;
  double loss_siit = 0.0;
  double loss_behavior = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::string stop_reason;  // "targets_reached" or "max_epochs"
  std::optional<double> wall_clock_s;
  std::size_t strictness_skipped = 0;

  const EpochRecord& final() const { return epochs.back(); }
  nlohmann::json to_json() const;
  std::string loss_csv() const;
};

// (base, source) row indices into one dataset.
struct PairSet {
  const Dataset* data = nullptr;
  std::vector<std::size_t> base;
  std::vector<std::size_t> source;

  std::size_t size() const { return base.size(); }
};

// Every row paired with a seeded random partner.
PairSet make_pairs(const Dataset& data, std::uint64_t seed, std::string_view tag);

// Masked training loss of `logits` against per-position targets.
Tensor task_loss(const TaskSpec& task, const Tensor& logits, const std::vector<Values>& targets,
                 const std::vector<bool>& positions);

// One update of the three-term objective on `pairs`.
class SiitTrainer {
 public:
  SiitTrainer(Transformer& model, const TaskSpec& task, const Alignment& alignment, const TrainConfig& cfg);

  StepLosses step(const PairSet& pairs, Rng& rng);
  Adam& optimizer() { return adam_; }
  std::size_t strictness_skipped() const { return strict_skipped_; }
  // Variable sampled by the most recent step.
  const std::string& last_variable() const { return last_variable_; }

 private:
  Tensor iit_term(const PairSet& pairs, const std::string& var, const TokenBatch& base,
                  const ActivationCache& source) const;
  Tensor siit_term(const PairSet& pairs, const NodeId& node, const TokenBatch& base,
                   const ActivationCache& source) const;
  Tensor behavior_term(const PairSet& pairs, const TokenBatch& base) const;
  void apply(const Tensor& loss);

  Transformer& model_;
  const TaskSpec& task_;
  const Alignment& alignment_;
  TrainConfig cfg_;
  Adam adam_;
  std::vector<NodeId> non_aligned_;
  std::size_t strict_skipped_ = 0;
  std::string last_variable_;
};

// Agreement of one position. Categorical: argmax equality; regression: |a-b| <= atol.
double agreement_rate(const TaskSpec& task, const Tensor& logits, const std::vector<Values>& targets,
                      double atol);
// Rate at which two low-level outputs agree (argmax or |a-b| <= atol).
double output_agreement(const TaskSpec& task, const Tensor& a, const Tensor& b, double atol);

double compute_iia(const Transformer& model, const TaskSpec& task, const Alignment& alignment,
                   const PairSet& pairs, std::size_t n_interventions, double atol, int threads = 1);
// Throws ConfigError when the alignment leaves no internal node out.
double compute_siia(const Transformer& model, const TaskSpec& task, const Alignment& alignment,
                    const PairSet& pairs, std::size_t n_interventions, double atol, int threads = 1);
double behavior_accuracy(const Transformer& model, const TaskSpec& task, const Dataset& data, double atol);

struct TrainOptions {
  int threads = 1;
  bool timing = false;
  // Called after each epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

TrainReport train(Transformer& model, const TaskSpec& task, const Alignment& alignment,
                  const DatasetSplit& data, const TrainConfig& cfg, const TrainOptions& options = {});

}  // namespace siit
