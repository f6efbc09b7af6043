// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "siit/rng.hpp"
#include "siit/transformer.hpp"

namespace siit {

using Sequence = std::vector<int>;
// One value per sequence position. Categorical variables hold token ids.
using Values = std::vector<double>;

// Low-level component a high-level variable is aligned with.
enum class NodeRole { attention, mlp, layer };

const char* to_string(NodeRole role);

struct HLVariable {
  std::string name;
  // Earlier variables, or HighLevelModel::kInput for the raw tokens.
  std::vector<std::string> parents;
  NodeRole role = NodeRole::attention;
  int layer = 0;
  std::function<Values(const Sequence& tokens, const std::vector<const Values*>& parents)> fn;
};

struct HLRun {
  Values output;
  std::map<std::string, Values> cache;
};

// Hand-coded causal model: a DAG of named deterministic variables evaluated in
// declaration order.
class HighLevelModel {
 public:
  static constexpr const char* kInput = "tokens";

  // Throws ConfigError when a parent is unknown or declared after its child,
  // or the output variable does not exist.
  HighLevelModel(std::vector<HLVariable> variables, std::string output_variable, OutputKind kind);

  // Overridden variables take the given values; downstream variables see them.
  // Throws NodeError for unknown override names.
  HLRun run(const Sequence& input, const std::map<std::string, Values>& overrides = {}) const;
  // Output on `base` with `variable` set to its value on `source`.
  Values int_inv(const Sequence& base, const Sequence& source, const std::string& variable) const;

  const std::vector<HLVariable>& variables() const { return variables_; }
  const HLVariable& variable(const std::string& name) const;
  std::vector<std::string> variable_names() const;
  const std::string& output_variable() const { return output_; }
  OutputKind output_kind() const { return kind_; }
  std::map<std::string, int> layer_of() const;
  // Pairs (parent, child) between variables, excluding the raw input.
  std::vector<std::pair<std::string, std::string>> edges() const;
  // Variables reading the raw tokens directly.
  std::vector<std::string> input_adjacent() const;

 private:
  std::vector<HLVariable> variables_;
  std::string output_;
  OutputKind kind_;
};

enum class LossKind { cross_entropy, mse };

struct TaskSpec {
  std::string name;
  std::string description;
  std::vector<std::string> vocab;
  int bos = 0;
  int pad = 1;
  std::size_t seq_len = 0;
  std::function<Sequence(Rng&)> sampler;
  // Counterfactual partner used by discovery algorithms.
  std::function<Sequence(const Sequence&, Rng&)> corrupt;
  std::shared_ptr<const HighLevelModel> high_level;
  LossKind loss_kind = LossKind::cross_entropy;
  // Positions scored by accuracy metrics and interchange losses.
  std::vector<bool> eval_positions;
  // Positions covered by the behavior loss.
  std::vector<bool> behavior_positions;
  // Multiplier applied to the interchange and strictness terms.
  double interchange_upweight = 1.0;
  int n_layers = 2;
  int n_heads = 4;
  int d_head = 8;

  OutputKind output_kind() const { return high_level->output_kind(); }
  int vocab_size() const { return static_cast<int>(vocab.size()); }
  ModelConfig model_config(std::uint64_t seed) const;
  // "Classification" or "Regression".
  std::string task_type() const;
  int token_id(const std::string& token) const;
  Sequence encode(const std::vector<std::string>& tokens) const;
};

struct Dataset {
  std::vector<Sequence> inputs;
  std::vector<Values> labels;

  std::size_t size() const { return inputs.size(); }
  TokenBatch batch() const { return TokenBatch::from_rows(inputs); }
  Dataset subset(std::span<const std::size_t> rows) const;
};

struct DatasetSplit {
  Dataset train;
  Dataset validation;
};

// Draws n training inputs plus a validation split of n / 5, labelled by the
// task's high-level model. Deterministic in (task, n, seed).
DatasetSplit sample_dataset(const TaskSpec& task, std::size_t n, std::uint64_t seed);
Dataset label_inputs(const TaskSpec& task, std::vector<Sequence> inputs);

// frac_x, open_close, dedup, ioi.
const std::vector<TaskSpec>& builtin_tasks();
// Throws ConfigError for unknown names.
const TaskSpec& task_by_name(const std::string& name);

// Every (template, subject, indirect object) combination of the ioi task.
std::vector<Sequence> ioi_template_grid();

}  // namespace siit
