// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/tasks.hpp"

#include <algorithm>

#include "siit/error.hpp"

namespace siit {

const char* to_string(NodeRole role) {
  switch (role) {
    case NodeRole::attention: return "attention";
    case NodeRole::mlp: return "mlp";
    case NodeRole::layer: return "layer";
  }
  return "?";
}

HighLevelModel::HighLevelModel(std::vector<HLVariable> variables, std::string output_variable,
                               OutputKind kind)
    : variables_(std::move(variables)), output_(std::move(output_variable)), kind_(kind) {
  std::vector<std::string> seen{kInput};
  for (const HLVariable& v : variables_) {
    if (std::find(seen.begin(), seen.end(), v.name) != seen.end()) {
      throw ConfigError("high-level model: duplicate variable '" + v.name + "'");
    }
    for (const std::string& p : v.parents) {
      if (std::find(seen.begin(), seen.end(), p) == seen.end()) {
        throw ConfigError("high-level model: parent '" + p + "' of '" + v.name +
                          "' is unknown or declared later");
      }
    }
    seen.push_back(v.name);
  }
  if (std::find(seen.begin() + 1, seen.end(), output_) == seen.end()) {
    throw ConfigError("high-level model: output variable '" + output_ + "' is not declared");
  }
}

HLRun HighLevelModel::run(const Sequence& input, const std::map<std::string, Values>& overrides) const {
  for (const auto& [name, _] : overrides) {
    if (std::none_of(variables_.begin(), variables_.end(), [&](const HLVariable& v) { return v.name == name; })) {
      throw NodeError("high-level override of unknown variable '" + name + "'");
    }
  }
  HLRun run;
  run.cache[kInput] = Values(input.begin(), input.end());
  for (const HLVariable& v : variables_) {
    auto ov = overrides.find(v.name);
    if (ov != overrides.end()) {
      run.cache[v.name] = ov->second;
      continue;
    }
    std::vector<const Values*> parents;
    parents.reserve(v.parents.size());
    for (const std::string& p : v.parents) parents.push_back(&run.cache.at(p));
    run.cache[v.name] = v.fn(input, parents);
  }
  run.output = run.cache.at(output_);
  return run;
}

Values HighLevelModel::int_inv(const Sequence& base, const Sequence& source,
                               const std::string& variable) const {
  const HLRun src = run(source);
  return run(base, {{variable, src.cache.at(variable)}}).output;
}

const HLVariable& HighLevelModel::variable(const std::string& name) const {
  for (const HLVariable& v : variables_) {
    if (v.name == name) return v;
  }
  throw NodeError("high-level model has no variable '" + name + "'");
}

std::vector<std::string> HighLevelModel::variable_names() const {
  std::vector<std::string> out;
  for (const HLVariable& v : variables_) out.push_back(v.name);
  return out;
}

std::map<std::string, int> HighLevelModel::layer_of() const {
  std::map<std::string, int> out;
  for (const HLVariable& v : variables_) out[v.name] = v.layer;
  return out;
}

std::vector<std::pair<std::string, std::string>> HighLevelModel::edges() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const HLVariable& v : variables_) {
    for (const std::string& p : v.parents) {
      if (p != kInput) out.emplace_back(p, v.name);
    }
  }
  return out;
}

std::vector<std::string> HighLevelModel::input_adjacent() const {
  std::vector<std::string> out;
  for (const HLVariable& v : variables_) {
    if (std::find(v.parents.begin(), v.parents.end(), kInput) != v.parents.end()) out.push_back(v.name);
  }
  return out;
}

ModelConfig TaskSpec::model_config(std::uint64_t seed) const {
  return ModelConfig::derived(n_layers, n_heads, d_head, vocab_size(), static_cast<int>(seq_len),
                              output_kind(), seed);
}

std::string TaskSpec::task_type() const {
  return output_kind() == OutputKind::regression ? "Regression" : "Classification";
}

int TaskSpec::token_id(const std::string& token) const {
  auto it = std::find(vocab.begin(), vocab.end(), token);
  if (it == vocab.end()) throw ConfigError("task " + name + ": unknown token '" + token + "'");
  return static_cast<int>(it - vocab.begin());
}

Sequence TaskSpec::encode(const std::vector<std::string>& tokens) const {
  Sequence out;
  for (const auto& t : tokens) out.push_back(token_id(t));
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset d;
  for (std::size_t r : rows) {
    d.inputs.push_back(inputs[r]);
    d.labels.push_back(labels[r]);
  }
  return d;
}

Dataset label_inputs(const TaskSpec& task, std::vector<Sequence> inputs) {
  Dataset d;
  d.inputs = std::move(inputs);
  for (const Sequence& s : d.inputs) d.labels.push_back(task.high_level->run(s).output);
  return d;
}

DatasetSplit sample_dataset(const TaskSpec& task, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("sample_dataset: n must be at least 1");
  Rng train_rng(seed, "dataset-train:" + task.name);
  Rng val_rng(seed, "dataset-validation:" + task.name);
  std::vector<Sequence> train, val;
  for (std::size_t i = 0; i < n; ++i) train.push_back(task.sampler(train_rng));
  for (std::size_t i = 0; i < n / 5; ++i) val.push_back(task.sampler(val_rng));
  return {label_inputs(task, std::move(train)), label_inputs(task, std::move(val))};
}

namespace {

std::vector<bool> all_but_first(std::size_t n) {
  std::vector<bool> m(n, true);
  m[0] = false;
  return m;
}

Sequence sample_uniform(Rng& rng, int bos, std::span<const int> alphabet, std::size_t len) {
  Sequence s{bos};
  for (std::size_t i = 1; i < len; ++i) s.push_back(alphabet[rng.uniform_index(alphabet.size())]);
  return s;
}

// Mean of `flag` over positions 1..i (position 0 holds BOS and scores 0).
Values prefix_fraction(const Values& flag) {
  Values out(flag.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 1; i < flag.size(); ++i) {
    total += flag[i];
    out[i] = total / static_cast<double>(i);
  }
  return out;
}

TaskSpec make_frac_x() {
  TaskSpec t;
  t.name = "frac_x";
  t.description = "Returns the fraction of 'x' in the input up to the i-th position for all i.";
  t.vocab = {"BOS", "PAD", "x", "y", "z", "w"};
  t.seq_len = 6;
  const int x = 2;
  const std::vector<int> alphabet{2, 3, 4, 5};
  t.sampler = [alphabet, len = t.seq_len](Rng& rng) { return sample_uniform(rng, 0, alphabet, len); };
  t.corrupt = [sampler = t.sampler](const Sequence&, Rng& rng) { return sampler(rng); };
  std::vector<HLVariable> vars;
  vars.push_back({"is_x", {HighLevelModel::kInput}, NodeRole::mlp, 0,
                  [x](const Sequence& tok, const std::vector<const Values*>&) {
                    Values v(tok.size(), 0.0);
                    for (std::size_t i = 0; i < tok.size(); ++i) v[i] = tok[i] == x ? 1.0 : 0.0;
                    return v;
                  }});
  vars.push_back({"frac_x", {"is_x"}, NodeRole::attention, 1,
                  [](const Sequence&, const std::vector<const Values*>& p) { return prefix_fraction(*p[0]); }});
  t.high_level = std::make_shared<HighLevelModel>(std::move(vars), "frac_x", OutputKind::regression);
  t.loss_kind = LossKind::mse;
  t.eval_positions = all_but_first(t.seq_len);
  t.behavior_positions = t.eval_positions;
  return t;
}

TaskSpec make_open_close() {
  TaskSpec t;
  t.name = "open_close";
  t.description = "Return fraction of previous open tokens minus the fraction of close tokens.";
  t.vocab = {"BOS", "PAD", "(", ")", "a"};
  t.seq_len = 6;
  const int open = 2, close = 3;
  const std::vector<int> alphabet{2, 3, 4};
  t.sampler = [alphabet, len = t.seq_len](Rng& rng) { return sample_uniform(rng, 0, alphabet, len); };
  t.corrupt = [sampler = t.sampler](const Sequence&, Rng& rng) { return sampler(rng); };
  auto fraction_of = [](int token) {
    return [token](const Sequence& tok, const std::vector<const Values*>&) {
      Values flag(tok.size(), 0.0);
      for (std::size_t i = 1; i < tok.size(); ++i) flag[i] = tok[i] == token ? 1.0 : 0.0;
      return prefix_fraction(flag);
    };
  };
  std::vector<HLVariable> vars;
  vars.push_back({"frac_open", {HighLevelModel::kInput}, NodeRole::attention, 0, fraction_of(open)});
  vars.push_back({"frac_close", {HighLevelModel::kInput}, NodeRole::attention, 0, fraction_of(close)});
  vars.push_back({"difference", {"frac_open", "frac_close"}, NodeRole::mlp, 0,
                  [](const Sequence&, const std::vector<const Values*>& p) {
                    Values v(p[0]->size());
                    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (*p[0])[i] - (*p[1])[i];
                    return v;
                  }});
  t.high_level = std::make_shared<HighLevelModel>(std::move(vars), "difference", OutputKind::regression);
  t.loss_kind = LossKind::mse;
  t.eval_positions = all_but_first(t.seq_len);
  t.behavior_positions = t.eval_positions;
  return t;
}

TaskSpec make_dedup() {
  TaskSpec t;
  t.name = "dedup";
  t.description = "Removes consecutive duplicate tokens from a sequence.";
  t.vocab = {"BOS", "PAD", "a", "b", "c"};
  t.seq_len = 7;
  const std::vector<int> alphabet{2, 3, 4};
  t.sampler = [alphabet, len = t.seq_len](Rng& rng) { return sample_uniform(rng, 0, alphabet, len); };
  t.corrupt = [sampler = t.sampler](const Sequence&, Rng& rng) { return sampler(rng); };
  const int pad = t.pad;
  std::vector<HLVariable> vars;
  vars.push_back({"prev_token", {HighLevelModel::kInput}, NodeRole::attention, 0,
                  [](const Sequence& tok, const std::vector<const Values*>&) {
                    Values v(tok.size(), -1.0);
                    for (std::size_t i = 1; i < tok.size(); ++i) v[i] = tok[i - 1];
                    return v;
                  }});
  // Tokens that repeat their predecessor are replaced by PAD in place, so the
  // non-PAD subsequence is the deduplicated input.
  vars.push_back({"dedup", {HighLevelModel::kInput, "prev_token"}, NodeRole::mlp, 0,
                  [pad](const Sequence& tok, const std::vector<const Values*>& p) {
                    Values v(tok.size(), pad);
                    for (std::size_t i = 1; i < tok.size(); ++i) {
                      v[i] = static_cast<double>(tok[i]) == (*p[1])[i] ? pad : tok[i];
                    }
                    return v;
                  }});
  t.high_level = std::make_shared<HighLevelModel>(std::move(vars), "dedup", OutputKind::categorical);
  t.loss_kind = LossKind::cross_entropy;
  t.eval_positions = all_but_first(t.seq_len);
  t.behavior_positions = t.eval_positions;
  return t;
}

constexpr int kIoiNames = 8;
constexpr int kIoiFirstName = 2;

bool is_ioi_name(double token) { return token >= kIoiFirstName && token < kIoiFirstName + kIoiNames; }

// [BOS, N1, and, N2, went, to, the, store, S, gave, a, drink, to]
Sequence ioi_sequence(const TaskSpec& t, int first, int second, int subject) {
  return {t.bos,
          first,
          t.token_id("and"),
          second,
          t.token_id("went"),
          t.token_id("to"),
          t.token_id("the"),
          t.token_id("store"),
          subject,
          t.token_id("gave"),
          t.token_id("a"),
          t.token_id("drink"),
          t.token_id("to")};
}

TaskSpec make_ioi() {
  TaskSpec t;
  t.name = "ioi";
  t.description = "Indirect Object Identification.";
  t.vocab = {"BOS", "PAD", "Mary", "John", "Alice", "Bob", "Tom", "Anna", "Paul", "Kate",
             "and", "went", "to", "the", "store", "gave", "a", "drink"};
  t.seq_len = 13;
  t.n_layers = 6;
  t.n_heads = 4;
  t.d_head = 16;
  t.interchange_upweight = 10.0;
  auto draw = [t](Rng& rng) {
    const int io = kIoiFirstName + static_cast<int>(rng.uniform_index(kIoiNames));
    int s = kIoiFirstName + static_cast<int>(rng.uniform_index(kIoiNames - 1));
    if (s >= io) ++s;
    const bool abba = rng.uniform_index(2) == 0;
    return abba ? ioi_sequence(t, io, s, s) : ioi_sequence(t, s, io, s);
  };
  t.sampler = draw;
  // Same template with fresh names for both roles.
  t.corrupt = [t](const Sequence& base, Rng& rng) {
    const bool abba = base[3] == base[8];
    const int io = kIoiFirstName + static_cast<int>(rng.uniform_index(kIoiNames));
    int s = kIoiFirstName + static_cast<int>(rng.uniform_index(kIoiNames - 1));
    if (s >= io) ++s;
    return abba ? ioi_sequence(t, io, s, s) : ioi_sequence(t, s, io, s);
  };
  const int pad = t.pad;
  std::vector<HLVariable> vars;
  // First earlier position holding the same name, or -1.
  vars.push_back({"duplicate", {HighLevelModel::kInput}, NodeRole::layer, 0,
                  [](const Sequence& tok, const std::vector<const Values*>&) {
                    Values v(tok.size(), -1.0);
                    for (std::size_t i = 0; i < tok.size(); ++i) {
                      if (!is_ioi_name(tok[i])) continue;
                      for (std::size_t j = 0; j < i; ++j) {
                        if (tok[j] == tok[i]) {
                          v[i] = static_cast<double>(j);
                          break;
                        }
                      }
                    }
                    return v;
                  }});
  // Name found at the most recent duplicate position, carried forward.
  vars.push_back({"s_inhibition", {HighLevelModel::kInput, "duplicate"}, NodeRole::layer, 2,
                  [](const Sequence& tok, const std::vector<const Values*>& p) {
                    Values v(tok.size(), -1.0);
                    double current = -1.0;
                    for (std::size_t i = 0; i < tok.size(); ++i) {
                      const double d = (*p[1])[i];
                      if (d >= 0 && d < static_cast<double>(tok.size())) current = tok[static_cast<std::size_t>(d)];
                      v[i] = current;
                    }
                    return v;
                  }});
  // First name so far that is not inhibited; PAD when there is none.
  vars.push_back({"name_mover", {HighLevelModel::kInput, "s_inhibition"}, NodeRole::layer, 4,
                  [pad](const Sequence& tok, const std::vector<const Values*>& p) {
                    Values v(tok.size(), pad);
                    for (std::size_t i = 0; i < tok.size(); ++i) {
                      for (std::size_t j = 0; j <= i; ++j) {
                        if (is_ioi_name(tok[j]) && static_cast<double>(tok[j]) != (*p[1])[i]) {
                          v[i] = tok[j];
                          break;
                        }
                      }
                    }
                    return v;
                  }});
  t.high_level = std::make_shared<HighLevelModel>(std::move(vars), "name_mover", OutputKind::categorical);
  t.loss_kind = LossKind::cross_entropy;
  t.eval_positions.assign(t.seq_len, false);
  t.eval_positions.back() = true;
  t.behavior_positions.assign(t.seq_len, true);
  return t;
}

}  // namespace

std::vector<Sequence> ioi_template_grid() {
  const TaskSpec& t = task_by_name("ioi");
  std::vector<Sequence> out;
  for (int io = kIoiFirstName; io < kIoiFirstName + kIoiNames; ++io) {
    for (int s = kIoiFirstName; s < kIoiFirstName + kIoiNames; ++s) {
      if (s == io) continue;
      out.push_back(ioi_sequence(t, io, s, s));
      out.push_back(ioi_sequence(t, s, io, s));
    }
  }
  return out;
}

const std::vector<TaskSpec>& builtin_tasks() {
  static const std::vector<TaskSpec> tasks{make_frac_x(), make_open_close(), make_dedup(), make_ioi()};
  return tasks;
}

const TaskSpec& task_by_name(const std::string& name) {
  for (const TaskSpec& t : builtin_tasks()) {
    if (t.name == name) return t;
  }
  throw ConfigError("unknown task '" + name + "' (expected frac_x|open_close|dedup|ioi)");
}

}  // namespace siit
