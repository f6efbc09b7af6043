// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/training.hpp"

#include <chrono>
#include <cmath>
#include <iostream>

#include "siit/error.hpp"
#include "siit/io.hpp"
#include "siit/ops.hpp"
#include "siit/parallel.hpp"

namespace siit {

const char* to_string(UpdateMode mode) { return mode == UpdateMode::fused ? "fused" : "sequential"; }

UpdateMode update_mode_from_string(std::string_view text) {
  if (text == "sequential") return UpdateMode::sequential;
  if (text == "fused") return UpdateMode::fused;
  throw ConfigError("unknown update mode '" + std::string(text) + "' (expected sequential|fused)");
}

void TrainConfig::validate() const {
  if (weight_iit < 0 || weight_siit < 0 || weight_behavior < 0) {
    throw ConfigError("train config: loss weights must be non-negative");
  }
  if (!(atol > 0)) throw ConfigError("train config: atol must be positive");
  if (!(lr > 0)) throw ConfigError("train config: lr must be positive");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("train config: max_epochs must be at least 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"weight_iit", weight_iit},
          {"weight_siit", weight_siit},
          {"weight_behavior", weight_behavior},
          {"batch_size", batch_size},
          {"lr", lr},
          {"max_epochs", max_epochs},
          {"iia_target", iia_target},
          {"siia_target", siia_target},
          {"update_mode", to_string(update_mode)},
          {"atol", atol},
          {"seed", seed},
          {"n_interventions", n_interventions}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.weight_iit = j.value("weight_iit", c.weight_iit);
    c.weight_siit = j.value("weight_siit", c.weight_siit);
    c.weight_behavior = j.value("weight_behavior", c.weight_behavior);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.iia_target = j.value("iia_target", c.iia_target);
    c.siia_target = j.value("siia_target", c.siia_target);
    c.update_mode = update_mode_from_string(j.value("update_mode", std::string("sequential")));
    c.atol = j.value("atol", c.atol);
    c.seed = j.value("seed", c.seed);
    c.n_interventions = j.value("n_interventions", c.n_interventions);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config json: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json ep = nlohmann::json::array();
  for (const EpochRecord& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"iia", e.iia},
                  {"siia", e.siia},
                  {"behavior_accuracy", e.behavior_accuracy},
                  {"loss_iit", e.loss_iit},
                  {"loss_siit", e.loss_siit},
                  {"loss_behavior", e.loss_behavior}});
  }
  nlohmann::json j{{"epochs", ep},
                   {"stop_reason", stop_reason},
                   {"strictness_skipped", strictness_skipped},
                   {"wall_clock_s", nullptr}};
  if (wall_clock_s) j["wall_clock_s"] = *wall_clock_s;
  return j;
}

std::string TrainReport::loss_csv() const {
  std::string out = csv_row({"epoch", "iia", "siia", "behavior_accuracy", "loss_iit", "loss_siit", "loss_behavior"});
  for (const EpochRecord& e : epochs) {
    out += csv_row({std::to_string(e.epoch), format_double(e.iia), format_double(e.siia),
                    format_double(e.behavior_accuracy), format_double(e.loss_iit), format_double(e.loss_siit),
                    format_double(e.loss_behavior)});
  }
  return out;
}

PairSet make_pairs(const Dataset& data, std::uint64_t seed, std::string_view tag) {
  PairSet p;
  p.data = &data;
  Rng rng(seed, tag);
  const std::vector<std::size_t> perm = rng.permutation(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    p.base.push_back(i);
    p.source.push_back(perm[i]);
  }
  return p;
}

namespace {

TokenBatch rows_of(const Dataset& data, const std::vector<std::size_t>& rows, std::size_t limit) {
  std::vector<Sequence> seqs;
  for (std::size_t i = 0; i < std::min(limit, rows.size()); ++i) seqs.push_back(data.inputs[rows[i]]);
  return TokenBatch::from_rows(seqs);
}

std::size_t cap(std::size_t n, std::size_t limit) { return limit == 0 ? n : std::min(n, limit); }

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

std::vector<Values> hl_interchange_targets(const TaskSpec& task, const PairSet& pairs, const std::string& var,
                                           std::size_t n) {
  std::vector<Values> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(task.high_level->int_inv(pairs.data->inputs[pairs.base[i]],
                                           pairs.data->inputs[pairs.source[i]], var));
  }
  return out;
}

std::vector<Values> base_labels(const PairSet& pairs, std::size_t n) {
  std::vector<Values> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(pairs.data->labels[pairs.base[i]]);
  return out;
}

}  // namespace

Tensor task_loss(const TaskSpec& task, const Tensor& logits, const std::vector<Values>& targets,
                 const std::vector<bool>& positions) {
  const std::size_t B = logits.dim(0), S = logits.dim(1);
  if (targets.size() != B) {
    throw ShapeError("task_loss: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  std::vector<double> mask(B * S, 0.0);
  std::size_t count = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < S; ++s) {
      if (positions[s]) {
        mask[b * S + s] = 1.0;
        ++count;
      }
    }
  }
  if (count == 0) throw ConfigError("task_loss: no scored positions");
  const double inv = 1.0 / static_cast<double>(count);
  if (task.loss_kind == LossKind::mse) {
    std::vector<double> y(B * S, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t s = 0; s < S; ++s) {
        if (positions[s]) y[b * S + s] = targets[b][s];
      }
    }
    Tensor diff = ops::sub(logits, Tensor::from({B, S, 1}, std::move(y)));
    Tensor sq = ops::mul(ops::mul(diff, diff), Tensor::from({B, S, 1}, std::move(mask)));
    return ops::mul_scalar(ops::sum(sq), inv);
  }
  std::vector<int> idx(B * S, 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < S; ++s) idx[b * S + s] = static_cast<int>(targets[b][s]);
  }
  Tensor picked = ops::gather_last(ops::log_softmax(logits), idx);
  return ops::mul_scalar(ops::sum(ops::mul(picked, Tensor::from({B, S}, std::move(mask)))), -inv);
}

double agreement_rate(const TaskSpec& task, const Tensor& logits, const std::vector<Values>& targets,
                      double atol) {
  const std::size_t B = logits.dim(0), S = logits.dim(1), W = logits.dim(2);
  std::size_t hits = 0, total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < S; ++s) {
      if (!task.eval_positions[s]) continue;
      std::span<const double> row = logits.data().subspan((b * S + s) * W, W);
      bool ok;
      if (task.output_kind() == OutputKind::regression) {
        ok = std::abs(row[0] - targets[b][s]) <= atol;
      } else {
        ok = static_cast<double>(argmax_row(row)) == targets[b][s];
      }
      hits += ok ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

double output_agreement(const TaskSpec& task, const Tensor& a, const Tensor& b, double atol) {
  const std::size_t B = a.dim(0), S = a.dim(1), W = a.dim(2);
  std::size_t hits = 0, total = 0;
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t s = 0; s < S; ++s) {
      if (!task.eval_positions[s]) continue;
      std::span<const double> x = a.data().subspan((r * S + s) * W, W);
      std::span<const double> y = b.data().subspan((r * S + s) * W, W);
      bool ok;
      if (task.output_kind() == OutputKind::regression) {
        ok = std::abs(x[0] - y[0]) <= atol;
      } else {
        ok = argmax_row(x) == argmax_row(y);
      }
      hits += ok ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

double compute_iia(const Transformer& model, const TaskSpec& task, const Alignment& alignment,
                   const PairSet& pairs, std::size_t n_interventions, double atol, int threads) {
  if (pairs.size() == 0) throw ConfigError("compute_iia: no pairs");
  const std::size_t n = cap(pairs.size(), n_interventions);
  const TokenBatch base = rows_of(*pairs.data, pairs.base, n);
  const TokenBatch source = rows_of(*pairs.data, pairs.source, n);
  const auto [_, cache] = model.forward_with_cache(source);
  const std::vector<std::string> vars = task.high_level->variable_names();
  std::vector<double> rate(vars.size());
  parallel_for(vars.size(), threads, [&](std::size_t k) {
    const Tensor out = int_inv(model, base, cache, alignment.pi.at(vars[k]));
    rate[k] = agreement_rate(task, out, hl_interchange_targets(task, pairs, vars[k], n), atol);
  });
  double total = 0.0;
  for (double r : rate) total += r;
  return total / static_cast<double>(vars.size());
}

double compute_siia(const Transformer& model, const TaskSpec& task, const Alignment& alignment,
                    const PairSet& pairs, std::size_t n_interventions, double atol, int threads) {
  if (pairs.size() == 0) throw ConfigError("compute_siia: no pairs");
  const std::vector<NodeId> nodes = alignment.non_circuit_nodes();
  if (nodes.empty()) throw ConfigError("compute_siia: every internal node is aligned");
  const std::size_t n = cap(pairs.size(), n_interventions);
  const TokenBatch base = rows_of(*pairs.data, pairs.base, n);
  const TokenBatch source = rows_of(*pairs.data, pairs.source, n);
  const auto [_, cache] = model.forward_with_cache(source);
  const Tensor clean = model.forward(base);
  std::vector<double> rate(nodes.size());
  parallel_for(nodes.size(), threads, [&](std::size_t k) {
    rate[k] = output_agreement(task, int_inv(model, base, cache, {nodes[k]}), clean, atol);
  });
  double total = 0.0;
  for (double r : rate) total += r;
  return total / static_cast<double>(nodes.size());
}

double behavior_accuracy(const Transformer& model, const TaskSpec& task, const Dataset& data, double atol) {
  return agreement_rate(task, model.forward(data.batch()), data.labels, atol);
}

SiitTrainer::SiitTrainer(Transformer& model, const TaskSpec& task, const Alignment& alignment,
                         const TrainConfig& cfg)
    : model_(model),
      task_(task),
      alignment_(alignment),
      cfg_(cfg),
      adam_(model.parameters(), AdamOptions{cfg.lr, 0.9, 0.999, 1e-8}),
      non_aligned_(alignment.non_circuit_nodes()) {
  cfg_.validate();
}

Tensor SiitTrainer::iit_term(const PairSet& pairs, const std::string& var, const TokenBatch& base,
                             const ActivationCache& source) const {
  const Tensor out = int_inv(model_, base, source, alignment_.pi.at(var));
  const auto targets = hl_interchange_targets(task_, pairs, var, pairs.size());
  return ops::mul_scalar(task_loss(task_, out, targets, task_.eval_positions),
                         cfg_.weight_iit * task_.interchange_upweight);
}

Tensor SiitTrainer::siit_term(const PairSet& pairs, const NodeId& node, const TokenBatch& base,
                              const ActivationCache& source) const {
  const Tensor out = int_inv(model_, base, source, {node});
  return ops::mul_scalar(task_loss(task_, out, base_labels(pairs, pairs.size()), task_.eval_positions),
                         cfg_.weight_siit * task_.interchange_upweight);
}

Tensor SiitTrainer::behavior_term(const PairSet& pairs, const TokenBatch& base) const {
  return ops::mul_scalar(
      task_loss(task_, model_.forward(base), base_labels(pairs, pairs.size()), task_.behavior_positions),
      cfg_.weight_behavior);
}

void SiitTrainer::apply(const Tensor& loss) {
  Tape* tape = Tape::current();
  tape->backward(loss);
  adam_.step();
}

StepLosses SiitTrainer::step(const PairSet& pairs, Rng& rng) {
  StepLosses out;
  const TokenBatch base = rows_of(*pairs.data, pairs.base, pairs.size());
  const TokenBatch source = rows_of(*pairs.data, pairs.source, pairs.size());
  const std::vector<std::string> vars = task_.high_level->variable_names();
  // Both samples are drawn every step so the random stream does not depend on
  // the loss weights.
  out.variable = vars[rng.uniform_index(vars.size())];
  last_variable_ = out.variable;
  std::optional<NodeId> strict;
  if (non_aligned_.empty()) {
    if (cfg_.weight_siit > 0) {
      if (strict_skipped_ == 0) std::cerr << "warning: no non-aligned nodes; strictness term skipped\n";
      ++strict_skipped_;
    }
  } else {
    strict = non_aligned_[rng.uniform_index(non_aligned_.size())];
    out.strict_node = strict->str();
  }
  const bool do_iit = cfg_.weight_iit > 0;
  const bool do_siit = cfg_.weight_siit > 0 && strict.has_value();
  const bool do_behavior = cfg_.weight_behavior > 0;

  auto source_cache = [&] { return model_.forward_with_cache(source).second; };

  if (cfg_.update_mode == UpdateMode::fused) {
    ActivationCache cache;
    if (do_iit || do_siit) cache = source_cache();
    Tape tape;
    Tape::Scope scope(tape);
    std::vector<Tensor> terms;
    if (do_iit) {
      terms.push_back(iit_term(pairs, out.variable, base, cache));
      out.iit = terms.back().item();
    }
    if (do_siit) {
      terms.push_back(siit_term(pairs, *strict, base, cache));
      out.siit = terms.back().item();
    }
    if (do_behavior) {
      terms.push_back(behavior_term(pairs, base));
      out.behavior = terms.back().item();
    }
    if (terms.empty()) return out;
    Tensor total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
    apply(total);
    return out;
  }

  // Sequential: each term sees the parameters left by the previous update, and
  // source activations are recomputed accordingly.
  if (do_iit) {
    const ActivationCache cache = source_cache();
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor loss = iit_term(pairs, out.variable, base, cache);
    out.iit = loss.item();
    apply(loss);
  }
  if (do_siit) {
    const ActivationCache cache = source_cache();
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor loss = siit_term(pairs, *strict, base, cache);
    out.siit = loss.item();
    apply(loss);
  }
  if (do_behavior) {
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor loss = behavior_term(pairs, base);
    out.behavior = loss.item();
    apply(loss);
  }
  return out;
}

TrainReport train(Transformer& model, const TaskSpec& task, const Alignment& alignment,
                  const DatasetSplit& data, const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (data.train.size() == 0 || data.validation.size() == 0) {
    throw ConfigError("train: empty training or validation split");
  }
  const auto start = std::chrono::steady_clock::now();
  SiitTrainer trainer(model, task, alignment, cfg);
  Rng rng(cfg.seed, "train:" + task.name);
  const PairSet val_pairs = make_pairs(data.validation, cfg.seed, "validation-pairs:" + task.name);
  const bool has_free = !alignment.non_circuit_nodes().empty();
  TrainReport report;
  report.stop_reason = "max_epochs";
  const std::size_t n = data.train.size();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const std::vector<std::size_t> base = rng.permutation(n);
    const std::vector<std::size_t> source = rng.permutation(n);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      PairSet pairs;
      pairs.data = &data.train;
      pairs.base.assign(base.begin() + static_cast<std::ptrdiff_t>(lo), base.begin() + static_cast<std::ptrdiff_t>(hi));
      pairs.source.assign(source.begin() + static_cast<std::ptrdiff_t>(lo),
                          source.begin() + static_cast<std::ptrdiff_t>(hi));
      StepLosses losses;
      try {
        losses = trainer.step(pairs, rng);
      } catch (const Error& e) {
        // Once parameters blow up, forward ops fail their finiteness checks too.
        if (e.code() != "divergence" && e.code() != "domain") throw;
        throw DivergenceError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches) +
                              " (variable " + trainer.last_variable() + "): " + e.what());
      }
      rec.loss_iit += losses.iit;
      rec.loss_siit += losses.siit;
      rec.loss_behavior += losses.behavior;
      ++batches;
    }
    rec.loss_iit /= static_cast<double>(batches);
    rec.loss_siit /= static_cast<double>(batches);
    rec.loss_behavior /= static_cast<double>(batches);
    rec.iia = compute_iia(model, task, alignment, val_pairs, cfg.n_interventions, cfg.atol, options.threads);
    rec.siia = has_free ? compute_siia(model, task, alignment, val_pairs, cfg.n_interventions, cfg.atol,
                                       options.threads)
                        : 1.0;
    rec.behavior_accuracy = behavior_accuracy(model, task, data.validation, cfg.atol);
    report.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    if (rec.iia >= cfg.iia_target && rec.siia >= cfg.siia_target) {
      report.stop_reason = "targets_reached";
      break;
    }
  }
  report.strictness_skipped = trainer.strictness_skipped();
  if (options.timing) {
    report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return report;
}

}  // namespace siit
