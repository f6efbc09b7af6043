// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "siit/discovery.hpp"
#include "siit/intervention.hpp"
#include "siit/training.hpp"
#include "siit/transformer.hpp"

namespace siit {

// Written into every persisted JSON document; readers reject other versions.
inline constexpr int kFormatVersion = 1;

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Throws MigrationError when `j` carries a different format_version and
// IntegrityError when it carries none.
void check_format_version(const nlohmann::json& j, const std::string& what);

struct TrainingMeta {
  std::string case_name;
  std::string task;
  std::string task_type;  // "Classification" or "Regression"
  std::string description;
  // "siit", "iit" or "natural".
  std::string mode = "siit";
  TrainConfig train;
  std::size_t n_samples = 0;
  int epochs_run = 0;
  std::string stop_reason;
  std::optional<double> iia;
  std::optional<double> siia;
  std::optional<double> behavior_accuracy;
  std::size_t n_nodes = 0;
  std::size_t n_circuit_nodes = 0;

  nlohmann::json to_json() const;
  static TrainingMeta from_json(const nlohmann::json& j);
};

struct ModelBundle {
  Transformer model;
  Alignment alignment;
  // Head-granularity ground truth over the full edge graph.
  EdgeLabels edges;
  TrainingMeta meta;
};

// Little-endian f64 blob plus manifest (name, offset, shape in values).
struct WeightsFile {
  std::string blob;
  nlohmann::json manifest;
};

WeightsFile encode_weights(const Transformer& model);
// Overwrites the parameters of `model` after checking that the manifest tiles
// the blob exactly and matches the model's parameter list.
void decode_weights(Transformer& model, const WeightsFile& file);

nlohmann::json edges_to_json(const EdgeLabels& labels);
EdgeLabels edges_from_json(const nlohmann::json& j);

// Writes config.json, weights.bin, weights.manifest.json, alignment.json,
// edges.json and meta.json into `dir`, each atomically.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);
// Validates every file before returning. Throws IntegrityError on missing or
// inconsistent files and MigrationError on version mismatch.
ModelBundle load_bundle(const std::filesystem::path& dir);

struct MetadataExport {
  std::string csv;
  nlohmann::json json;
};

// One row per case: case, task_type, description, weight_siit, iia, siia,
// n_nodes, n_circuit_nodes. Missing values are written as null.
MetadataExport export_metadata(const std::vector<TrainingMeta>& cases);

// Dataset as {"inputs": [[ids]], "labels": [[values]]}.
nlohmann::json dataset_to_json(const Dataset& data);
Dataset dataset_from_json(const nlohmann::json& j);

// Record of one CLI invocation: the subcommand and every resolved option.
struct RunManifest {
  std::string command;
  nlohmann::json options = nlohmann::json::object();
  std::vector<std::string> outputs;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

}  // namespace siit
