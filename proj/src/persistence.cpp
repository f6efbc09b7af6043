// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/persistence.hpp"

#include <cstring>

#include "siit/error.hpp"
#include "siit/io.hpp"

namespace siit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

void put_le(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

json parse_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IntegrityError(path.filename().string() + ": " + e.what());
  }
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

// Wraps json access errors from a named document.
template <typename F>
auto guarded(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw IntegrityError(what + ": " + e.what());
  }
}

}  // namespace

json model_config_to_json(const ModelConfig& cfg) {
  return {{"format_version", kFormatVersion},
          {"n_layers", cfg.n_layers},
          {"n_heads", cfg.n_heads},
          {"d_head", cfg.d_head},
          {"d_model", cfg.d_model},
          {"d_mlp", cfg.d_mlp},
          {"vocab_size", cfg.vocab_size},
          {"max_seq_len", cfg.max_seq_len},
          {"output_kind", to_string(cfg.output_kind)},
          {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  check_format_version(j, "config.json");
  return guarded("config.json", [&] {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_head = j.at("d_head").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_mlp = j.at("d_mlp").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.output_kind = output_kind_from_string(j.at("output_kind").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  });
}

void check_format_version(const json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("format_version")) throw IntegrityError(what + ": missing format_version");
  const json& v = j.at("format_version");
  if (!v.is_number_integer() || v.get<int>() != kFormatVersion) {
    throw MigrationError(what + ": format_version " + v.dump() + " is not supported (expected " +
                         std::to_string(kFormatVersion) + ")");
  }
}

json TrainingMeta::to_json() const {
  return {{"format_version", kFormatVersion},
          {"case", case_name},
          {"task", task},
          {"task_type", task_type},
          {"description", description},
          {"mode", mode},
          {"train", train.to_json()},
          {"n_samples", n_samples},
          {"epochs_run", epochs_run},
          {"stop_reason", stop_reason},
          {"iia", optional_json(iia)},
          {"siia", optional_json(siia)},
          {"behavior_accuracy", optional_json(behavior_accuracy)},
          {"n_nodes", n_nodes},
          {"n_circuit_nodes", n_circuit_nodes}};
}

TrainingMeta TrainingMeta::from_json(const json& j) {
  check_format_version(j, "meta.json");
  return guarded("meta.json", [&] {
    TrainingMeta m;
    m.case_name = j.at("case").get<std::string>();
    m.task = j.at("task").get<std::string>();
    m.task_type = j.at("task_type").get<std::string>();
    m.description = j.at("description").get<std::string>();
    m.mode = j.at("mode").get<std::string>();
    m.train = TrainConfig::from_json(j.at("train"));
    m.n_samples = j.at("n_samples").get<std::size_t>();
    m.epochs_run = j.at("epochs_run").get<int>();
    m.stop_reason = j.at("stop_reason").get<std::string>();
    m.iia = optional_from(j, "iia");
    m.siia = optional_from(j, "siia");
    m.behavior_accuracy = optional_from(j, "behavior_accuracy");
    m.n_nodes = j.at("n_nodes").get<std::size_t>();
    m.n_circuit_nodes = j.at("n_circuit_nodes").get<std::size_t>();
    return m;
  });
}

WeightsFile encode_weights(const Transformer& model) {
  WeightsFile f;
  json params = json::array();
  std::size_t offset = 0;
  for (const NamedTensor& p : model.parameters()) {
    for (double v : p.tensor.data()) put_le(f.blob, v);
    params.push_back({{"name", p.name}, {"offset", offset}, {"shape", p.tensor.shape()}});
    offset += p.tensor.numel();
  }
  f.manifest = {{"format_version", kFormatVersion},
                {"dtype", "f64le"},
                {"total_values", offset},
                {"checksum_fnv1a64", hex64(fnv1a(f.blob))},
                {"parameters", params}};
  return f;
}

void decode_weights(Transformer& model, const WeightsFile& file) {
  const json& m = file.manifest;
  check_format_version(m, "weights.manifest.json");
  guarded("weights.manifest.json", [&] {
    if (m.at("dtype").get<std::string>() != "f64le") throw IntegrityError("weights: unsupported dtype");
    const std::size_t total = m.at("total_values").get<std::size_t>();
    if (file.blob.size() != total * 8) {
      throw IntegrityError("weights.bin holds " + std::to_string(file.blob.size()) + " bytes, manifest declares " +
                           std::to_string(total * 8));
    }
    if (m.at("checksum_fnv1a64").get<std::string>() != hex64(fnv1a(file.blob))) {
      throw IntegrityError("weights.bin checksum mismatch");
    }
    const json& entries = m.at("parameters");
    auto& params = model.parameters();
    if (entries.size() != params.size()) {
      throw IntegrityError("weights manifest lists " + std::to_string(entries.size()) + " parameters, model has " +
                           std::to_string(params.size()));
    }
    // Offsets must tile [0, total) in order with no gaps or overlaps.
    std::size_t expected = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const json& e = entries[i];
      const std::string name = e.at("name").get<std::string>();
      const std::size_t offset = e.at("offset").get<std::size_t>();
      const Shape shape = e.at("shape").get<Shape>();
      if (name != params[i].name) throw IntegrityError("weights manifest entry " + name + " where " + params[i].name + " expected");
      if (shape != params[i].tensor.shape()) throw IntegrityError("weights manifest shape mismatch for " + name);
      if (offset != expected) throw IntegrityError("weights manifest offsets do not tile the blob at " + name);
      expected += params[i].tensor.numel();
    }
    if (expected != total) throw IntegrityError("weights manifest does not cover the blob");
    // Validated; now copy.
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const std::size_t offset = entries[i].at("offset").get<std::size_t>();
      std::span<double> dst = params[i].tensor.mutable_data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = get_le(file.blob.data() + (offset + k) * 8);
    }
    return 0;
  });
}

json edges_to_json(const EdgeLabels& labels) {
  json edges = json::array();
  for (const auto& [e, in] : labels) edges.push_back({{"edge", e.str()}, {"in_circuit", in}});
  return {{"format_version", kFormatVersion}, {"granularity", "head"}, {"edges", edges}};
}

EdgeLabels edges_from_json(const json& j) {
  check_format_version(j, "edges.json");
  return guarded("edges.json", [&] {
    EdgeLabels labels;
    for (const json& e : j.at("edges")) {
      const Edge edge = Edge::parse(e.at("edge").get<std::string>());
      if (!labels.emplace(edge, e.at("in_circuit").get<bool>()).second) {
        throw IntegrityError("edges.json: duplicate edge " + edge.str());
      }
    }
    return labels;
  });
}

void save_bundle(const ModelBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  const WeightsFile w = encode_weights(bundle.model);
  json alignment = bundle.alignment.to_json();
  alignment["format_version"] = kFormatVersion;
  atomic_write(dir / "weights.bin", w.blob);
  atomic_write(dir / "weights.manifest.json", w.manifest.dump(2) + "\n");
  atomic_write(dir / "config.json", model_config_to_json(bundle.model.config()).dump(2) + "\n");
  atomic_write(dir / "alignment.json", alignment.dump(2) + "\n");
  atomic_write(dir / "edges.json", edges_to_json(bundle.edges).dump(2) + "\n");
  atomic_write(dir / "meta.json", bundle.meta.to_json().dump(2) + "\n");
}

ModelBundle load_bundle(const fs::path& dir) {
  for (const char* name : {"config.json", "weights.bin", "weights.manifest.json", "alignment.json", "edges.json",
                           "meta.json"}) {
    if (!fs::is_regular_file(dir / name)) throw IntegrityError("bundle " + dir.string() + " lacks " + name);
  }
  const ModelConfig cfg = model_config_from_json(parse_json_file(dir / "config.json"));
  TrainingMeta meta = TrainingMeta::from_json(parse_json_file(dir / "meta.json"));
  const json alignment_json = parse_json_file(dir / "alignment.json");
  check_format_version(alignment_json, "alignment.json");
  Alignment alignment = guarded("alignment.json", [&] { return Alignment::from_json(alignment_json, cfg.n_layers, cfg.n_heads); });
  const TaskSpec& task = task_by_name(meta.task);
  alignment.validate(*task.high_level);
  EdgeLabels edges = edges_from_json(parse_json_file(dir / "edges.json"));
  const CircuitGraph graph = build_edge_graph(cfg, Granularity::head);
  if (edges.size() != graph.edges.size()) throw IntegrityError("edges.json does not match the model's edge graph");
  for (const Edge& e : graph.edges) {
    if (!edges.contains(e)) throw IntegrityError("edges.json lacks " + e.str());
  }
  Transformer model(cfg);
  decode_weights(model, WeightsFile{read_file(dir / "weights.bin"), parse_json_file(dir / "weights.manifest.json")});
  return ModelBundle{std::move(model), std::move(alignment), std::move(edges), std::move(meta)};
}

MetadataExport export_metadata(const std::vector<TrainingMeta>& cases) {
  if (cases.empty()) throw ConfigError("export_metadata: no cases");
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("null"); };
  MetadataExport out;
  out.csv = csv_row({"case", "task_type", "description", "weight_siit", "iia", "siia", "n_nodes", "n_circuit_nodes"});
  out.json = json::array();
  for (const TrainingMeta& m : cases) {
    out.csv += csv_row({m.case_name, m.task_type, m.description, format_double(m.train.weight_siit), opt(m.iia),
                        opt(m.siia), std::to_string(m.n_nodes), std::to_string(m.n_circuit_nodes)});
    out.json.push_back({{"case", m.case_name},
                        {"task_type", m.task_type},
                        {"description", m.description},
                        {"weight_siit", m.train.weight_siit},
                        {"iia", optional_json(m.iia)},
                        {"siia", optional_json(m.siia)},
                        {"n_nodes", m.n_nodes},
                        {"n_circuit_nodes", m.n_circuit_nodes}});
  }
  return out;
}

json dataset_to_json(const Dataset& data) {
  return {{"format_version", kFormatVersion}, {"inputs", data.inputs}, {"labels", data.labels}};
}

Dataset dataset_from_json(const json& j) {
  check_format_version(j, "dataset");
  return guarded("dataset", [&] {
    Dataset d;
    d.inputs = j.at("inputs").get<std::vector<Sequence>>();
    d.labels = j.at("labels").get<std::vector<Values>>();
    if (d.inputs.size() != d.labels.size()) throw IntegrityError("dataset: inputs and labels differ in length");
    return d;
  });
}

json RunManifest::to_json() const {
  return {{"format_version", kFormatVersion}, {"command", command}, {"options", options}, {"outputs", outputs}};
}

RunManifest RunManifest::from_json(const json& j) {
  check_format_version(j, "manifest");
  return guarded("manifest", [&] {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.options = j.at("options");
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    return m;
  });
}

}  // namespace siit
