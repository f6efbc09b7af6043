// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "support/schema_check.hpp"

#include <charconv>
#include <cmath>

#include "siit/error.hpp"

namespace siit::testing {

namespace {

using nlohmann::json;

bool has_type(const json& doc, const std::string& type) {
  if (type == "null") return doc.is_null();
  if (type == "boolean") return doc.is_boolean();
  if (type == "object") return doc.is_object();
  if (type == "array") return doc.is_array();
  if (type == "string") return doc.is_string();
  if (type == "number") return doc.is_number();
  if (type == "integer") {
    if (doc.is_number_integer()) return true;
    return doc.is_number_float() && std::floor(doc.get<double>()) == doc.get<double>();
  }
  throw ConfigError("schema: unknown type " + type);
}

void check(const json& root, const json& schema, const json& doc, const std::string& path,
           std::vector<std::string>& errors) {
  if (schema.contains("$ref")) {
    const std::string ref = schema.at("$ref").get<std::string>();
    const std::string prefix = "#/$defs/";
    if (ref.rfind(prefix, 0) != 0) throw ConfigError("schema: unsupported $ref " + ref);
    check(root, root.at("$defs").at(ref.substr(prefix.size())), doc, path, errors);
    return;
  }
  if (schema.contains("type")) {
    const json& t = schema.at("type");
    bool ok = false;
    if (t.is_string()) {
      ok = has_type(doc, t.get<std::string>());
    } else {
      for (const json& x : t) ok = ok || has_type(doc, x.get<std::string>());
    }
    if (!ok) {
      errors.push_back(path + ": expected type " + t.dump() + ", got " + doc.type_name());
      return;
    }
  }
  if (schema.contains("const") && doc != schema.at("const")) {
    errors.push_back(path + ": expected " + schema.at("const").dump());
  }
  if (schema.contains("enum")) {
    bool found = false;
    for (const json& v : schema.at("enum")) found = found || v == doc;
    if (!found) errors.push_back(path + ": " + doc.dump() + " not in " + schema.at("enum").dump());
  }
  if (doc.is_number()) {
    const double v = doc.get<double>();
    if (schema.contains("minimum") && v < schema.at("minimum").get<double>()) {
      errors.push_back(path + ": " + doc.dump() + " below minimum");
    }
    if (schema.contains("maximum") && v > schema.at("maximum").get<double>()) {
      errors.push_back(path + ": " + doc.dump() + " above maximum");
    }
  }
  if (doc.is_object()) {
    if (schema.contains("required")) {
      for (const json& k : schema.at("required")) {
        if (!doc.contains(k.get<std::string>())) errors.push_back(path + ": missing " + k.get<std::string>());
      }
    }
    const json props = schema.value("properties", json::object());
    const json extra = schema.value("additionalProperties", json(true));
    for (const auto& [k, v] : doc.items()) {
      if (props.contains(k)) {
        check(root, props.at(k), v, path + "/" + k, errors);
      } else if (extra == false) {
        errors.push_back(path + ": unexpected property " + k);
      } else if (extra.is_object()) {
        check(root, extra, v, path + "/" + k, errors);
      }
    }
  }
  if (doc.is_array()) {
    if (schema.contains("minItems") && doc.size() < schema.at("minItems").get<std::size_t>()) {
      errors.push_back(path + ": fewer than " + schema.at("minItems").dump() + " items");
    }
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < doc.size(); ++i) check(root, schema.at("items"), doc[i], path + "/" + std::to_string(i), errors);
    }
  }
}

}  // namespace

std::vector<std::string> schema_errors(const nlohmann::json& schema, const nlohmann::json& doc) {
  std::vector<std::string> errors;
  check(schema, schema, doc, "", errors);
  return errors;
}

CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    any = true;
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      records.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw IntegrityError("csv: unterminated quote");
  if (any) {
    row.push_back(std::move(field));
    records.push_back(std::move(row));
  }
  if (records.empty()) throw IntegrityError("csv: no header");
  CsvTable t;
  t.header = records.front();
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size()) {
      throw IntegrityError("csv: row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                           " fields, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(records[r]);
  }
  return t;
}

nlohmann::json csv_to_json(const CsvTable& table) {
  json out = json::array();
  for (const auto& row : table.rows) {
    json obj = json::object();
    for (std::size_t i = 0; i < row.size(); ++i) {
      const std::string& f = row[i];
      json v;
      if (f.empty() || f == "null") {
        v = nullptr;
      } else if (f == "true" || f == "false") {
        v = f == "true";
      } else {
        double d = 0.0;
        const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), d);
        if (ec == std::errc() && ptr == f.data() + f.size()) {
          long long n = 0;
          const auto [p2, e2] = std::from_chars(f.data(), f.data() + f.size(), n);
          v = e2 == std::errc() && p2 == f.data() + f.size() ? json(n) : json(d);
        } else {
          v = f;
        }
      }
      obj[table.header[i]] = v;
    }
    out.push_back(obj);
  }
  return out;
}

}  // namespace siit::testing
