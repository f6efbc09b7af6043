// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace siit::testing {

// Validates `doc` against the subset of JSON Schema used by schemas/:
// type (string or list), required, properties, additionalProperties (bool or schema),
// items, enum, const, minimum, maximum, minItems and local "$ref": "#/$defs/x".
// Returns one message per violation, each prefixed with its JSON pointer.
std::vector<std::string> schema_errors(const nlohmann::json& schema, const nlohmann::json& doc);

// RFC 4180 reader. Every row must have as many fields as the header.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable parse_csv(std::string_view text);

// Rows as objects; fields that parse as numbers become numbers, "true"/"false"
// booleans, empty fields and "null" become null.
nlohmann::json csv_to_json(const CsvTable& table);

}  // namespace siit::testing
