// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace siit {

// Shortest round-trip form with at most 17 significant digits, '.' decimal,
// independent of the global locale. Non-finite values print as nan/inf.
std::string format_double(double value);
std::string format_optional(const std::optional<double>& value);

// Quotes a CSV field when it contains a comma, quote or newline.
std::string csv_field(std::string_view text);
std::string csv_row(const std::vector<std::string>& fields);

// Writes to a sibling temporary file, then renames over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view contents);
// Throws IntegrityError when the file cannot be read.
std::string read_file(const std::filesystem::path& path);

}  // namespace siit
