// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace siit {

// Parameter grid of a discovery sweep. Grammar:
//   name=lo..hi:log10   every power of ten from lo to hi
//   name=lo..hi:logN    N log-spaced points from lo to hi
//   name=lo..hi:linN    N evenly spaced points
//   name=v1,v2,...      explicit values
struct Sweep {
  std::string param;
  std::vector<double> values;
};

// Throws ConfigError on malformed grids.
Sweep parse_sweep(std::string_view text);

// $SIIT_OUTPUT_DIR, or "siit-out" when unset.
std::filesystem::path default_output_dir();

// Runs one command line (without the program name). Returns 0 on success, 2
// on usage errors and 1 on any other failure, which is reported on `err` as
// "error: <code>: <message>".
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace siit
