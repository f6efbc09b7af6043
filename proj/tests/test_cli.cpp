// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "doctest.h"
#include "json.hpp"
#include "siit/cli.hpp"
#include "siit/error.hpp"

using namespace siit;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("siit_cli_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("sweep grammar") {
  const Sweep a = parse_sweep("tau=1e-5..1e-1:log10");
  CHECK(a.param == "tau");
  REQUIRE(a.values.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(a.values[i] == doctest::Approx(std::pow(10.0, -5.0 + static_cast<double>(i))));
  const Sweep b = parse_sweep("lambda=0..1:lin5");
  CHECK(b.values == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  const Sweep c = parse_sweep("lambda=1e-3..1e-1:log3");
  REQUIRE(c.values.size() == 3);
  CHECK(c.values[1] == doctest::Approx(1e-2));
  CHECK(parse_sweep("tau=0.5,0.25").values == std::vector<double>{0.5, 0.25});
  for (const char* bad : {"tau", "=1,2", "tau=", "tau=1..0.1:log10", "tau=1..2:cube3", "tau=a,b", "tau=0..1:log10",
                          "tau=0..1:lin0"}) {
    CAPTURE(std::string(bad));
    CHECK_THROWS_AS(parse_sweep(bad), ConfigError);
  }
}

TEST_CASE("usage errors exit 2") {
  CHECK(cli({"train", "--task", "frac_x", "--bogus"}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"discover", "--model", "x", "--algo", "magic"}).code == 2);
  CHECK(cli({"train", "--task", "frac_x", "--iit-only", "--natural"}).code == 2);
  const Run none = cli({});
  CHECK(none.code == 2);
}

TEST_CASE("runtime errors exit 1 with one parseable line") {
  const Run r = cli({"eval", "--model", (scratch("nomodel") / "absent").string()});
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error: integrity: ", 0) == 0);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  CHECK(cli({"train", "--task", "sort", "--out", (scratch("badtask") / "m").string()}).code == 1);
}

TEST_CASE("train, discover and compare pipeline") {
  const fs::path dir = scratch("pipeline");
  const std::vector<std::pair<std::string, std::string>> cases{{"frac_x", "0"}, {"frac_x", "1"}, {"open_close", "0"}};
  for (const auto& [task, seed] : cases) {
    const fs::path m = dir / (task + seed);
    const Run r = cli({"train", "--task", task, "--seed", seed, "--samples", "60", "--max-epochs", "1", "--batch-size", "30",
                       "--n-interventions", "8", "--out", m.string()});
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(fs::is_regular_file(m / "manifest.json"));
    for (const char* algo : {"acdc", "eap"}) {
      std::vector<std::string> args{"discover", "--model", m.string(), "--algo", algo, "--samples", "12",
                                    "--out", (dir / (task + seed + "_" + algo + ".json")).string()};
      if (std::string(algo) == "acdc") {
        args.push_back("--sweep");
        args.push_back("tau=1e-3..1e-1:log10");
      }
      const Run d = cli(args);
      INFO(d.err);
      REQUIRE(d.code == 0);
    }
    const nlohmann::json acdc = nlohmann::json::parse(slurp(dir / (task + seed + "_acdc.json")));
    CHECK(acdc["results"].size() == 3);
    CHECK(acdc["best_auc"].get<double>() >= 0.0);
    CHECK(acdc["best_auc"].get<double>() <= 1.0);
  }
  const fs::path table = dir / "table.csv";
  const Run c = cli({"compare", "--results", (dir / "*.json").string(), "--out", table.string()});
  INFO(c.err);
  REQUIRE(c.code == 0);
  const std::string csv = slurp(table);
  CHECK(csv.rfind("algo_a,algo_b,u,p_value", 0) == 0);
  CHECK(csv.find("acdc,eap,") != std::string::npos);

  // Re-running from a manifest reproduces the output byte for byte.
  const std::string before = slurp(dir / "frac_x0_eap.json");
  const fs::path again = dir / "again.json";
  const Run rr = cli({"rerun", "--manifest", (dir / "frac_x0_eap.manifest.json").string(), "--out", again.string()});
  INFO(rr.err);
  REQUIRE(rr.code == 0);
  CHECK(slurp(again) == before);
  fs::remove_all(dir);
}

TEST_CASE("weight-siit 0 trains the iit baseline") {
  const fs::path dir = scratch("iit");
  const Run r = cli({"train", "--task", "frac_x", "--weight-siit", "0", "--samples", "40", "--max-epochs", "1",
                     "--n-interventions", "4", "--out", (dir / "m").string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const nlohmann::json meta = nlohmann::json::parse(slurp(dir / "m" / "meta.json"));
  CHECK(meta["train"]["weight_siit"] == 0.0);
  fs::remove_all(dir);
}
