// Copyright 2026 The twostage Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "twostage/config.hpp"
#include "twostage/error.hpp"
#include "twostage/moe_experiment.hpp"
#include "twostage/sweep.hpp"

using namespace twostage;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("twostage_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TWOSTAGE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kTinyTwoStage = R"({
  "environment": {"kind": "synthetic", "n_arms": 8, "d": 6, "noise_std": 0.1},
  "system": {"kind": "two-stage", "ranker": "ucb", "nominator": "greedy",
             "n_nominators": 2, "rho": 2},
  "T": 60,
  "seeds": 2
})";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config defaults") {
  const auto cfg = parse_config_text("{}");
  CHECK(cfg.env.kind == EnvKind::kSynthetic);
  CHECK(cfg.env.n_arms == 100);
  CHECK(cfg.env.d == 40);
  CHECK(cfg.env.noise_std == 0.1);
  CHECK(cfg.T == 1000);
  CHECK(cfg.seeds == 1);
  CHECK(cfg.system.kind == SystemKind::kSingleStage);
  CHECK(cfg.system.params.lambda == 1e-2);
  CHECK(cfg.system.params.alpha == 1e-2);
  const auto p = default_agent_params(EnvKind::kDataset);
  CHECK(p.lambda == 1.0);
  CHECK(p.alpha == 1e-3);
  CHECK(p.pg_learning_rate == 10.0);
}

TEST_CASE("unknown keys are reported with their line") {
  const std::string text = "{\n  \"T\": 10,\n  \"environment\": {\n    \"n_armz\": 5\n  }\n}";
  try {
    parse_config_text(text, "cfg.json");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("cfg.json:4") != std::string::npos);
    CHECK(msg.find("n_armz") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config_text("{\"T\": 10,,}"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("{\"T\": \"ten\"}"), ConfigError);
}

TEST_CASE("invalid systems are rejected") {
  CHECK_THROWS_AS(parse_config_text(R"({"environment": {"d": 5},
      "system": {"kind": "single-stage", "s": 6}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"environment": {"n_arms": 3},
      "system": {"kind": "two-stage", "n_nominators": 4}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"system": {"kind": "three-stage"}})"), ConfigError);
}

TEST_CASE("dataset configs take dataset agent defaults") {
  const auto cfg = parse_config_text(R"({"environment": {"kind": "dataset",
      "features": "x.csv", "labels": "y.txt"}})", "c.json", "/data");
  CHECK(cfg.env.kind == EnvKind::kDataset);
  CHECK(cfg.env.features_path == "/data/x.csv");
  CHECK(cfg.system.params.lambda == 1.0);
  CHECK(cfg.system.params.alpha == 1e-3);
}

TEST_CASE("grid expansion skips cells with more nominators than arms") {
  const auto cfg = parse_config_text(R"({
    "environment": {"d": 8},
    "system": {"kind": "two-stage"},
    "sweep": {"n_arms": [2, 4, 8], "n_nominators": [2, 4]}
  })");
  const auto g = expand_grid(cfg);
  CHECK(g.cells.size() == 5);
  CHECK(g.skipped == 1);
  for (std::size_t i = 0; i < g.cells.size(); ++i) {
    CHECK(g.cells[i].index == static_cast<int>(i));
    CHECK(g.cells[i].system.n_nominators <= g.cells[i].env.n_arms);
  }
}

TEST_CASE("rho resolves to s") {
  SystemSpec s;
  s.rho = 3.0;
  CHECK(s.resolved_s(40) == 13);
  s.rho = 40.0;
  CHECK(s.resolved_s(40) == 1);
  s.rho.reset();
  CHECK(s.resolved_s(40) == 40);
}

TEST_CASE("sweep rows, resume and thread-count determinism") {
  const fs::path dir = scratch("sweep");
  auto cfg = parse_config_text(kTinyTwoStage);
  cfg.out = (dir / "a").string();
  const auto first = run_sweep(cfg, SweepOptions{1, false});
  CHECK(first.rows.size() == 2);
  CHECK(first.executed == 2);
  CHECK(first.failed == 0);
  CHECK(fs::exists(dir / "a" / "summary.csv"));
  const auto again = run_sweep(cfg, SweepOptions{1, true});
  CHECK(again.reused == 2);
  CHECK(again.executed == 0);
  CHECK(again.rows[1].regret_2s == first.rows[1].regret_2s);

  cfg.out = (dir / "b").string();
  const auto par = run_sweep(cfg, SweepOptions{2, false});
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(par.rows[i].hash == first.rows[i].hash);
    CHECK(par.rows[i].regret_2s == first.rows[i].regret_2s);
    CHECK(par.rows[i].uniform_regret_2s == first.rows[i].uniform_regret_2s);
  }
  const auto read = read_summary_csv((dir / "a" / "summary.csv").string());
  REQUIRE(read.size() == 2);
  CHECK(read[0].regret_2s == first.rows[0].regret_2s);
  CHECK(read[0].seed == first.rows[0].seed);
  const auto agg = summarize((dir / "a").string());
  CHECK(agg.size() == 1);
  CHECK(agg[0].n_seeds == 2);
  CHECK(fs::exists(dir / "a" / "aggregate.csv"));
  fs::remove_all(dir);
}

TEST_CASE("mean and two standard errors") {
  const std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
  const auto m = mean_se2(v);
  CHECK(m.mean == doctest::Approx(2.5));
  // sample sd = sqrt(5/3), se = sd / 2
  CHECK(m.se2 == doctest::Approx(std::sqrt(5.0 / 3.0)));
  const std::vector<double> one = {7.0};
  CHECK(mean_se2(one).se2 == 0.0);
  CHECK(mean_se2(one).n == 1);
}

TEST_CASE("summarize on an empty directory fails") {
  const fs::path dir = scratch("empty");
  CHECK_THROWS_AS(summarize(dir.string()), DataError);
  fs::remove_all(dir);
}

TEST_CASE("moe config parsing") {
  const auto cfg = parse_moe_config_text(R"({"model": {"kind": "random-pools", "gating": "item"},
      "sampling": "balanced", "train": {"steps": 3}})", "m.json");
  CHECK(cfg.model == MoEModelKind::kRandomPools);
  CHECK(cfg.item_only_gating);
  CHECK(cfg.sampling == OfflineSampling::kBalanced);
  CHECK(cfg.resolved_sigma2() == 1.0);
  CHECK(cfg.train.steps == 3);
  CHECK_THROWS_AS(parse_moe_config_text(R"({"model": {"s": 51}})", "m.json"), ConfigError);
  CHECK_THROWS_AS(parse_moe_config_text(R"({"model": {"experts": 3}})", "m.json"), ConfigError);
}

TEST_CASE("command-line exit codes") {
  const fs::path dir = scratch("exe");
  write_file(dir / "ok.json", kTinyTwoStage);
  write_file(dir / "bad.json", "{\"T\": 10, \"bogus\": 1}");
  CHECK(run_cli("synth-run --config " + (dir / "ok.json").string() + " --out " +
                (dir / "out").string()) == 0);
  CHECK(fs::exists(dir / "out" / "summary.csv"));
  CHECK(run_cli("summarize --out " + (dir / "out").string()) == 0);
  CHECK(run_cli("synth-run --config " + (dir / "bad.json").string()) == 2);
  CHECK(run_cli("synth-run --config " + (dir / "missing.json").string()) == 2);
  CHECK(run_cli("no-such-command") == 2);
  CHECK(run_cli("summarize --out " + (dir / "nothing").string()) == 3);
  CHECK(run_cli("coverage-prob --pools 2 --frac 0.5 --trials 1000") == 0);
  CHECK(run_cli("counterexample --construction eq6 --mode all --T 100") == 0);
  fs::remove_all(dir);
}

}  // TEST_SUITE
