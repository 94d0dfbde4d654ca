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

// Grid expansion, per-(cell, seed) runs, resumable sweeps and the
// across-seed summary.

#ifndef TWOSTAGE_SWEEP_HPP_
#define TWOSTAGE_SWEEP_HPP_

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "twostage/config.hpp"
#include "twostage/env.hpp"

namespace twostage {

struct Cell {
  int index = 0;
  EnvSpec env;
  SystemSpec system;
  int d = 0;  // feature dimension the cell runs with
  int s = 0;
};

struct GridExpansion {
  std::vector<Cell> cells;
  int skipped = 0;  // two-stage cells with more nominators than arms
};

// Cartesian product of the swept lists over the base config, in the order
// systems, n_arms, d, n_nominators, noise_std, rho/s. `data_dim` supplies d
// for dataset environments.
GridExpansion expand_grid(const ExperimentConfig& cfg, int data_dim = 0);

// Seed of run (cell, seed index): a splitmix hash of (root, cell, seed index).
std::uint64_t run_seed(std::uint64_t root, int cell, int seed_index);

// FNV-1a 64 of the canonical run description; names the run's files.
std::uint64_t fnv1a64(const std::string& bytes);
std::string run_hash(const Cell& cell, std::int64_t T, std::uint64_t seed);

struct RunRow {
  int cell = 0;
  std::string hash;
  std::string system;
  std::string env;
  int n_arms = 0;
  int d = 0;
  int n_nominators = 0;
  int s = 0;
  double noise_std = 0.0;
  std::string training_mode;
  int seed_index = 0;
  std::uint64_t seed = 0;
  std::int64_t T = 0;
  double regret_2s = 0.0;
  double regret_nom = 0.0;
  double regret_rank = 0.0;
  double uniform_regret_2s = 0.0;
  std::string status = "ok";
  // Largest |R2s - (RN + RR)| over both ledgers of the run. In memory only;
  // rows read back from CSV carry 0.
  double max_residual = 0.0;

  double d_over_s() const { return s > 0 ? static_cast<double>(d) / s : 0.0; }
};

inline const char* kSummaryCsvHeader =
    "cell,hash,system,env,n_arms,d,n_nominators,s,d_over_s,noise_std,training_mode,"
    "seed_index,seed,T,regret_2s,regret_nom,regret_rank,uniform_regret_2s,status";

// Shared, read-only inputs of a sweep.
struct RunContext {
  std::shared_ptr<const MultiLabelDataset> dataset;  // dataset environments only
};

RunContext make_run_context(const EnvSpec& env);

// Builds the environment and system of one run and plays T rounds. The
// uniform reference plays the same environment stream. When `ledger_path` is
// nonempty the full ledger CSV is written there.
RunRow run_cell(const Cell& cell, int seed_index, const ExperimentConfig& cfg,
                const RunContext& ctx, const std::string& ledger_path = "");

struct SweepOptions {
  int parallel = 1;
  bool resume = false;
};

struct SweepReport {
  int cells = 0;
  int skipped_cells = 0;
  int executed = 0;
  int reused = 0;  // resumed from existing row files
  int failed = 0;
  std::vector<RunRow> rows;  // cell-major, then seed
};

// Runs every (cell, seed) of `cfg` into cfg.out: runs/<hash>.csv holds one
// summary row, ledgers/<hash>.csv the ledger, summary.csv all rows in order.
// A failing run is recorded with its message and the sweep continues.
SweepReport run_sweep(const ExperimentConfig& cfg, const SweepOptions& opts);

void write_summary_csv(const std::string& path, std::span<const RunRow> rows);
std::vector<RunRow> read_summary_csv(const std::string& path);

struct MeanSe {
  double mean = 0.0;
  double se2 = 0.0;  // two standard errors, n - 1 normalisation; 0 for n = 1
  int n = 0;
};
MeanSe mean_se2(std::span<const double> values);

struct AggregateRow {
  RunRow key;  // cell description; per-seed fields unused
  int n_seeds = 0;
  MeanSe regret_2s, regret_nom, regret_rank, relative_regret;
  bool relative_defined = true;  // false when the uniform mean is zero
};

inline const char* kAggregateCsvHeader =
    "cell,system,env,n_arms,d,n_nominators,s,d_over_s,noise_std,training_mode,n_seeds,"
    "regret_2s_mean,regret_2s_se2,regret_nom_mean,regret_nom_se2,regret_rank_mean,"
    "regret_rank_se2,relative_regret_mean,relative_regret_se2";

// Groups successful rows by cell. Relative regret of a run divides its R2s by
// the cell's mean uniform R2s.
std::vector<AggregateRow> aggregate(std::span<const RunRow> rows);
void write_aggregate_csv(const std::string& path, std::span<const AggregateRow> rows);

// Reads <dir>/summary.csv and writes <dir>/aggregate.csv. Throws DataError
// when there are no completed runs.
std::vector<AggregateRow> summarize(const std::string& dir);

}  // namespace twostage

#endif  // TWOSTAGE_SWEEP_HPP_
