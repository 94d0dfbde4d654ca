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

// Two-stage recommender composition: N nominators over item pools feed a
// candidate set to a ranker. Every round is recorded in a RegretLedger which
// splits two-stage regret into nominator and ranker regret.

#ifndef TWOSTAGE_TWOSTAGE_HPP_
#define TWOSTAGE_TWOSTAGE_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twostage/agents.hpp"
#include "twostage/env.hpp"
#include "twostage/rng.hpp"

namespace twostage {

struct PoolAllocation {
  std::vector<std::vector<ArmId>> pools;
  int n_arms = 0;

  int n_pools() const { return static_cast<int>(pools.size()); }
  bool contains(int pool, ArmId a) const;
  bool disjoint() const;
  // Nonempty pools whose union is every arm; throws ConfigError otherwise.
  void validate() const;
  // Pool index of each arm; requires disjoint pools.
  std::vector<int> owner() const;
};

// Random permutation split into N pools of floor(|A|/N); leftover arms go one
// by one to the first pools.
PoolAllocation pool_allocate(int n_arms, int n_pools, Rng& rng);

struct FeatureAllocation {
  std::vector<std::vector<int>> subsets;  // sorted feature indices
  int d = 0;

  void validate() const;
};

// Features permuted and split into N disjoint blocks of min(s, floor(d/N));
// each block is topped up to s with indices drawn without replacement from the
// features outside it.
FeatureAllocation feature_allocate(int d, int s, int n, Rng& rng);

enum class TrainingMode { kAll, kOwn, kChosen };

TrainingMode parse_training_mode(const std::string& name);
std::string to_string(TrainingMode mode);

// Weight w_{n,a_t} of the served tuple in nominator n's objective.
double training_weight(TrainingMode mode, const PoolAllocation& pools, int nominator,
                       ArmId served, ArmId nominated);

// Unevaluated sum hi + lo, accumulated with error-free transformations so the
// regret decomposition survives long horizons without rounding drift.
class ExactSum {
 public:
  void add(double hi, double lo = 0.0);
  double hi() const { return hi_; }
  double lo() const { return lo_; }
  double value() const { return hi_ + lo_; }

 private:
  double hi_ = 0.0;
  double lo_ = 0.0;
};

struct LedgerRecord {
  std::int64_t t = 0;
  ArmId chosen = -1;
  ArmId best_candidate = -1;  // a~_t
  double reward = 0.0;        // realized r_{t, a_t}
  double optimal = 0.0;       // r*_t
  double best_in_pool = 0.0;  // expected reward of a~_t
  double served = 0.0;        // expected reward of a_t
  double regret_2s = 0.0;
  double regret_nom = 0.0;
  double regret_rank = 0.0;
  std::vector<ArmId> candidates;    // C_t as a set, first-nomination order
  std::vector<int> multiplicity;    // nominations per candidate
};

class RegretLedger {
 public:
  explicit RegretLedger(bool keep_records = true) : keep_records_(keep_records) {}

  // Books one round from the environment's expected rewards. a~_t is the best
  // candidate, ties resolved toward the served arm.
  const LedgerRecord& record(std::int64_t t, const Eigen::VectorXd& expected,
                             std::span<const ArmId> nominations, ArmId chosen,
                             double realized_reward);

  std::int64_t rounds() const { return rounds_; }
  const std::vector<LedgerRecord>& records() const { return records_; }
  const LedgerRecord& last() const { return last_; }
  double cum_2s() const { return cum_2s_.value(); }
  double cum_nom() const { return cum_nom_.value(); }
  double cum_rank() const { return cum_rank_.value(); }
  double cum_reward() const { return cum_reward_; }
  // |R2s - (RN + RR)| per round (max over rounds) and on the running totals.
  double max_round_residual() const { return max_round_residual_; }
  double cumulative_residual() const;
  double min_round_regret_nom() const { return min_regret_nom_; }

  // Ledger CSV: run_id,seed,t,chosen_arm,reward,regret_2s,regret_nom,
  // regret_rank,cum_regret_2s,cum_regret_nom,cum_regret_rank
  void write_csv(std::ostream& out, const std::string& run_id, std::uint64_t seed) const;

 private:
  bool keep_records_;
  std::int64_t rounds_ = 0;
  std::vector<LedgerRecord> records_;
  std::vector<double> cum_rows_;  // 3 running totals per kept record
  LedgerRecord last_;
  ExactSum cum_2s_, cum_nom_, cum_rank_;
  double cum_reward_ = 0.0;
  double max_round_residual_ = 0.0;
  double min_regret_nom_ = 0.0;
};

inline const char* kLedgerCsvHeader =
    "run_id,seed,t,chosen_arm,reward,regret_2s,regret_nom,regret_rank,"
    "cum_regret_2s,cum_regret_nom,cum_regret_rank";

// A policy that serves one arm per round and learns from the served reward.
class System {
 public:
  virtual ~System() = default;
  // Plays one round: selects, observes rewards[a_t] only, updates, books the
  // round in `ledger`. Returns the served arm.
  virtual ArmId step(const Round& round, RegretLedger& ledger) = 0;
  virtual std::string label() const = 0;
};

// One agent over all arms, optionally restricted to a feature subset.
class SingleStageSystem final : public System {
 public:
  SingleStageSystem(Agent agent, std::vector<int> features, int n_arms,
                    std::uint64_t seed);
  ArmId step(const Round& round, RegretLedger& ledger) override;
  std::string label() const override;
  const Agent& agent() const { return agent_; }

 private:
  Agent agent_;
  std::vector<int> features_;  // empty = all
  std::vector<ArmId> arms_;
  Rng rng_;
};

class TwoStageSystem final : public System {
 public:
  TwoStageSystem(Agent ranker, std::vector<Agent> nominators, PoolAllocation pools,
                 FeatureAllocation features, TrainingMode mode, std::uint64_t seed);

  ArmId step(const Round& round, RegretLedger& ledger) override;
  std::string label() const override;

  const Agent& ranker() const { return ranker_; }
  const std::vector<Agent>& nominators() const { return nominators_; }
  const PoolAllocation& pools() const { return pools_; }
  const FeatureAllocation& features() const { return features_; }
  TrainingMode mode() const { return mode_; }
  // Nominations of the most recent round, one per nominator.
  const std::vector<ArmId>& last_nominations() const { return nominations_; }

 private:
  Agent ranker_;
  std::vector<Agent> nominators_;
  PoolAllocation pools_;
  FeatureAllocation features_;
  TrainingMode mode_;
  Rng rng_;
  std::vector<ArmId> nominations_;
  std::vector<Eigen::MatrixXd> restricted_;
};

// Column subset of every arm's context row.
Eigen::MatrixXd restrict_columns(const Eigen::MatrixXd& contexts,
                                 std::span<const int> columns);

// Plays rounds 1..T of `env` with `system`.
RegretLedger run_experiment(const Environment& env, System& system, std::int64_t T,
                            bool keep_records = true);

// R2s(system) / mean R2s(uniform runs). Empty when the denominator is zero.
std::optional<double> relative_regret(const RegretLedger& ledger,
                                      std::span<const RegretLedger> uniform_ledgers);
std::optional<double> relative_regret(double regret, std::span<const double> uniform);

// Monte-Carlo P(at least one optimal arm in C_t) for uniformly random
// nominators over disjoint pools of `arms_per_pool` arms, each arm optimal
// independently with probability frac_optimal. Trials are split into fixed
// chunks with their own streams, so the estimate does not depend on the
// thread count.
double candidate_coverage_probability(int n_pools, double frac_optimal,
                                      std::int64_t trials, std::uint64_t seed,
                                      int arms_per_pool = 10);
// Serial reference with identical chunking and streams.
double candidate_coverage_probability_serial(int n_pools, double frac_optimal,
                                             std::int64_t trials, std::uint64_t seed,
                                             int arms_per_pool = 10);

}  // namespace twostage

#endif  // TWOSTAGE_TWOSTAGE_HPP_
