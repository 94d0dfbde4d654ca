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

// Small fixed constructions where training-on-all and training-on-own
// nominators disagree, with closed-form limits of the misspecified nominator
// and simulation harnesses that check those limits empirically.
//
// Arms are 0-based: arm k here is a_(k+1) in the usual 1-based notation.
// Nominator 0 owns arm 0, nominator 1 owns every other arm and sees only the
// last two context columns.

#ifndef TWOSTAGE_COUNTEREXAMPLE_HPP_
#define TWOSTAGE_COUNTEREXAMPLE_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twostage/agents.hpp"
#include "twostage/env.hpp"
#include "twostage/twostage.hpp"

namespace twostage {

enum class Construction { kEq6, kEq7 };

Construction parse_construction(const std::string& name);
std::string to_string(Construction c);
Eigen::MatrixXd construction_matrix(Construction c);

// Columns visible to the misspecified nominator.
std::vector<int> nominator_columns(Construction c);
// {0}, {1, ..., |A|-1}, plus {third} when given.
PoolAllocation counterexample_pools(Construction c, std::optional<ArmId> third = std::nullopt);

// Closed-form limit of the misspecified nominator's ridge estimate as the
// regularizer vanishes. Defined for train-on-all and train-on-own.
Eigen::Vector2d analytic_theta_star(Construction c, std::span<const double> rbar,
                                    TrainingMode mode);

// (sum_a w_a x_a x_a^T)^-1 sum_a w_a x_a rbar_a over the rows of `x`
// restricted to `columns`; the weighted least-squares limit over a uniform
// context distribution.
Eigen::VectorXd limit_theta(const Eigen::MatrixXd& x, const Eigen::VectorXd& rbar,
                            std::span<const int> columns, const Eigen::VectorXd& weights);

// Per-arm weights of the misspecified nominator's objective under `mode`.
Eigen::VectorXd limit_weights(Construction c, TrainingMode mode);

// Arm of nominator 1's pool maximising <theta, x_a> on the unmasked matrix.
// Ties go to the lowest arm id.
ArmId induced_argmax(Construction c, const Eigen::Vector2d& theta);

struct SupervisedReport {
  Construction construction = Construction::kEq6;
  TrainingMode mode = TrainingMode::kAll;
  std::int64_t rounds = 0;
  Eigen::Vector2d theta_hat = Eigen::Vector2d::Zero();
  Eigen::Vector2d theta_star = Eigen::Vector2d::Zero();
  double max_abs_error = 0.0;
  ArmId argmax_arm = -1;
  ArmId optimal_arm = -1;  // best arm of the pool by mean reward
};

// Full-feedback process: every round reveals each arm's reward and the
// nominator absorbs all of them with its mode weights.
SupervisedReport supervised_limit_check(Construction c, std::span<const double> rbar,
                                        TrainingMode mode, std::int64_t T, double lambda,
                                        RewardNoise noise, std::uint64_t seed);

struct BanditDemoParams {
  TrainingMode mode = TrainingMode::kOwn;
  bool third_nominator = false;
  std::int64_t T = 200000;
  std::uint64_t seed = 0;
  // Greedy agents can settle on a self-consistent wrong estimate here because
  // masked arms always score exactly 0; LinUCB with a wide bonus escapes it.
  AgentKind nominator_kind = AgentKind::kUcb;
  AgentKind ranker_kind = AgentKind::kUcb;
  AgentParams agent{1e-2, 4.0, 1.0};  // lambda before input scaling, alpha, PG rate
  RewardNoise noise = RewardNoise::kBernoulli;
  int grid_points = 40;
  std::vector<double> rbar = {3.0 / 4.0, 7.0 / 8.0, 1.0 / 6.0, 1.0};
};

struct BanditDemoReport {
  BanditDemoParams params;
  std::vector<std::int64_t> grid;            // log-spaced checkpoints
  std::vector<double> regret_2s_slope;       // R2s_t / t
  std::vector<double> regret_nom_slope;      // RN_t / t
  std::vector<double> regret_rank_slope;     // RR_t / t
  std::vector<Eigen::Vector2d> theta_trace;  // misspecified nominator's estimate
  Eigen::Vector2d theta_hat = Eigen::Vector2d::Zero();
  Eigen::Vector2d theta_star = Eigen::Vector2d::Zero();
  ArmId argmax_arm = -1;
  double max_round_residual = 0.0;
  double cumulative_residual = 0.0;
  double min_round_regret_nom = 0.0;
  // Fraction of rounds in the second half whose candidates hold an optimal arm.
  double late_coverage = 0.0;
};

// Arm given to the third nominator so that `mode` recovers sublinear regret.
ArmId third_nominator_arm(TrainingMode mode);

// Roughly log-spaced integers from 1 to T inclusive, without repeats.
std::vector<std::int64_t> log_grid(std::int64_t T, int points);

// Masked-row bandit on the 4-arm construction.
BanditDemoReport bandit_regret_demo(const BanditDemoParams& p);

struct ConvergenceReport {
  double final_error = 0.0;   // max-norm distance of the last estimate
  int expected_sign = 0;      // sign of the limit's second coordinate
  bool sign_stable = false;   // every checkpoint from `from_t` on has that sign
  std::int64_t from_t = 0;
  std::int64_t stable_since = -1;  // first checkpoint after which the sign holds
};

// Checks a bandit demo's estimate trace against its limit. Checkpoints with
// t >= start_fraction * T are required to carry the limit's sign.
ConvergenceReport lemma2_convergence_check(const BanditDemoReport& report,
                                      double start_fraction = 0.01);

struct RidgeConsistencyReport {
  std::vector<std::int64_t> grid;
  std::vector<double> error;  // ||theta_hat_t - theta_limit||_2
  Eigen::VectorXd theta_limit;
};

// Ridge on an i.i.d. stream x = L z, z ~ N(0, I), r = <theta, x> + N(0, 1)
// with a random well-conditioned L. The population limit is theta.
RidgeConsistencyReport ridge_consistency_trace(int d, std::int64_t T, int grid_points,
                                               double lambda, std::uint64_t seed);

}  // namespace twostage

#endif  // TWOSTAGE_COUNTEREXAMPLE_HPP_
