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

#include "twostage/counterexample.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "twostage/error.hpp"

namespace twostage {

namespace {

void check_rbar(Construction c, std::span<const double> rbar) {
  const std::size_t n = c == Construction::kEq6 ? 3 : 4;
  if (rbar.size() != n)
    throw std::invalid_argument("rbar has " + std::to_string(rbar.size()) +
                                " entries, construction needs " + std::to_string(n));
}

Eigen::Vector2d nominator_theta(const Agent& agent) {
  if (const RidgeState* r = agent.ridge()) return r->theta();
  if (const PgState* pg = agent.pg()) return pg->theta;
  return Eigen::Vector2d::Zero();
}

}  // namespace

Construction parse_construction(const std::string& name) {
  if (name == "eq6") return Construction::kEq6;
  if (name == "eq7") return Construction::kEq7;
  throw ConfigError("unknown construction '" + name + "' (expected eq6 or eq7)");
}

std::string to_string(Construction c) { return c == Construction::kEq6 ? "eq6" : "eq7"; }

Eigen::MatrixXd construction_matrix(Construction c) {
  return c == Construction::kEq6 ? eq6_matrix() : eq7_matrix();
}

std::vector<int> nominator_columns(Construction c) {
  const int d = c == Construction::kEq6 ? 3 : 4;
  return {d - 2, d - 1};
}

PoolAllocation counterexample_pools(Construction c, std::optional<ArmId> third) {
  const int n = c == Construction::kEq6 ? 3 : 4;
  PoolAllocation pools;
  pools.n_arms = n;
  pools.pools.push_back({0});
  std::vector<ArmId> rest;
  for (ArmId a = 1; a < n; ++a) rest.push_back(a);
  pools.pools.push_back(rest);
  if (third) pools.pools.push_back({*third});
  return pools;
}

Eigen::Vector2d analytic_theta_star(Construction c, std::span<const double> rbar,
                                    TrainingMode mode) {
  check_rbar(c, rbar);
  const auto r = [&](int i) { return rbar[static_cast<std::size_t>(i - 1)]; };
  if (mode == TrainingMode::kChosen)
    throw std::invalid_argument("analytic_theta_star: train-on-chosen has no closed form here");
  const bool all = mode == TrainingMode::kAll;
  if (c == Construction::kEq6)
    return all ? Eigen::Vector2d(r(2), (r(3) - r(1)) / 2.0) : Eigen::Vector2d(r(2), r(3));
  return all ? Eigen::Vector2d(r(3), (r(4) - r(2) - r(1)) / 3.0)
             : Eigen::Vector2d(r(3), (r(4) - r(2)) / 2.0);
}

Eigen::VectorXd limit_theta(const Eigen::MatrixXd& x, const Eigen::VectorXd& rbar,
                            std::span<const int> columns, const Eigen::VectorXd& weights) {
  const Eigen::MatrixXd xs = restrict_columns(x, columns);
  const Eigen::MatrixXd gram = xs.transpose() * weights.asDiagonal() * xs;
  const Eigen::VectorXd moment = xs.transpose() * weights.cwiseProduct(rbar);
  return gram.fullPivLu().solve(moment);
}

Eigen::VectorXd limit_weights(Construction c, TrainingMode mode) {
  const int n = c == Construction::kEq6 ? 3 : 4;
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  if (mode == TrainingMode::kOwn) w[0] = 0.0;
  else if (mode == TrainingMode::kChosen)
    throw std::invalid_argument("limit_weights: train-on-chosen is not supported");
  return w;
}

ArmId induced_argmax(Construction c, const Eigen::Vector2d& theta) {
  const Eigen::MatrixXd xs = restrict_columns(construction_matrix(c), nominator_columns(c));
  ArmId best = 1;
  for (ArmId a = 2; a < xs.rows(); ++a)
    if (xs.row(a).dot(theta) > xs.row(best).dot(theta)) best = a;
  return best;
}

SupervisedReport supervised_limit_check(Construction c, std::span<const double> rbar,
                                        TrainingMode mode, std::int64_t T, double lambda,
                                        RewardNoise noise, std::uint64_t seed) {
  check_rbar(c, rbar);
  const ConstructionKind kind =
      c == Construction::kEq6 ? ConstructionKind::kEq6Supervised : ConstructionKind::kEq7Supervised;
  const FixedConstructionEnv env(kind, std::vector<double>(rbar.begin(), rbar.end()), noise, seed);
  const std::vector<int> cols = nominator_columns(c);
  const Eigen::MatrixXd xs = restrict_columns(env.matrix(), cols);
  const Eigen::VectorXd w = limit_weights(c, mode);

  RidgeState ridge = RidgeState::with_input_scaling(2, lambda);
  for (std::int64_t t = 1; t <= T; ++t) {
    const Round round = env.sample_round(t);
    for (Eigen::Index a = 0; a < xs.rows(); ++a)
      ridge.update(xs.row(a).transpose(), round.rewards[a], w[a]);
  }
  ridge.resolve();

  SupervisedReport rep;
  rep.construction = c;
  rep.mode = mode;
  rep.rounds = T;
  rep.theta_hat = ridge.theta();
  rep.theta_star = analytic_theta_star(c, rbar, mode);
  rep.max_abs_error = (rep.theta_hat - rep.theta_star).cwiseAbs().maxCoeff();
  rep.argmax_arm = induced_argmax(c, rep.theta_hat);
  rep.optimal_arm = 1;
  for (ArmId a = 2; a < static_cast<ArmId>(rbar.size()); ++a)
    if (rbar[static_cast<std::size_t>(a)] > rbar[static_cast<std::size_t>(rep.optimal_arm)])
      rep.optimal_arm = a;
  return rep;
}

ArmId third_nominator_arm(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::kOwn: return 1;
    case TrainingMode::kAll: return 3;
    case TrainingMode::kChosen: break;
  }
  throw ConfigError("no third-nominator arm is defined for train-on-chosen");
}

std::vector<std::int64_t> log_grid(std::int64_t T, int points) {
  std::vector<std::int64_t> grid;
  if (T < 1) return grid;
  points = std::max(points, 2);
  const double top = std::log(static_cast<double>(T));
  for (int k = 0; k < points; ++k) {
    auto t = static_cast<std::int64_t>(std::llround(std::exp(top * k / (points - 1))));
    t = std::clamp<std::int64_t>(t, 1, T);
    if (grid.empty() || t > grid.back()) grid.push_back(t);
  }
  if (grid.back() != T) grid.push_back(T);
  return grid;
}

BanditDemoReport bandit_regret_demo(const BanditDemoParams& p) {
  const Construction c = Construction::kEq7;
  check_rbar(c, p.rbar);
  const FixedConstructionEnv env(ConstructionKind::kEq7Bandit, p.rbar, p.noise,
                                 derive_seed({p.seed, 0}));

  std::optional<ArmId> third;
  if (p.third_nominator) third = third_nominator_arm(p.mode);
  PoolAllocation pools = counterexample_pools(c, third);
  FeatureAllocation feats;
  feats.d = 4;
  feats.subsets.assign(pools.pools.size(), nominator_columns(c));
  std::vector<Agent> noms;
  for (std::size_t n = 0; n < pools.pools.size(); ++n) noms.emplace_back(p.nominator_kind, 2, p.agent);
  TwoStageSystem sys(Agent(p.ranker_kind, 4, p.agent), std::move(noms), std::move(pools),
                     std::move(feats), p.mode, derive_seed({p.seed, 1}));

  BanditDemoReport rep;
  rep.params = p;
  rep.grid = log_grid(p.T, p.grid_points);
  RegretLedger ledger(false);
  std::size_t next = 0;
  std::int64_t covered = 0, late = 0;
  for (std::int64_t t = 1; t <= p.T; ++t) {
    sys.step(env.sample_round(t), ledger);
    if (2 * t > p.T) {
      ++late;
      covered += ledger.last().regret_nom == 0.0;
    }
    if (next < rep.grid.size() && rep.grid[next] == t) {
      const double td = static_cast<double>(t);
      rep.regret_2s_slope.push_back(ledger.cum_2s() / td);
      rep.regret_nom_slope.push_back(ledger.cum_nom() / td);
      rep.regret_rank_slope.push_back(ledger.cum_rank() / td);
      rep.theta_trace.push_back(nominator_theta(sys.nominators()[1]));
      ++next;
    }
  }
  rep.theta_hat = nominator_theta(sys.nominators()[1]);
  rep.theta_star = analytic_theta_star(c, p.rbar, p.mode == TrainingMode::kChosen
                                                      ? TrainingMode::kOwn
                                                      : p.mode);
  rep.argmax_arm = induced_argmax(c, rep.theta_hat);
  rep.max_round_residual = ledger.max_round_residual();
  rep.cumulative_residual = ledger.cumulative_residual();
  rep.min_round_regret_nom = ledger.min_round_regret_nom();
  rep.late_coverage = late ? static_cast<double>(covered) / static_cast<double>(late) : 0.0;
  return rep;
}

ConvergenceReport lemma2_convergence_check(const BanditDemoReport& report, double start_fraction) {
  ConvergenceReport out;
  if (report.grid.empty()) return out;
  out.final_error = (report.theta_trace.back() - report.theta_star).cwiseAbs().maxCoeff();
  out.expected_sign = report.theta_star[1] > 0 ? 1 : (report.theta_star[1] < 0 ? -1 : 0);
  out.from_t = static_cast<std::int64_t>(std::ceil(start_fraction * static_cast<double>(report.params.T)));
  out.sign_stable = true;
  for (std::size_t i = 0; i < report.grid.size(); ++i) {
    const double v = report.theta_trace[i][1];
    const int sign = v > 0 ? 1 : (v < 0 ? -1 : 0);
    if (sign != out.expected_sign) {
      out.stable_since = -1;
      if (report.grid[i] >= out.from_t) out.sign_stable = false;
    } else if (out.stable_since < 0) {
      out.stable_since = report.grid[i];
    }
  }
  return out;
}

RidgeConsistencyReport ridge_consistency_trace(int d, std::int64_t T, int grid_points,
                                               double lambda, std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x6c656d6d61ULL}));
  std::normal_distribution<double> normal;
  Eigen::MatrixXd l = Eigen::MatrixXd::Identity(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < i; ++j) l(i, j) = 0.2 * normal(rng) / std::sqrt(d);
  Eigen::VectorXd theta(d);
  for (auto& v : theta) v = normal(rng);
  theta.normalize();

  RidgeConsistencyReport rep;
  rep.grid = log_grid(T, grid_points);
  rep.theta_limit = theta;
  RidgeState ridge = RidgeState::with_input_scaling(d, lambda);
  Eigen::VectorXd z(d);
  std::size_t next = 0;
  for (std::int64_t t = 1; t <= T; ++t) {
    for (auto& v : z) v = normal(rng);
    const Eigen::VectorXd x = l * z;
    ridge.update(x, x.dot(theta) + normal(rng));
    if (next < rep.grid.size() && rep.grid[next] == t) {
      rep.error.push_back((ridge.theta() - theta).norm());
      ++next;
    }
  }
  return rep;
}

}  // namespace twostage
