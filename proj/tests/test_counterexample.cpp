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

#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "twostage/counterexample.hpp"
#include "twostage/error.hpp"

using namespace twostage;

namespace {

const std::vector<double> kEq6Rbar = {0.25, 0.5, 1.0};
const std::vector<double> kEq7Rbar = {0.75, 1.0, 1.0 / 6.0, 0.875};

Eigen::VectorXd as_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

TEST_SUITE("counterexample") {

TEST_CASE("closed-form limits agree with the weighted normal equations") {
  for (Construction c : {Construction::kEq6, Construction::kEq7}) {
    const auto& rbar = c == Construction::kEq6 ? kEq6Rbar : kEq7Rbar;
    const auto cols = nominator_columns(c);
    for (TrainingMode m : {TrainingMode::kAll, TrainingMode::kOwn}) {
      const Eigen::VectorXd lim =
          limit_theta(construction_matrix(c), as_vec(rbar), cols, limit_weights(c, m));
      const Eigen::Vector2d closed = analytic_theta_star(c, rbar, m);
      CHECK((lim - closed).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("hand values and induced argmax verdicts") {
  const Eigen::Vector2d a6 = analytic_theta_star(Construction::kEq6, kEq6Rbar, TrainingMode::kAll);
  CHECK(a6[0] == doctest::Approx(0.5));
  CHECK(a6[1] == doctest::Approx(0.375));
  CHECK(induced_argmax(Construction::kEq6, a6) == 1);
  const Eigen::Vector2d o6 = analytic_theta_star(Construction::kEq6, kEq6Rbar, TrainingMode::kOwn);
  CHECK(o6[1] == doctest::Approx(1.0));
  CHECK(induced_argmax(Construction::kEq6, o6) == 2);

  const Eigen::Vector2d a7 = analytic_theta_star(Construction::kEq7, kEq7Rbar, TrainingMode::kAll);
  CHECK(a7[1] == doctest::Approx(-7.0 / 24.0));
  CHECK(induced_argmax(Construction::kEq7, a7) == 1);
  const Eigen::Vector2d o7 = analytic_theta_star(Construction::kEq7, kEq7Rbar, TrainingMode::kOwn);
  CHECK(o7[1] == doctest::Approx(-1.0 / 16.0));
  CHECK(induced_argmax(Construction::kEq7, o7) == 2);
}

TEST_CASE("unsupported inputs throw") {
  CHECK_THROWS_AS(analytic_theta_star(Construction::kEq6, kEq6Rbar, TrainingMode::kChosen),
                  std::invalid_argument);
  CHECK_THROWS_AS(limit_weights(Construction::kEq7, TrainingMode::kChosen), std::invalid_argument);
  CHECK_THROWS_AS(analytic_theta_star(Construction::kEq7, kEq6Rbar, TrainingMode::kAll),
                  std::invalid_argument);
  CHECK_THROWS_AS(third_nominator_arm(TrainingMode::kChosen), ConfigError);
  CHECK_THROWS_AS(parse_construction("eq8"), ConfigError);
}

TEST_CASE("pools and third nominator") {
  const auto p = counterexample_pools(Construction::kEq7);
  CHECK(p.pools == std::vector<std::vector<ArmId>>{{0}, {1, 2, 3}});
  CHECK(third_nominator_arm(TrainingMode::kOwn) == 1);
  CHECK(third_nominator_arm(TrainingMode::kAll) == 3);
  const auto q = counterexample_pools(Construction::kEq7, 3);
  CHECK(q.n_pools() == 3);
  CHECK(!q.disjoint());
  q.validate();
}

TEST_CASE("log grid") {
  const auto g = log_grid(1000, 4);
  CHECK(g == std::vector<std::int64_t>{1, 10, 100, 1000});
  CHECK(log_grid(0, 5).empty());
  CHECK(log_grid(1, 5) == std::vector<std::int64_t>{1});
  const auto dense = log_grid(5, 40);
  CHECK(dense == std::vector<std::int64_t>{1, 2, 3, 4, 5});
}

TEST_CASE("supervised check: noise-free own mode is exact") {
  const auto rep = supervised_limit_check(Construction::kEq6, kEq6Rbar, TrainingMode::kOwn, 200,
                                          1e-12, RewardNoise::kNone, 0);
  CHECK(rep.max_abs_error < 1e-9);
  CHECK(rep.argmax_arm == 2);
  CHECK(rep.optimal_arm == 2);
}

TEST_CASE("supervised check: small noisy run lands near the limit") {
  const auto rep = supervised_limit_check(Construction::kEq7, kEq7Rbar, TrainingMode::kAll, 5000,
                                          1e-6, RewardNoise::kBernoulli, 3);
  CHECK(rep.max_abs_error < 0.05);
  CHECK(rep.argmax_arm == 1);
}

TEST_CASE("bandit demo: decomposition is exact and the grid is filled") {
  BanditDemoParams p;
  p.T = 3000;
  p.grid_points = 10;
  const auto rep = bandit_regret_demo(p);
  CHECK(rep.grid.back() == 3000);
  CHECK(rep.regret_2s_slope.size() == rep.grid.size());
  CHECK(rep.theta_trace.size() == rep.grid.size());
  CHECK(rep.max_round_residual < 1e-12);
  CHECK(rep.min_round_regret_nom >= 0.0);
  for (std::size_t i = 0; i < rep.grid.size(); ++i)
    CHECK(rep.regret_2s_slope[i] ==
          doctest::Approx(rep.regret_nom_slope[i] + rep.regret_rank_slope[i]));
  const auto l2 = lemma2_convergence_check(rep);
  CHECK(l2.expected_sign != 0);
}

TEST_CASE("ridge consistency trace shrinks") {
  const auto rep = ridge_consistency_trace(5, 20000, 8, 1e-3, 1);
  REQUIRE(rep.error.size() == rep.grid.size());
  CHECK(rep.error.back() < rep.error.front());
  CHECK(rep.error.back() < 0.05);
}

}  // TEST_SUITE
