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

// Single-model bandit policies: ridge-regression UCB and Greedy, a softmax
// policy-gradient agent, and uniform random selection.

#ifndef TWOSTAGE_AGENTS_HPP_
#define TWOSTAGE_AGENTS_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twostage/env.hpp"
#include "twostage/rng.hpp"

namespace twostage {

// Scores within this distance of the maximum count as tied.
inline constexpr double kTieTolerance = 1e-12;

// Weighted ridge regression maintained incrementally:
//   sigma = (lambda I + sum_i w_i x_i x_i^T)^-1,  theta = sigma sum_i w_i r_i x_i.
// Sigma is updated by Sherman-Morrison and rebuilt from the Gram matrix every
// kResolveInterval absorbed observations.
class RidgeState {
 public:
  static constexpr int kResolveInterval = 1024;

  RidgeState(int dim, double lambda_effective);
  // The effective regularizer is base_lambda times the input dimension.
  static RidgeState with_input_scaling(int dim, double base_lambda);

  // No-op when w == 0. Throws std::invalid_argument on non-finite input or w < 0.
  void update(const Eigen::Ref<const Eigen::VectorXd>& x, double r, double w = 1.0);
  // Rebuilds sigma and theta from the accumulated sufficient statistics.
  void resolve();

  int dim() const { return static_cast<int>(theta_.size()); }
  double lambda() const { return lambda_; }
  std::int64_t n_obs() const { return n_obs_; }
  const Eigen::VectorXd& theta() const { return theta_; }
  const Eigen::MatrixXd& sigma() const { return sigma_; }
  const Eigen::MatrixXd& gram() const { return gram_; }
  const Eigen::VectorXd& moment() const { return xr_; }

 private:
  double lambda_;
  std::int64_t n_obs_ = 0;
  int since_resolve_ = 0;
  Eigen::MatrixXd gram_;
  Eigen::MatrixXd sigma_;
  Eigen::VectorXd xr_;
  Eigen::VectorXd theta_;
};

RidgeState ridge_update(RidgeState state, const Eigen::Ref<const Eigen::VectorXd>& x,
                        double r, double w = 1.0);

struct UcbParams {
  double alpha = 1e-2;
  double lambda = 1e-2;
};

// Uniform draw over the indices whose score is within kTieTolerance of the max.
int argmax_uniform_ties(std::span<const double> scores, Rng& rng);

// argmax over eligible of <theta, x_a> + alpha sqrt(x_a^T sigma x_a).
// `contexts` rows are indexed by arm id and restricted to the agent's features.
ArmId ucb_select(const RidgeState& state, const UcbParams& params,
                 const Eigen::MatrixXd& contexts, std::span<const ArmId> eligible,
                 Rng& rng);
ArmId greedy_select(const RidgeState& state, const Eigen::MatrixXd& contexts,
                    std::span<const ArmId> eligible, Rng& rng);

struct PgState {
  Eigen::VectorXd theta;
  double learning_rate = 1.0;
};

// Softmax policy over eligible arms, in the order of `eligible`.
Eigen::VectorXd pg_probabilities(const PgState& state, const Eigen::MatrixXd& contexts,
                                 std::span<const ArmId> eligible);
// r * grad log pi_chosen = r (x_chosen - sum_a pi_a x_a).
Eigen::VectorXd pg_gradient(const PgState& state, const Eigen::MatrixXd& contexts,
                            ArmId chosen, double r, std::span<const ArmId> eligible);
// One ascent step using only the last tuple.
void pg_update(PgState& state, const Eigen::MatrixXd& contexts, ArmId chosen, double r,
               std::span<const ArmId> eligible);
ArmId pg_select(const PgState& state, const Eigen::MatrixXd& contexts,
                std::span<const ArmId> eligible, Rng& rng);

ArmId uniform_select(std::span<const ArmId> eligible, Rng& rng);

enum class AgentKind { kUcb, kGreedy, kPolicyGradient, kUniform };

AgentKind parse_agent_kind(const std::string& name);
std::string to_string(AgentKind kind);
// One-letter tag used in system labels such as "U+G".
char agent_letter(AgentKind kind);

struct AgentParams {
  double lambda = 1e-2;  // before input-dimension scaling
  double alpha = 1e-2;
  double pg_learning_rate = 1.0;
};

// Type-erased agent used as a single-stage policy, ranker, or nominator.
class Agent {
 public:
  Agent(AgentKind kind, int dim, const AgentParams& params);

  ArmId select(const Eigen::MatrixXd& contexts, std::span<const ArmId> eligible,
               Rng& rng) const;
  // Absorbs the served tuple with weight w (w == 0 is a no-op). PG also needs
  // the arm set the policy normalises over; `chosen` is added when missing.
  void update(const Eigen::MatrixXd& contexts, std::span<const ArmId> eligible,
              ArmId chosen, double r, double w);

  AgentKind kind() const { return kind_; }
  int dim() const { return dim_; }
  const RidgeState* ridge() const { return ridge_ ? &*ridge_ : nullptr; }
  const PgState* pg() const { return pg_ ? &*pg_ : nullptr; }
  std::int64_t n_updates() const { return n_updates_; }

 private:
  AgentKind kind_;
  int dim_;
  UcbParams ucb_;
  std::optional<RidgeState> ridge_;
  std::optional<PgState> pg_;
  std::int64_t n_updates_ = 0;
};

}  // namespace twostage

#endif  // TWOSTAGE_AGENTS_HPP_
