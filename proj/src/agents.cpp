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

#include "twostage/agents.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "twostage/error.hpp"

namespace twostage {

namespace {

void check_eligible(std::span<const ArmId> eligible, const Eigen::MatrixXd& contexts) {
  if (eligible.empty()) throw std::invalid_argument("selection over an empty arm set");
  for (ArmId a : eligible)
    if (a < 0 || a >= contexts.rows())
      throw std::invalid_argument("eligible arm " + std::to_string(a) + " has no context row");
}

}  // namespace

RidgeState::RidgeState(int dim, double lambda_effective) : lambda_(lambda_effective) {
  if (dim < 1) throw std::invalid_argument("RidgeState: dim must be >= 1");
  if (!(lambda_effective > 0.0) || !std::isfinite(lambda_effective))
    throw std::invalid_argument("RidgeState: lambda must be positive");
  gram_ = lambda_ * Eigen::MatrixXd::Identity(dim, dim);
  sigma_ = Eigen::MatrixXd::Identity(dim, dim) / lambda_;
  xr_ = Eigen::VectorXd::Zero(dim);
  theta_ = Eigen::VectorXd::Zero(dim);
}

RidgeState RidgeState::with_input_scaling(int dim, double base_lambda) {
  return RidgeState(dim, base_lambda * dim);
}

void RidgeState::update(const Eigen::Ref<const Eigen::VectorXd>& x, double r, double w) {
  if (x.size() != theta_.size())
    throw std::invalid_argument("RidgeState::update: dimension mismatch");
  if (!x.allFinite() || !std::isfinite(r) || !std::isfinite(w))
    throw std::invalid_argument("RidgeState::update: non-finite input");
  if (w < 0.0) throw std::invalid_argument("RidgeState::update: negative weight");
  if (w == 0.0) return;
  gram_.noalias() += w * x * x.transpose();
  xr_.noalias() += (w * r) * x;
  ++n_obs_;
  if (++since_resolve_ >= kResolveInterval) {
    resolve();
    return;
  }
  const Eigen::VectorXd sx = sigma_ * x;
  sigma_.noalias() -= (w / (1.0 + w * x.dot(sx))) * sx * sx.transpose();
  theta_.noalias() = sigma_ * xr_;
}

void RidgeState::resolve() {
  const Eigen::Index d = gram_.rows();
  sigma_ = gram_.llt().solve(Eigen::MatrixXd::Identity(d, d));
  sigma_ = 0.5 * (sigma_ + sigma_.transpose()).eval();
  theta_.noalias() = sigma_ * xr_;
  since_resolve_ = 0;
}

RidgeState ridge_update(RidgeState state, const Eigen::Ref<const Eigen::VectorXd>& x,
                        double r, double w) {
  state.update(x, r, w);
  return state;
}

int argmax_uniform_ties(std::span<const double> scores, Rng& rng) {
  if (scores.empty()) throw std::invalid_argument("argmax over an empty score set");
  const double best = *std::max_element(scores.begin(), scores.end());
  int n_ties = 0;
  int first = -1;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] >= best - kTieTolerance) {
      if (first < 0) first = static_cast<int>(i);
      ++n_ties;
    }
  if (n_ties == 1) return first;
  int k = std::uniform_int_distribution<int>(0, n_ties - 1)(rng);
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] >= best - kTieTolerance && k-- == 0) return static_cast<int>(i);
  return first;
}

ArmId ucb_select(const RidgeState& state, const UcbParams& params,
                 const Eigen::MatrixXd& contexts, std::span<const ArmId> eligible,
                 Rng& rng) {
  check_eligible(eligible, contexts);
  if (contexts.cols() != state.dim())
    throw std::invalid_argument("ucb_select: context width does not match model");
  std::vector<double> scores(eligible.size());
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    const auto x = contexts.row(eligible[i]).transpose();
    double score = state.theta().dot(x);
    if (params.alpha != 0.0) {
      const double quad = x.dot(state.sigma() * x);
      score += params.alpha * std::sqrt(std::max(quad, 0.0));
    }
    scores[i] = score;
  }
  return eligible[static_cast<std::size_t>(argmax_uniform_ties(scores, rng))];
}

ArmId greedy_select(const RidgeState& state, const Eigen::MatrixXd& contexts,
                    std::span<const ArmId> eligible, Rng& rng) {
  check_eligible(eligible, contexts);
  if (contexts.cols() != state.dim())
    throw std::invalid_argument("greedy_select: context width does not match model");
  std::vector<double> scores(eligible.size());
  for (std::size_t i = 0; i < eligible.size(); ++i)
    scores[i] = contexts.row(eligible[i]).dot(state.theta());
  return eligible[static_cast<std::size_t>(argmax_uniform_ties(scores, rng))];
}

Eigen::VectorXd pg_probabilities(const PgState& state, const Eigen::MatrixXd& contexts,
                                 std::span<const ArmId> eligible) {
  check_eligible(eligible, contexts);
  Eigen::VectorXd logits(static_cast<Eigen::Index>(eligible.size()));
  for (std::size_t i = 0; i < eligible.size(); ++i)
    logits[static_cast<Eigen::Index>(i)] = contexts.row(eligible[i]).dot(state.theta);
  const double m = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - m).exp();
  return p / p.sum();
}

Eigen::VectorXd pg_gradient(const PgState& state, const Eigen::MatrixXd& contexts,
                            ArmId chosen, double r, std::span<const ArmId> eligible) {
  if (std::find(eligible.begin(), eligible.end(), chosen) == eligible.end())
    throw std::invalid_argument("pg_update: chosen arm is not eligible");
  const Eigen::VectorXd p = pg_probabilities(state, contexts, eligible);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(contexts.cols());
  for (std::size_t i = 0; i < eligible.size(); ++i)
    mean += p[static_cast<Eigen::Index>(i)] * contexts.row(eligible[i]).transpose();
  return r * (contexts.row(chosen).transpose() - mean);
}

void pg_update(PgState& state, const Eigen::MatrixXd& contexts, ArmId chosen, double r,
               std::span<const ArmId> eligible) {
  if (r == 0.0) {
    if (std::find(eligible.begin(), eligible.end(), chosen) == eligible.end())
      throw std::invalid_argument("pg_update: chosen arm is not eligible");
    return;
  }
  state.theta += state.learning_rate * pg_gradient(state, contexts, chosen, r, eligible);
}

ArmId pg_select(const PgState& state, const Eigen::MatrixXd& contexts,
                std::span<const ArmId> eligible, Rng& rng) {
  const Eigen::VectorXd p = pg_probabilities(state, contexts, eligible);
  std::discrete_distribution<int> pick(p.data(), p.data() + p.size());
  return eligible[static_cast<std::size_t>(pick(rng))];
}

ArmId uniform_select(std::span<const ArmId> eligible, Rng& rng) {
  if (eligible.empty()) throw std::invalid_argument("selection over an empty arm set");
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
  return eligible[pick(rng)];
}

AgentKind parse_agent_kind(const std::string& name) {
  if (name == "ucb" || name == "U") return AgentKind::kUcb;
  if (name == "greedy" || name == "G") return AgentKind::kGreedy;
  if (name == "pg" || name == "P") return AgentKind::kPolicyGradient;
  if (name == "uniform" || name == "random" || name == "R") return AgentKind::kUniform;
  throw ConfigError("unknown agent kind '" + name + "'");
}

std::string to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::kUcb: return "ucb";
    case AgentKind::kGreedy: return "greedy";
    case AgentKind::kPolicyGradient: return "pg";
    case AgentKind::kUniform: return "uniform";
  }
  return "?";
}

char agent_letter(AgentKind kind) {
  switch (kind) {
    case AgentKind::kUcb: return 'U';
    case AgentKind::kGreedy: return 'G';
    case AgentKind::kPolicyGradient: return 'P';
    case AgentKind::kUniform: return 'R';
  }
  return '?';
}

Agent::Agent(AgentKind kind, int dim, const AgentParams& params)
    : kind_(kind), dim_(dim), ucb_{params.alpha, params.lambda} {
  switch (kind) {
    case AgentKind::kUcb:
    case AgentKind::kGreedy:
      ridge_.emplace(RidgeState::with_input_scaling(dim, params.lambda));
      break;
    case AgentKind::kPolicyGradient:
      if (!(params.pg_learning_rate > 0.0))
        throw ConfigError("policy gradient learning rate must be positive");
      pg_.emplace(PgState{Eigen::VectorXd::Zero(dim), params.pg_learning_rate});
      break;
    case AgentKind::kUniform:
      break;
  }
}

ArmId Agent::select(const Eigen::MatrixXd& contexts, std::span<const ArmId> eligible,
                    Rng& rng) const {
  switch (kind_) {
    case AgentKind::kUcb: return ucb_select(*ridge_, ucb_, contexts, eligible, rng);
    case AgentKind::kGreedy: return greedy_select(*ridge_, contexts, eligible, rng);
    case AgentKind::kPolicyGradient: return pg_select(*pg_, contexts, eligible, rng);
    case AgentKind::kUniform: return uniform_select(eligible, rng);
  }
  return eligible.front();
}

void Agent::update(const Eigen::MatrixXd& contexts, std::span<const ArmId> eligible,
                   ArmId chosen, double r, double w) {
  if (w == 0.0) return;
  ++n_updates_;
  switch (kind_) {
    case AgentKind::kUcb:
    case AgentKind::kGreedy:
      ridge_->update(contexts.row(chosen).transpose(), r, w);
      break;
    case AgentKind::kPolicyGradient: {
      if (std::find(eligible.begin(), eligible.end(), chosen) != eligible.end()) {
        pg_update(*pg_, contexts, chosen, w * r, eligible);
      } else {
        std::vector<ArmId> support(eligible.begin(), eligible.end());
        support.push_back(chosen);
        pg_update(*pg_, contexts, chosen, w * r, support);
      }
      break;
    }
    case AgentKind::kUniform:
      break;
  }
}

}  // namespace twostage
