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

#include "twostage/twostage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "twostage/error.hpp"

namespace twostage {

namespace {

// Knuth's TwoSum: s + e == a + b exactly.
inline void two_sum(double a, double b, double& s, double& e) {
  s = a + b;
  const double bb = s - a;
  e = (a - (s - bb)) + (b - bb);
}

constexpr std::int64_t kCoverageChunk = 1 << 14;

std::int64_t coverage_chunk(int n_pools, int arms_per_pool, double frac,
                            std::uint64_t seed, std::int64_t chunk, std::int64_t count) {
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(chunk)}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, arms_per_pool - 1);
  std::vector<char> optimal(static_cast<std::size_t>(arms_per_pool));
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < count; ++i) {
    bool covered = false;
    for (int n = 0; n < n_pools; ++n) {
      for (auto& o : optimal) o = u(rng) < frac;
      covered |= optimal[static_cast<std::size_t>(pick(rng))] != 0;
    }
    hits += covered;
  }
  return hits;
}

void check_coverage_args(int n_pools, double frac, std::int64_t trials, int arms_per_pool) {
  if (n_pools < 1 || arms_per_pool < 1 || trials < 1)
    throw std::invalid_argument("coverage: pools, arms and trials must be positive");
  if (!(frac > 0.0 && frac < 1.0))
    throw std::invalid_argument("coverage: frac_optimal must lie in (0, 1)");
}

}  // namespace

// ---------------------------------------------------------------------------

bool PoolAllocation::contains(int pool, ArmId a) const {
  const auto& p = pools[static_cast<std::size_t>(pool)];
  return std::find(p.begin(), p.end(), a) != p.end();
}

bool PoolAllocation::disjoint() const {
  std::vector<int> seen(static_cast<std::size_t>(n_arms), 0);
  for (const auto& p : pools)
    for (ArmId a : p)
      if (a >= 0 && a < n_arms && seen[static_cast<std::size_t>(a)]++) return false;
  return true;
}

void PoolAllocation::validate() const {
  if (pools.empty()) throw ConfigError("pool allocation: no pools");
  std::vector<char> covered(static_cast<std::size_t>(n_arms), 0);
  for (const auto& p : pools) {
    if (p.empty()) throw ConfigError("pool allocation: empty pool");
    for (ArmId a : p) {
      if (a < 0 || a >= n_arms)
        throw ConfigError("pool allocation: arm " + std::to_string(a) + " out of range");
      covered[static_cast<std::size_t>(a)] = 1;
    }
  }
  if (std::find(covered.begin(), covered.end(), 0) != covered.end())
    throw ConfigError("pool allocation: pools do not cover every arm");
}

std::vector<int> PoolAllocation::owner() const {
  if (!disjoint()) throw std::logic_error("owner() requires disjoint pools");
  std::vector<int> out(static_cast<std::size_t>(n_arms), -1);
  for (std::size_t n = 0; n < pools.size(); ++n)
    for (ArmId a : pools[n]) out[static_cast<std::size_t>(a)] = static_cast<int>(n);
  return out;
}

PoolAllocation pool_allocate(int n_arms, int n_pools, Rng& rng) {
  if (n_pools < 1 || n_pools > n_arms)
    throw ConfigError("pool_allocate: need 1 <= N <= n_arms (N=" + std::to_string(n_pools) +
                      ", n_arms=" + std::to_string(n_arms) + ")");
  std::vector<ArmId> perm(static_cast<std::size_t>(n_arms));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const int base = n_arms / n_pools;
  PoolAllocation out;
  out.n_arms = n_arms;
  out.pools.resize(static_cast<std::size_t>(n_pools));
  std::size_t next = 0;
  for (auto& p : out.pools)
    for (int i = 0; i < base; ++i) p.push_back(perm[next++]);
  for (std::size_t n = 0; next < perm.size(); ++n) out.pools[n].push_back(perm[next++]);
  return out;
}

void FeatureAllocation::validate() const {
  for (const auto& s : subsets) {
    if (s.empty()) throw ConfigError("feature allocation: empty subset");
    for (int j : s)
      if (j < 0 || j >= d) throw ConfigError("feature allocation: index out of range");
    std::vector<int> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ConfigError("feature allocation: repeated index");
  }
}

FeatureAllocation feature_allocate(int d, int s, int n, Rng& rng) {
  if (s < 1 || s > d)
    throw ConfigError("feature_allocate: need 1 <= s <= d (s=" + std::to_string(s) +
                      ", d=" + std::to_string(d) + ")");
  if (n < 1) throw ConfigError("feature_allocate: need at least one subset");
  std::vector<int> perm(static_cast<std::size_t>(d));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const int base = std::min(s, d / n);
  FeatureAllocation out;
  out.d = d;
  out.subsets.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    auto& subset = out.subsets[static_cast<std::size_t>(k)];
    subset.assign(perm.begin() + k * base, perm.begin() + (k + 1) * base);
    if (base < s) {
      std::vector<int> rest;
      rest.reserve(static_cast<std::size_t>(d - base));
      for (int j = 0; j < d; ++j)
        if (std::find(subset.begin(), subset.end(), j) == subset.end()) rest.push_back(j);
      std::shuffle(rest.begin(), rest.end(), rng);
      subset.insert(subset.end(), rest.begin(), rest.begin() + (s - base));
    }
    std::sort(subset.begin(), subset.end());
  }
  return out;
}

TrainingMode parse_training_mode(const std::string& name) {
  if (name == "train-on-all" || name == "all") return TrainingMode::kAll;
  if (name == "train-on-own" || name == "own") return TrainingMode::kOwn;
  if (name == "train-on-chosen" || name == "chosen") return TrainingMode::kChosen;
  throw ConfigError("unknown training mode '" + name + "'");
}

std::string to_string(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::kAll: return "train-on-all";
    case TrainingMode::kOwn: return "train-on-own";
    case TrainingMode::kChosen: return "train-on-chosen";
  }
  return "?";
}

double training_weight(TrainingMode mode, const PoolAllocation& pools, int nominator,
                       ArmId served, ArmId nominated) {
  switch (mode) {
    case TrainingMode::kAll: return 1.0;
    case TrainingMode::kOwn: return pools.contains(nominator, served) ? 1.0 : 0.0;
    case TrainingMode::kChosen: return served == nominated ? 1.0 : 0.0;
  }
  return 0.0;
}

// ---------------------------------------------------------------------------

void ExactSum::add(double hi, double lo) {
  double s, e;
  two_sum(hi_, hi, s, e);
  e += lo_ + lo;
  hi_ = s + e;
  lo_ = e - (hi_ - s);
}

const LedgerRecord& RegretLedger::record(std::int64_t t, const Eigen::VectorXd& expected,
                                         std::span<const ArmId> nominations,
                                         ArmId chosen, double realized_reward) {
  LedgerRecord rec;
  rec.t = t;
  rec.chosen = chosen;
  rec.reward = realized_reward;
  if (chosen < 0 || chosen >= expected.size())
    throw std::invalid_argument("ledger: served arm out of range");
  rec.optimal = expected.maxCoeff();
  rec.served = expected[chosen];
  if (nominations.empty()) {
    // Single-stage: the candidate pool is every arm.
    Eigen::Index best;
    expected.maxCoeff(&best);
    rec.best_candidate = expected[chosen] >= rec.optimal ? chosen : static_cast<ArmId>(best);
  } else {
    for (ArmId a : nominations) {
      auto it = std::find(rec.candidates.begin(), rec.candidates.end(), a);
      if (it == rec.candidates.end()) {
        rec.candidates.push_back(a);
        rec.multiplicity.push_back(1);
      } else {
        ++rec.multiplicity[static_cast<std::size_t>(it - rec.candidates.begin())];
      }
    }
    if (std::find(rec.candidates.begin(), rec.candidates.end(), chosen) == rec.candidates.end())
      throw std::invalid_argument("ledger: served arm was not nominated");
    rec.best_candidate = chosen;
    for (ArmId a : rec.candidates)
      if (expected[a] > expected[rec.best_candidate]) rec.best_candidate = a;
  }
  rec.best_in_pool = expected[rec.best_candidate];

  double h2s, l2s, hn, ln, hr, lr;
  two_sum(rec.optimal, -rec.served, h2s, l2s);
  two_sum(rec.optimal, -rec.best_in_pool, hn, ln);
  two_sum(rec.best_in_pool, -rec.served, hr, lr);
  rec.regret_2s = h2s + l2s;
  rec.regret_nom = hn + ln;
  rec.regret_rank = hr + lr;

  ExactSum residual;
  residual.add(h2s, l2s);
  residual.add(-hn, -ln);
  residual.add(-hr, -lr);
  max_round_residual_ = std::max(max_round_residual_, std::abs(residual.value()));
  min_regret_nom_ = rounds_ == 0 ? rec.regret_nom : std::min(min_regret_nom_, rec.regret_nom);

  cum_2s_.add(h2s, l2s);
  cum_nom_.add(hn, ln);
  cum_rank_.add(hr, lr);
  cum_reward_ += realized_reward;
  ++rounds_;
  last_ = rec;
  if (keep_records_) {
    records_.push_back(std::move(rec));
    cum_rows_.push_back(cum_2s_.value());
    cum_rows_.push_back(cum_nom_.value());
    cum_rows_.push_back(cum_rank_.value());
  }
  return last_;
}

double RegretLedger::cumulative_residual() const {
  ExactSum r;
  r.add(cum_2s_.hi(), cum_2s_.lo());
  r.add(-cum_nom_.hi(), -cum_nom_.lo());
  r.add(-cum_rank_.hi(), -cum_rank_.lo());
  return std::abs(r.value());
}

void RegretLedger::write_csv(std::ostream& out, const std::string& run_id,
                             std::uint64_t seed) const {
  out << kLedgerCsvHeader << '\n';
  char buf[512];
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const LedgerRecord& r = records_[i];
    std::snprintf(buf, sizeof buf,
                  "%s,%llu,%lld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  run_id.c_str(), static_cast<unsigned long long>(seed),
                  static_cast<long long>(r.t), r.chosen, r.reward, r.regret_2s,
                  r.regret_nom, r.regret_rank, cum_rows_[3 * i], cum_rows_[3 * i + 1],
                  cum_rows_[3 * i + 2]);
    out << buf;
  }
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd restrict_columns(const Eigen::MatrixXd& contexts,
                                 std::span<const int> columns) {
  Eigen::MatrixXd out(contexts.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = contexts.col(columns[j]);
  return out;
}

SingleStageSystem::SingleStageSystem(Agent agent, std::vector<int> features, int n_arms,
                                     std::uint64_t seed)
    : agent_(std::move(agent)), features_(std::move(features)), rng_(seed) {
  arms_.resize(static_cast<std::size_t>(n_arms));
  std::iota(arms_.begin(), arms_.end(), 0);
}

ArmId SingleStageSystem::step(const Round& round, RegretLedger& ledger) {
  const Eigen::MatrixXd& full = round.contexts.features;
  Eigen::MatrixXd restricted;
  const Eigen::MatrixXd& x = features_.empty() ? full : (restricted = restrict_columns(full, features_));
  const ArmId a = agent_.select(x, arms_, rng_);
  const double r = round.rewards[a];
  agent_.update(x, arms_, a, r, 1.0);
  ledger.record(round.contexts.t, round.expected, {}, a, r);
  return a;
}

std::string SingleStageSystem::label() const {
  return std::string(1, agent_letter(agent_.kind()));
}

TwoStageSystem::TwoStageSystem(Agent ranker, std::vector<Agent> nominators,
                               PoolAllocation pools, FeatureAllocation features,
                               TrainingMode mode, std::uint64_t seed)
    : ranker_(std::move(ranker)),
      nominators_(std::move(nominators)),
      pools_(std::move(pools)),
      features_(std::move(features)),
      mode_(mode),
      rng_(seed) {
  pools_.validate();
  features_.validate();
  if (nominators_.empty()) throw ConfigError("two-stage system needs nominators");
  if (static_cast<int>(nominators_.size()) != pools_.n_pools() ||
      nominators_.size() != features_.subsets.size())
    throw ConfigError("two-stage system: nominator, pool and feature counts differ");
  for (std::size_t n = 0; n < nominators_.size(); ++n)
    if (nominators_[n].dim() != static_cast<int>(features_.subsets[n].size()))
      throw ConfigError("two-stage system: nominator dimension does not match its features");
  nominations_.resize(nominators_.size());
  restricted_.resize(nominators_.size());
}

ArmId TwoStageSystem::step(const Round& round, RegretLedger& ledger) {
  const Eigen::MatrixXd& x = round.contexts.features;
  for (std::size_t n = 0; n < nominators_.size(); ++n) {
    restricted_[n] = restrict_columns(x, features_.subsets[n]);
    nominations_[n] = nominators_[n].select(restricted_[n], pools_.pools[n], rng_);
  }
  std::vector<ArmId> candidates;
  for (ArmId a : nominations_)
    if (std::find(candidates.begin(), candidates.end(), a) == candidates.end())
      candidates.push_back(a);

  const ArmId served = ranker_.select(x, candidates, rng_);
  const double r = round.rewards[served];
  ranker_.update(x, candidates, served, r, 1.0);
  for (std::size_t n = 0; n < nominators_.size(); ++n) {
    const double w = training_weight(mode_, pools_, static_cast<int>(n), served, nominations_[n]);
    if (w != 0.0) nominators_[n].update(restricted_[n], pools_.pools[n], served, r, w);
  }
  ledger.record(round.contexts.t, round.expected, nominations_, served, r);
  return served;
}

std::string TwoStageSystem::label() const {
  return std::string(1, agent_letter(ranker_.kind())) + "+" +
         agent_letter(nominators_.front().kind());
}

RegretLedger run_experiment(const Environment& env, System& system, std::int64_t T,
                            bool keep_records) {
  RegretLedger ledger(keep_records);
  for (std::int64_t t = 1; t <= T; ++t) system.step(env.sample_round(t), ledger);
  return ledger;
}

std::optional<double> relative_regret(double regret, std::span<const double> uniform) {
  if (uniform.empty()) return std::nullopt;
  const double mean =
      std::accumulate(uniform.begin(), uniform.end(), 0.0) / static_cast<double>(uniform.size());
  if (mean == 0.0 || !std::isfinite(mean)) return std::nullopt;
  return regret / mean;
}

std::optional<double> relative_regret(const RegretLedger& ledger,
                                      std::span<const RegretLedger> uniform_ledgers) {
  std::vector<double> u;
  for (const auto& l : uniform_ledgers) {
    if (l.rounds() != ledger.rounds())
      throw std::invalid_argument("relative_regret: horizons differ");
    u.push_back(l.cum_2s());
  }
  return relative_regret(ledger.cum_2s(), u);
}

double candidate_coverage_probability(int n_pools, double frac_optimal,
                                      std::int64_t trials, std::uint64_t seed,
                                      int arms_per_pool) {
  check_coverage_args(n_pools, frac_optimal, trials, arms_per_pool);
  const std::int64_t chunks = (trials + kCoverageChunk - 1) / kCoverageChunk;
  std::int64_t hits = 0;
#pragma omp parallel for schedule(static) reduction(+ : hits)
  for (std::int64_t c = 0; c < chunks; ++c) {
    const std::int64_t count = std::min(kCoverageChunk, trials - c * kCoverageChunk);
    hits += coverage_chunk(n_pools, arms_per_pool, frac_optimal, seed, c, count);
  }
  return static_cast<double>(hits) / static_cast<double>(trials);
}

double candidate_coverage_probability_serial(int n_pools, double frac_optimal,
                                             std::int64_t trials, std::uint64_t seed,
                                             int arms_per_pool) {
  check_coverage_args(n_pools, frac_optimal, trials, arms_per_pool);
  std::int64_t hits = 0;
  for (std::int64_t c = 0; c * kCoverageChunk < trials; ++c)
    hits += coverage_chunk(n_pools, arms_per_pool, frac_optimal, seed, c,
                           std::min(kCoverageChunk, trials - c * kCoverageChunk));
  return static_cast<double>(hits) / static_cast<double>(trials);
}

}  // namespace twostage
