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

#include "twostage/env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "twostage/error.hpp"

namespace twostage {

namespace {

Eigen::VectorXd random_unit_vector(int d, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(d);
  do {
    for (int i = 0; i < d; ++i) v[i] = normal(rng);
  } while (v.norm() == 0.0);
  return v / v.norm();
}

std::vector<int> random_subset(int d, int s, Rng& rng) {
  std::vector<int> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(s);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

// ---------------------------------------------------------------------------

SyntheticLinearEnv::SyntheticLinearEnv(int d, int n_arms, double noise_std,
                                       std::uint64_t seed)
    : d_(d), n_arms_(n_arms), noise_std_(noise_std), seed_(seed) {
  if (d < 1 || n_arms < 1)
    throw std::invalid_argument("SyntheticLinearEnv: d and n_arms must be >= 1");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
    throw std::invalid_argument("SyntheticLinearEnv: noise_std must be >= 0");
  Rng rng(derive_seed({seed, 0x7468657461ULL}));
  theta_star_ = random_unit_vector(d, rng);
}

Round SyntheticLinearEnv::sample_round(std::int64_t t) const {
  Rng rng = round_stream(seed_, static_cast<std::uint64_t>(t));
  std::normal_distribution<double> normal;
  Round round;
  round.contexts.t = t;
  round.contexts.features.resize(n_arms_, d_);
  for (int a = 0; a < n_arms_; ++a)
    for (int j = 0; j < d_; ++j) round.contexts.features(a, j) = normal(rng);
  round.expected = round.contexts.features * theta_star_;
  round.rewards = round.expected;
  if (noise_std_ > 0.0)
    for (int a = 0; a < n_arms_; ++a) round.rewards[a] += noise_std_ * normal(rng);
  return round;
}

// ---------------------------------------------------------------------------

bool MultiLabelDataset::has_label(int row, int category) const {
  const auto& l = labels[static_cast<std::size_t>(row)];
  return std::binary_search(l.begin(), l.end(), category);
}

void MultiLabelDataset::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw DataError("dataset: feature rows (" + std::to_string(features.rows()) +
                    ") != label rows (" + std::to_string(labels.size()) + ")");
  if (!features.allFinite()) throw DataError("dataset: non-finite feature value");
  for (const auto& l : labels) {
    if (!std::is_sorted(l.begin(), l.end()) ||
        std::adjacent_find(l.begin(), l.end()) != l.end())
      throw DataError("dataset: label sets must be sorted and unique");
    for (int c : l)
      if (c < 0 || c >= n_categories)
        throw DataError("dataset: label id " + std::to_string(c) +
                        " outside vocabulary of size " +
                        std::to_string(n_categories));
  }
}

std::vector<int> categories_by_frequency(const MultiLabelDataset& ds) {
  std::vector<long> count(static_cast<std::size_t>(ds.n_categories), 0);
  for (const auto& l : ds.labels)
    for (int c : l) ++count[static_cast<std::size_t>(c)];
  std::vector<int> order(static_cast<std::size_t>(ds.n_categories));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return count[static_cast<std::size_t>(a)] > count[static_cast<std::size_t>(b)];
  });
  return order;
}

// ---------------------------------------------------------------------------

DatasetBanditEnv::DatasetBanditEnv(std::shared_ptr<const MultiLabelDataset> ds,
                                   std::vector<int> arm_categories,
                                   std::uint64_t seed, bool fixed_instance)
    : ds_(std::move(ds)),
      arm_categories_(std::move(arm_categories)),
      seed_(seed),
      fixed_instance_(fixed_instance) {
  if (!ds_ || ds_->size() == 0) throw DataError("dataset bandit: empty dataset");
  if (arm_categories_.empty())
    throw ConfigError("dataset bandit: at least one arm category required");
  for (int c : arm_categories_)
    if (c < 0 || c >= ds_->n_categories)
      throw ConfigError("dataset bandit: unknown category id " + std::to_string(c));
}

Round DatasetBanditEnv::sample_round(std::int64_t t) const {
  Rng rng = round_stream(seed_, fixed_instance_ ? 0 : static_cast<std::uint64_t>(t));
  std::uniform_int_distribution<int> pick(0, ds_->size() - 1);
  const int n = n_arms();
  Round round;
  round.contexts.t = t;
  round.contexts.features.resize(n, ds_->dim());
  round.rewards.resize(n);
  for (int a = 0; a < n; ++a) {
    const int row = pick(rng);
    round.contexts.features.row(a) = ds_->features.row(row);
    round.rewards[a] = ds_->has_label(row, arm_categories_[static_cast<std::size_t>(a)]) ? 1.0 : 0.0;
  }
  // Labels are a deterministic function of the example.
  round.expected = round.rewards;
  return round;
}

DatasetBanditEnv multilabel_to_bandit(std::shared_ptr<const MultiLabelDataset> ds,
                                      std::vector<int> arm_categories,
                                      std::uint64_t seed, bool fixed_instance) {
  return DatasetBanditEnv(std::move(ds), std::move(arm_categories), seed,
                          fixed_instance);
}

MultiLabelDataset standardize_features(const MultiLabelDataset& ds) {
  if (ds.features.size() == 0) throw DataError("standardize: empty feature matrix");
  const double n = static_cast<double>(ds.features.size());
  const double mean = ds.features.sum() / n;
  const double var = (ds.features.array() - mean).square().sum() / n;
  const double sd = std::sqrt(var);
  if (!(sd > 0.0)) throw DataError("standardize: zero standard deviation");
  MultiLabelDataset out = ds;
  out.features = (ds.features.array() - mean) / sd;
  out.standardized = true;
  return out;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd eq6_matrix() {
  Eigen::MatrixXd x(3, 3);
  x << 1, 0, -1,
       0, 1, 0,
       0, 0, 1;
  return x;
}

Eigen::MatrixXd eq7_matrix() {
  Eigen::MatrixXd x(4, 4);
  x << 1, 0, 0, -1,
       0, 1, 0, -1,
       0, 0, 1, 0,
       0, 0, 0, 1;
  return x;
}

FixedConstructionEnv::FixedConstructionEnv(ConstructionKind kind,
                                           std::vector<double> rbar,
                                           RewardNoise noise, std::uint64_t seed)
    : kind_(kind), noise_(noise), seed_(seed) {
  x_ = kind == ConstructionKind::kEq6Supervised ? eq6_matrix() : eq7_matrix();
  if (static_cast<Eigen::Index>(rbar.size()) != x_.rows())
    throw std::invalid_argument("fixed construction: rbar has " +
                                std::to_string(rbar.size()) + " entries, expected " +
                                std::to_string(x_.rows()));
  for (double r : rbar)
    if (!(r >= 0.0 && r <= 1.0))
      throw std::invalid_argument("fixed construction: rbar entries must lie in [0, 1]");
  rbar_ = Eigen::Map<const Eigen::VectorXd>(rbar.data(), static_cast<Eigen::Index>(rbar.size()));
  theta_star_ = x_.fullPivLu().solve(rbar_);
}

Round FixedConstructionEnv::make_round(std::int64_t t,
                                       const Eigen::MatrixXd& contexts,
                                       const Eigen::VectorXd& expected) const {
  Round round;
  round.contexts.t = t;
  round.contexts.features = contexts;
  round.expected = expected;
  if (noise_ == RewardNoise::kNone) {
    round.rewards = expected;
  } else {
    // Independent stream from the one that picks the row in bandit mode.
    Rng rng = round_stream(seed_ ^ 0x5bd1e995ULL, static_cast<std::uint64_t>(t));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    round.rewards.resize(expected.size());
    for (Eigen::Index a = 0; a < expected.size(); ++a)
      round.rewards[a] = u(rng) < expected[a] ? 1.0 : 0.0;
  }
  return round;
}

Round FixedConstructionEnv::round_for_row(std::int64_t t, int j) const {
  Eigen::MatrixXd masked = Eigen::MatrixXd::Zero(x_.rows(), x_.cols());
  masked.row(j) = x_.row(j);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(x_.rows());
  expected[j] = rbar_[j];  // row j of X times theta* is rbar_j by construction
  return make_round(t, masked, expected);
}

Round FixedConstructionEnv::sample_round(std::int64_t t) const {
  if (kind_ != ConstructionKind::kEq7Bandit) return make_round(t, x_, rbar_);
  Rng rng = round_stream(seed_, static_cast<std::uint64_t>(t));
  std::uniform_int_distribution<int> row(0, static_cast<int>(x_.rows()) - 1);
  return round_for_row(t, row(rng));
}

FixedConstructionEnv fixed_construction(ConstructionKind kind,
                                        std::vector<double> rbar,
                                        RewardNoise noise, std::uint64_t seed) {
  return FixedConstructionEnv(kind, std::move(rbar), noise, seed);
}

// ---------------------------------------------------------------------------

SyntheticMultiLabel synth_multilabel_generate(const SyntheticMultiLabelParams& p,
                                              std::uint64_t seed) {
  if (p.n_examples < 1 || p.d < 1 || p.n_categories < 1 || p.clusters < 1)
    throw ConfigError("synthetic multilabel: sizes must be positive");
  if (p.clusters > p.n_categories)
    throw ConfigError("synthetic multilabel: clusters must not exceed categories");
  if (!(p.exponent >= 0.0) || !(p.center_scale >= 0.0) || !(p.direction_scale >= 0.0))
    throw ConfigError("synthetic multilabel: exponent and scales must be >= 0");
  if (!(p.modulation >= 0.0 && p.modulation <= 1.0))
    throw ConfigError("synthetic multilabel: modulation must lie in [0, 1]");

  Rng rng(derive_seed({seed, 0x6d6c6162ULL}));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> pick_cluster(0, p.clusters - 1);
  const int k = p.clusters;

  SyntheticMultiLabel out;
  out.centers = Eigen::MatrixXd::Zero(k, p.d);
  if (p.d >= k) {
    // Centre k lives on its own block of coordinates.
    const int base = p.d / k, extra = p.d % k;
    int start = 0;
    for (int c = 0; c < k; ++c) {
      const int len = base + (c < extra ? 1 : 0);
      out.centers.block(c, start, 1, len).setConstant(p.center_scale / std::sqrt(len));
      start += len;
    }
  } else {
    for (int c = 0; c < k; ++c)
      out.centers.row(c) = p.center_scale * random_unit_vector(p.d, rng).transpose();
  }

  // P(j | x) = rate_j * k * P(home | x) * (1 + beta tanh(<w_j, x - c_home>)).
  // Integrating over x gives rate_j because the blob is symmetric about its
  // centre; rate_0 = 1 / (k (1 + beta)) keeps every probability <= 1.
  out.category_cluster.resize(static_cast<std::size_t>(p.n_categories));
  out.category_rate.resize(p.n_categories);
  out.directions.resize(p.n_categories, p.d);
  for (int j = 0; j < p.n_categories; ++j) {
    out.category_cluster[static_cast<std::size_t>(j)] = j % k;
    out.category_rate[j] = std::pow(j + 1.0, -p.exponent) / (k * (1.0 + p.modulation));
    out.directions.row(j) = p.direction_scale * random_unit_vector(p.d, rng).transpose();
  }

  MultiLabelDataset& ds = out.data;
  ds.n_categories = p.n_categories;
  ds.features.resize(p.n_examples, p.d);
  ds.labels.resize(static_cast<std::size_t>(p.n_examples));
  out.example_cluster.resize(static_cast<std::size_t>(p.n_examples));
  const Eigen::VectorXd half_sq_norm = 0.5 * out.centers.rowwise().squaredNorm();
  Eigen::VectorXd posterior(k);
  for (int i = 0; i < p.n_examples; ++i) {
    const int c = pick_cluster(rng);
    out.example_cluster[static_cast<std::size_t>(i)] = c;
    for (int j = 0; j < p.d; ++j) ds.features(i, j) = out.centers(c, j) + normal(rng);
    posterior = out.centers * ds.features.row(i).transpose() - half_sq_norm;
    posterior = (posterior.array() - posterior.maxCoeff()).exp();
    posterior /= posterior.sum();
    auto& labels = ds.labels[static_cast<std::size_t>(i)];
    for (int j = 0; j < p.n_categories; ++j) {
      const int h = out.category_cluster[static_cast<std::size_t>(j)];
      const double lift =
          1.0 + p.modulation *
                    std::tanh(out.directions.row(j).dot(ds.features.row(i) - out.centers.row(h)));
      const double prob = out.category_rate[j] * k * posterior[h] * lift;
      if (unif(rng) < prob) labels.push_back(j);
    }
  }
  return out;
}

double misspecification_l2_error(int d, int s, int draws, int samples_per_draw,
                                 std::uint64_t seed) {
  if (s < 1 || s > d) throw std::invalid_argument("misspecification: need 1 <= s <= d");
  if (samples_per_draw <= s)
    throw std::invalid_argument("misspecification: need more samples than features");
  double total = 0.0;
  for (int draw = 0; draw < draws; ++draw) {
    Rng rng(derive_seed({seed, static_cast<std::uint64_t>(draw)}));
    std::normal_distribution<double> normal;
    const Eigen::VectorXd theta = random_unit_vector(d, rng);
    const std::vector<int> subset = random_subset(d, s, rng);
    Eigen::MatrixXd xs(samples_per_draw, s);
    Eigen::VectorXd r(samples_per_draw);
    Eigen::VectorXd x(d);
    for (int i = 0; i < samples_per_draw; ++i) {
      for (int j = 0; j < d; ++j) x[j] = normal(rng);
      r[i] = theta.dot(x);
      for (int j = 0; j < s; ++j) xs(i, j) = x[subset[static_cast<std::size_t>(j)]];
    }
    const Eigen::VectorXd beta = xs.colPivHouseholderQr().solve(r);
    const double rss = (r - xs * beta).squaredNorm();
    total += rss / static_cast<double>(samples_per_draw - s);
  }
  return std::sqrt(total / draws);
}

}  // namespace twostage
