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

// Reward-generating environments and multi-label dataset handling.

#ifndef TWOSTAGE_ENV_HPP_
#define TWOSTAGE_ENV_HPP_

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twostage/rng.hpp"

namespace twostage {

using ArmId = int;

// Per-arm context rows for one round, shape |A| x d.
struct ArmContexts {
  Eigen::MatrixXd features;
  std::int64_t t = 0;

  int n_arms() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
};

// Everything an environment produces for one round. Agents only ever see
// `contexts` and the reward of the arm they were served; `expected` is the
// privileged f*(x, a) vector consumed by the regret ledger.
struct Round {
  ArmContexts contexts;
  Eigen::VectorXd rewards;
  Eigen::VectorXd expected;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual int n_arms() const = 0;
  virtual int dim() const = 0;
  // Deterministic in (construction seed, t); safe to call concurrently.
  virtual Round sample_round(std::int64_t t) const = 0;
};

// r_ta = <theta*, x_ta> + eps_ta with x_ta ~ N(0, I) and theta* uniform on
// the unit sphere.
class SyntheticLinearEnv final : public Environment {
 public:
  SyntheticLinearEnv(int d, int n_arms, double noise_std, std::uint64_t seed);

  int n_arms() const override { return n_arms_; }
  int dim() const override { return d_; }
  Round sample_round(std::int64_t t) const override;

  const Eigen::VectorXd& theta_star() const { return theta_star_; }
  double noise_std() const { return noise_std_; }

 private:
  int d_;
  int n_arms_;
  double noise_std_;
  std::uint64_t seed_;
  Eigen::VectorXd theta_star_;
};

struct MultiLabelDataset {
  Eigen::MatrixXd features;                // rows = examples
  std::vector<std::vector<int>> labels;    // sorted, unique category ids
  int n_categories = 0;                    // valid ids are [0, n_categories)
  bool standardized = false;

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  bool has_label(int row, int category) const;
  void validate() const;
};

// Category ids ordered by descending occurrence count (ties by id).
std::vector<int> categories_by_frequency(const MultiLabelDataset& ds);

// Multi-label classification turned into an |A|-armed bandit: each round
// samples |A| examples; arm a sees the features of its example and earns 1 iff
// the example carries category arm_categories[a]. With `fixed_instance` the
// examples are drawn once and reused for every round.
class DatasetBanditEnv final : public Environment {
 public:
  DatasetBanditEnv(std::shared_ptr<const MultiLabelDataset> ds,
                   std::vector<int> arm_categories, std::uint64_t seed,
                   bool fixed_instance = false);

  int n_arms() const override {
    return static_cast<int>(arm_categories_.size());
  }
  int dim() const override { return ds_->dim(); }
  Round sample_round(std::int64_t t) const override;

  const std::vector<int>& arm_categories() const { return arm_categories_; }

 private:
  std::shared_ptr<const MultiLabelDataset> ds_;
  std::vector<int> arm_categories_;
  std::uint64_t seed_;
  bool fixed_instance_;
};

DatasetBanditEnv multilabel_to_bandit(std::shared_ptr<const MultiLabelDataset> ds,
                                      std::vector<int> arm_categories,
                                      std::uint64_t seed,
                                      bool fixed_instance = false);

// One global mean and one global (population) standard deviation over every
// matrix entry. Throws DataError when the deviation is zero.
MultiLabelDataset standardize_features(const MultiLabelDataset& ds);

// --- Fixed constructions used by the nominator-objective counterexamples ---

enum class ConstructionKind { kEq6Supervised, kEq7Supervised, kEq7Bandit };
enum class RewardNoise { kBernoulli, kNone };

class FixedConstructionEnv final : public Environment {
 public:
  FixedConstructionEnv(ConstructionKind kind, std::vector<double> rbar,
                       RewardNoise noise, std::uint64_t seed);

  int n_arms() const override { return static_cast<int>(x_.rows()); }
  int dim() const override { return static_cast<int>(x_.cols()); }
  Round sample_round(std::int64_t t) const override;

  // Round with row `j` forced; only meaningful in bandit mode.
  Round round_for_row(std::int64_t t, int j) const;

  ConstructionKind kind() const { return kind_; }
  const Eigen::MatrixXd& matrix() const { return x_; }
  const Eigen::VectorXd& rbar() const { return rbar_; }
  const Eigen::VectorXd& theta_star() const { return theta_star_; }

 private:
  Round make_round(std::int64_t t, const Eigen::MatrixXd& contexts,
                   const Eigen::VectorXd& expected) const;

  ConstructionKind kind_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd rbar_;
  Eigen::VectorXd theta_star_;
  RewardNoise noise_;
  std::uint64_t seed_;
};

FixedConstructionEnv fixed_construction(ConstructionKind kind,
                                        std::vector<double> rbar,
                                        RewardNoise noise = RewardNoise::kBernoulli,
                                        std::uint64_t seed = 0);

// The 3x3 / 4x4 context matrices of the two constructions.
Eigen::MatrixXd eq6_matrix();
Eigen::MatrixXd eq7_matrix();

// --- Dataset files ---

// Features: headerless CSV or the TSBF1 binary container (auto-detected).
// Labels: one line per example, comma-separated non-negative ids.
MultiLabelDataset load_dataset(const std::string& features_path,
                               const std::string& labels_path);
Eigen::MatrixXd read_features_csv(const std::string& path);
Eigen::MatrixXd read_features_binary(const std::string& path);
void write_features_binary(const std::string& path, const Eigen::MatrixXd& m);
void write_features_csv(const std::string& path, const Eigen::MatrixXd& m);
std::vector<std::vector<int>> read_labels(const std::string& path);
void write_labels(const std::string& path,
                  const std::vector<std::vector<int>>& labels);

// --- Synthetic multi-label generator ---

struct SyntheticMultiLabelParams {
  int n_examples = 10000;
  int d = 50;
  int n_categories = 100;
  int clusters = 10;
  // Marginal rate of category j is proportional to (j + 1)^-exponent.
  double exponent = 0.5;
  // Norm of every cluster centre; blobs have identity covariance.
  double center_scale = 3.0;
  // Within its home cluster, category j is modulated by
  // 1 + modulation * tanh(<w_j, x - centre>) with |w_j| = direction_scale.
  // The factor averages to 1 over the blob, so marginal rates stay exact.
  double modulation = 0.0;
  double direction_scale = 2.0;
};

struct SyntheticMultiLabel {
  MultiLabelDataset data;
  std::vector<int> example_cluster;   // blob each example was drawn from
  std::vector<int> category_cluster;  // ground-truth cluster of each category
  Eigen::MatrixXd centers;            // clusters x d
  Eigen::VectorXd category_rate;      // configured marginal P(j in labels)
  Eigen::MatrixXd directions;         // n_categories x d, the w_j above
};

// Gaussian blobs with labels assigned through the blob posterior:
// P(j in labels | x) = rate_j * clusters * P(cluster(j) | x), which keeps the
// marginal rate of every category at exactly rate_j.
SyntheticMultiLabel synth_multilabel_generate(const SyntheticMultiLabelParams& p,
                                              std::uint64_t seed);

// Monte-Carlo estimate of sqrt(E[min_theta E[(r - <theta, x_S>)^2]]) for
// noise-free linear rewards, a random unit theta* and a random s-subset S of
// the d features. Each draw fits least squares on `samples_per_draw` points and
// uses the unbiased residual variance.
double misspecification_l2_error(int d, int s, int draws, int samples_per_draw,
                                 std::uint64_t seed);

}  // namespace twostage

#endif  // TWOSTAGE_ENV_HPP_
