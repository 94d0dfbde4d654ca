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

// Gaussian mixture of two-tower experts with a logistic gating network over
// (user, item). Frozen one-hot gating turns the model into a fixed pool
// allocation, which is the random-pool baseline.

#ifndef TWOSTAGE_MOE_HPP_
#define TWOSTAGE_MOE_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twostage/env.hpp"
#include "twostage/rng.hpp"
#include "twostage/twostage.hpp"

namespace twostage {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MoEShape {
  int n_arms = 0;
  int d = 0;          // user feature dimension
  int n_experts = 0;  // N
  int d_e = 0;        // embedding dimension
  int s = 0;          // features per expert
};

// Parameters live in one flat vector:
//   for each expert n: E_n (|A| x d_e), W_n (d_e x s)
//   then G (N x d_g), V (|A| x N)
// all row-major.
class MoEModel {
 public:
  MoEModel(MoEShape shape, std::vector<std::vector<int>> expert_features,
           std::vector<int> gating_features, double sigma2);

  // Experts ~ N(0, 1/sqrt(d_e)) entrywise, gating zero. Each expert gets its
  // own random s-subset unless `shared_subset`; gating sees all features
  // unless `gating_features` is given. An empty gating set leaves only the
  // item term V, so the gate depends on the arm alone.
  static MoEModel random(const MoEShape& shape, double sigma2, Rng& rng,
                         bool shared_subset = false,
                         std::optional<std::vector<int>> gating_features = std::nullopt);

  // Bypasses the softmax: p_n(x, a) = 1{a in A_n}. Requires disjoint pools
  // covering every arm, one per expert.
  void freeze_gating(const PoolAllocation& pools);
  void unfreeze_gating() { owner_.clear(); }
  bool frozen() const { return !owner_.empty(); }
  const std::vector<int>& owner() const { return owner_; }

  const MoEShape& shape() const { return shape_; }
  int d_g() const { return static_cast<int>(gating_features_.size()); }
  double sigma2() const { return sigma2_; }
  void set_sigma2(double sigma2);
  const std::vector<std::vector<int>>& expert_features() const { return expert_features_; }
  const std::vector<int>& gating_features() const { return gating_features_; }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  std::size_t n_params() const { return static_cast<std::size_t>(params_.size()); }

  Eigen::Map<RowMatrix> E(int n);
  Eigen::Map<const RowMatrix> E(int n) const;
  Eigen::Map<RowMatrix> W(int n);
  Eigen::Map<const RowMatrix> W(int n) const;
  Eigen::Map<RowMatrix> G();
  Eigen::Map<const RowMatrix> G() const;
  Eigen::Map<RowMatrix> V();
  Eigen::Map<const RowMatrix> V() const;

  // Offsets into params(); gating blocks start at gating_offset().
  std::size_t expert_offset(int n) const;
  std::size_t gating_offset() const;

  // p_n(x, a) for one user feature row.
  Eigen::VectorXd gating(const Eigen::Ref<const Eigen::VectorXd>& x, ArmId a) const;
  // r_hat_n(x, a) for every expert.
  Eigen::VectorXd predictions(const Eigen::Ref<const Eigen::VectorXd>& x, ArmId a) const;

 private:
  MoEShape shape_;
  std::vector<std::vector<int>> expert_features_;
  std::vector<int> gating_features_;
  double sigma2_;
  std::vector<int> owner_;  // frozen one-hot gating when nonempty
  Eigen::VectorXd params_;
};

// Finite gating parameters (G = 0, V off-pool = -kOneHotLogitGap) whose
// softmax is one-hot at machine precision: exp(-800) underflows to 0.
inline constexpr double kOneHotLogitGap = 800.0;
void set_one_hot_gating(MoEModel& model, const PoolAllocation& pools);

struct OfflineBatch {
  RowMatrix x;  // B x d
  std::vector<ArmId> arms;
  Eigen::VectorXd r;

  int size() const { return static_cast<int>(arms.size()); }
};

// (1/B) sum_t log sum_n p_nt exp(-(r_t - r_hat_nt)^2 / (2 sigma^2)).
double moe_loglik(const MoEModel& model, const OfflineBatch& batch);

// Exact gradient of moe_loglik with respect to params(). Frozen gating has a
// zero gating block. Examples are processed in fixed chunks whose partial sums
// are added in chunk order, so the result is identical for any thread count.
Eigen::VectorXd moe_grad(const MoEModel& model, const OfflineBatch& batch);
// Single-threaded reference with one running accumulator.
Eigen::VectorXd moe_grad_serial(const MoEModel& model, const OfflineBatch& batch);

enum class OptimizerKind { kAdam, kRmsProp };
OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

// Gradient ascent with RMSProp (0.9, 1e-8) or Adam (0.9, 0.999, 1e-8).
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, std::size_t n_params);
  void ascend(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  OptimizerKind kind_;
  double lr_;
  std::int64_t step_ = 0;
  Eigen::VectorXd m_, v_;
};

enum class OfflineSampling { kUniform, kBalanced };
OfflineSampling parse_offline_sampling(const std::string& name);

// |A| * c triples; row r of `rows` indexes `features`.
struct OfflineDataset {
  RowMatrix features;
  std::vector<int> rows;
  std::vector<ArmId> arms;
  std::vector<double> rewards;
  int n_arms = 0;

  std::size_t size() const { return arms.size(); }
  OfflineBatch batch(std::span<const std::size_t> indices) const;
  OfflineBatch all() const;
  double positive_rate() const;
};

// For each arm, c rows drawn uniformly with replacement (kUniform), or half of
// them from rows carrying the arm's category and half from rows without it
// (kBalanced), with reward 1{category in labels}.
OfflineDataset build_offline_dataset(const MultiLabelDataset& ds,
                                     std::span<const int> arm_categories, int c, Rng& rng,
                                     OfflineSampling sampling = OfflineSampling::kUniform);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 0.01;
  std::int64_t steps = 1000;
  int batch_size = 4096;
  std::int64_t trace_every = 50;
  std::uint64_t seed = 0;
};

struct TracePoint {
  std::int64_t step;
  double loglik;  // on the minibatch of that step, before the update
};

// Minibatch ascent on moe_loglik. Throws TrainingDiverged on a non-finite
// likelihood or gradient.
std::vector<TracePoint> moe_train(MoEModel& model, const OfflineDataset& data,
                                  const TrainConfig& cfg);

// score(x, a) = sum_n p_n(x, a) r_hat_n(x, a) for every arm, one row per user.
Eigen::MatrixXd moe_score(const MoEModel& model, const RowMatrix& users);
Eigen::VectorXd moe_score(const MoEModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
                          std::span<const ArmId> arms);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

// Top-K by score with ties broken toward the smaller arm id; empty label
// sets count as (0, 0). `labels[i]` holds arm ids.
PrecisionRecall precision_recall_at_k(const Eigen::MatrixXd& scores,
                                      const std::vector<std::vector<ArmId>>& labels, int k);

// Label sets of dataset rows expressed as arm ids.
std::vector<std::vector<ArmId>> arm_labels(const MultiLabelDataset& ds,
                                           std::span<const int> rows,
                                           std::span<const int> arm_categories);

// Each arm goes to the expert with the largest mean gating weight over
// `contexts` (ties to the lower expert id). Empty pools take the arm that
// claims them most strongly among pools with more than one arm.
PoolAllocation distill_allocation(const MoEModel& model, const RowMatrix& contexts);

// Fraction of arms whose pool maps to their true cluster under the best
// one-to-one matching of pools to clusters.
double clustering_accuracy(const PoolAllocation& pools, std::span<const int> arm_cluster,
                           int n_clusters);

// Checkpoint container: "TSMOE1", little-endian u64 dims, index lists,
// frozen owner map, sigma^2 as f64, then row-major f32 parameter blocks.
void save_moe(const MoEModel& model, const std::string& path);
MoEModel load_moe(const std::string& path);

// Evaluation CSV: model,seed,c,s,d_e,N,precision_at_5,recall_at_5
inline const char* kMoeEvalCsvHeader = "model,seed,c,s,d_e,N,precision_at_5,recall_at_5";

}  // namespace twostage

#endif  // TWOSTAGE_MOE_HPP_
