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

// End-to-end offline MoE experiment: data split, offline triples, model
// initialisation, training and top-K evaluation.

#ifndef TWOSTAGE_MOE_EXPERIMENT_HPP_
#define TWOSTAGE_MOE_EXPERIMENT_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "twostage/env.hpp"
#include "twostage/moe.hpp"

namespace twostage {

enum class MoEModelKind { kTrainable, kRandomPools };
MoEModelKind parse_moe_model_kind(const std::string& name);
std::string to_string(MoEModelKind kind);

struct MoEExperimentConfig {
  // Synthetic data unless features_path is set.
  SyntheticMultiLabelParams synthetic{12000, 50, 100, 10, 0.5, 3.0, 0.0, 2.0};
  std::string features_path;
  std::string labels_path;
  bool standardize = true;
  int n_test = 2000;  // last rows are held out

  int n_arms = 100;  // the most frequent categories
  int c = 500;
  OfflineSampling sampling = OfflineSampling::kUniform;

  MoEModelKind model = MoEModelKind::kTrainable;
  int n_experts = 10;
  int d_e = 10;
  int s = 25;
  std::optional<double> sigma2;  // 0.01 trainable, 1.0 random pools
  bool item_only_gating = false;
  bool shared_subset = false;
  TrainConfig train;

  int seeds = 1;
  std::uint64_t root_seed = 0;
  std::string out = "moe_results";

  double resolved_sigma2() const;
};

// Everything derived from the data for one seed.
struct MoETask {
  MultiLabelDataset data;
  std::vector<int> arm_categories;
  std::vector<int> arm_cluster;  // synthetic data only
  int n_clusters = 0;
  OfflineDataset offline;
  RowMatrix test_users;
  std::vector<std::vector<ArmId>> test_labels;
};

std::uint64_t moe_seed(const MoEExperimentConfig& cfg, int seed_index);

MoETask prepare_moe_task(const MoEExperimentConfig& cfg, std::uint64_t seed);
MoEModel init_moe_model(const MoEExperimentConfig& cfg, const MoETask& task, std::uint64_t seed);

struct MoEEvaluation {
  PrecisionRecall at5;
  PoolAllocation distilled;
  std::optional<double> clustering_accuracy;  // synthetic data only
};

MoEEvaluation evaluate_moe(const MoEModel& model, const MoETask& task);

// CSV row in the kMoeEvalCsvHeader layout.
std::string moe_eval_row(const MoEExperimentConfig& cfg, std::uint64_t seed,
                         const MoEEvaluation& ev);

MoEExperimentConfig parse_moe_config(const std::string& path);
MoEExperimentConfig parse_moe_config_text(const std::string& text,
                                          const std::string& origin = "<config>",
                                          const std::string& base_dir = "");

}  // namespace twostage

#endif  // TWOSTAGE_MOE_EXPERIMENT_HPP_
