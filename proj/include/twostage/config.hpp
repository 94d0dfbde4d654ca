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

// Experiment configuration: one JSON document, parsed strictly. Unknown keys
// and type mismatches are ConfigErrors that name the offending line.

#ifndef TWOSTAGE_CONFIG_HPP_
#define TWOSTAGE_CONFIG_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "twostage/agents.hpp"
#include "twostage/twostage.hpp"
#include "json.hpp"

namespace twostage {

enum class EnvKind { kSynthetic, kDataset };
std::string to_string(EnvKind kind);

struct EnvSpec {
  EnvKind kind = EnvKind::kSynthetic;
  int n_arms = 100;
  int d = 40;  // synthetic only; dataset runs take it from the file
  double noise_std = 0.1;
  // dataset
  std::string features_path;
  std::string labels_path;
  bool standardize = true;
  bool fixed_instance = false;
  std::vector<int> arm_categories;  // empty: the n_arms most frequent
};

enum class SystemKind { kSingleStage, kTwoStage };

struct SystemSpec {
  SystemKind kind = SystemKind::kSingleStage;
  AgentKind agent = AgentKind::kUcb;      // single-stage
  AgentKind ranker = AgentKind::kUcb;     // two-stage
  AgentKind nominator = AgentKind::kUcb;  // two-stage
  int n_nominators = 1;
  std::optional<int> s;       // features per nominator / single agent
  std::optional<double> rho;  // d / s, used when s is absent
  TrainingMode mode = TrainingMode::kAll;
  AgentParams params;
  // Explicit pools (may overlap); otherwise pool_allocate.
  std::vector<std::vector<ArmId>> pools;

  std::string label() const;
  // s after resolving rho against d: floor(d / rho), at least 1; d when unset.
  int resolved_s(int d) const;
};

// Lists of values; each nonempty list replaces the base value in every cell.
struct SweepGrid {
  std::vector<int> n_arms;
  std::vector<int> d;
  std::vector<int> n_nominators;
  std::vector<double> noise_std;
  std::vector<double> rho;
  std::vector<int> s;
  std::vector<SystemSpec> systems;
};

struct ExperimentConfig {
  EnvSpec env;
  SystemSpec system;
  SweepGrid grid;
  std::int64_t T = 1000;
  int seeds = 1;
  std::uint64_t root_seed = 0;
  std::string out = "results";
  bool write_ledgers = true;
  int parallel = 1;
};

// Agent hyperparameters used when the config leaves them out.
AgentParams default_agent_params(EnvKind kind);

ExperimentConfig parse_config(const std::string& path);
// `origin` prefixes error messages; relative dataset paths resolve against
// `base_dir`.
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin = "<config>",
                                   const std::string& base_dir = "");

// Canonical JSON of one run's environment and system, used for content hashes.
nlohmann::json to_json(const EnvSpec& env);
nlohmann::json to_json(const SystemSpec& sys, int d);

// Structural checks shared by the parser and the sweep expansion.
void validate(const EnvSpec& env, const SystemSpec& sys);

}  // namespace twostage

#endif  // TWOSTAGE_CONFIG_HPP_
