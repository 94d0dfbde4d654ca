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

#include "twostage/config.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json_schema.hpp"
#include "twostage/error.hpp"

namespace twostage {

using nlohmann::json;

namespace {

using detail::Ctx;
using detail::Locator;
using detail::Section;
using detail::fail;
using detail::parse_enum;

EnvSpec parse_env(const json& j, const Ctx& ctx) {
  Section sec(j, {"environment"}, ctx);
  EnvSpec env;
  const std::string kind = sec.value<std::string>("kind", "synthetic");
  if (kind == "synthetic") {
    env.kind = EnvKind::kSynthetic;
  } else if (kind == "dataset") {
    env.kind = EnvKind::kDataset;
  } else {
    fail(ctx, sec.at("kind"), "unknown environment kind '" + kind + "'");
  }
  env.n_arms = sec.value<int>("n_arms", env.n_arms);
  if (env.kind == EnvKind::kSynthetic) {
    env.d = sec.value<int>("d", env.d);
    env.noise_std = sec.value<double>("noise_std", env.noise_std);
  } else {
    auto resolve = [&](const std::string& key) {
      auto p = sec.opt<std::string>(key);
      if (!p) fail(ctx, sec.at(key), "required for dataset environments");
      std::filesystem::path path(*p);
      if (path.is_relative() && !ctx.base_dir.empty()) path = std::filesystem::path(ctx.base_dir) / path;
      return path.string();
    };
    env.features_path = resolve("features");
    env.labels_path = resolve("labels");
    env.standardize = sec.value<bool>("standardize", env.standardize);
    env.fixed_instance = sec.value<bool>("fixed_instance", env.fixed_instance);
    env.arm_categories = sec.list<int>("arm_categories");
    if (!env.arm_categories.empty()) {
      if (sec.has("n_arms") && env.n_arms != static_cast<int>(env.arm_categories.size()))
        fail(ctx, sec.at("arm_categories"), "length differs from n_arms");
      env.n_arms = static_cast<int>(env.arm_categories.size());
    }
  }
  sec.finish();
  return env;
}

SystemSpec parse_system(const json& j, std::vector<std::string> path, EnvKind env_kind,
                        const Ctx& ctx) {
  Section sec(j, std::move(path), ctx);
  SystemSpec sys;
  sys.params = default_agent_params(env_kind);
  const std::string kind = sec.value<std::string>("kind", "single-stage");
  if (kind == "single-stage") {
    sys.kind = SystemKind::kSingleStage;
    sys.agent = parse_enum(sec, "agent", parse_agent_kind).value_or(sys.agent);
  } else if (kind == "two-stage") {
    sys.kind = SystemKind::kTwoStage;
    sys.ranker = parse_enum(sec, "ranker", parse_agent_kind).value_or(sys.ranker);
    sys.nominator = parse_enum(sec, "nominator", parse_agent_kind).value_or(sys.nominator);
    sys.n_nominators = sec.value<int>("n_nominators", sys.n_nominators);
    sys.mode = parse_enum(sec, "training_mode", parse_training_mode).value_or(sys.mode);
    const json* pools = sec.get("pools");
    if (pools) {
      if (!pools->is_array()) fail(ctx, sec.at("pools"), "expected a list of lists");
      for (const auto& p : *pools) {
        if (!p.is_array()) fail(ctx, sec.at("pools"), "expected a list of lists");
        std::vector<ArmId> ids;
        for (const auto& a : p) {
          if (!a.is_number_integer()) fail(ctx, sec.at("pools"), "arm ids must be integers");
          ids.push_back(a.get<int>());
        }
        sys.pools.push_back(std::move(ids));
      }
      if (sec.has("n_nominators") && static_cast<int>(sys.pools.size()) != sys.n_nominators)
        fail(ctx, sec.at("pools"), "count differs from n_nominators");
      sys.n_nominators = static_cast<int>(sys.pools.size());
    }
  } else {
    fail(ctx, sec.at("kind"), "unknown system kind '" + kind + "'");
  }
  sys.s = sec.opt<int>("s");
  sys.rho = sec.opt<double>("rho");
  if (sys.s && sys.rho) fail(ctx, sec.at("rho"), "give either s or rho, not both");
  if (sys.rho && !(*sys.rho >= 1.0)) fail(ctx, sec.at("rho"), "must be at least 1");
  sys.params.lambda = sec.value<double>("lambda", sys.params.lambda);
  sys.params.alpha = sec.value<double>("alpha", sys.params.alpha);
  sys.params.pg_learning_rate = sec.value<double>("pg_learning_rate", sys.params.pg_learning_rate);
  if (!(sys.params.lambda > 0.0)) fail(ctx, sec.at("lambda"), "must be positive");
  if (!(sys.params.alpha >= 0.0)) fail(ctx, sec.at("alpha"), "must be non-negative");
  if (!(sys.params.pg_learning_rate > 0.0))
    fail(ctx, sec.at("pg_learning_rate"), "must be positive");
  sec.finish();
  return sys;
}

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

std::string to_string(EnvKind kind) {
  return kind == EnvKind::kSynthetic ? "synthetic" : "dataset";
}

AgentParams default_agent_params(EnvKind kind) {
  if (kind == EnvKind::kDataset) return AgentParams{1.0, 1e-3, 10.0};
  return AgentParams{1e-2, 1e-2, 1.0};
}

std::string SystemSpec::label() const {
  if (kind == SystemKind::kSingleStage) return std::string(1, agent_letter(agent));
  return std::string(1, agent_letter(ranker)) + "+" + agent_letter(nominator);
}

int SystemSpec::resolved_s(int d) const {
  if (s) return *s;
  if (rho) return std::max(1, static_cast<int>(std::floor(d / *rho + 1e-9)));
  return d;
}

void validate(const EnvSpec& env, const SystemSpec& sys) {
  check(env.n_arms >= 1, "n_arms must be at least 1");
  if (env.kind == EnvKind::kSynthetic) {
    check(env.d >= 1, "d must be at least 1");
    check(env.noise_std >= 0.0, "noise_std must be non-negative");
    const int s = sys.resolved_s(env.d);
    check(s >= 1 && s <= env.d, "s must lie in [1, d], got s=" + std::to_string(s) +
                                    " with d=" + std::to_string(env.d));
  } else if (sys.s) {
    check(*sys.s >= 1, "s must be at least 1");
  }
  if (sys.kind == SystemKind::kTwoStage) {
    check(sys.n_nominators >= 1, "n_nominators must be at least 1");
    check(sys.n_nominators <= env.n_arms,
          "n_nominators (" + std::to_string(sys.n_nominators) + ") exceeds n_arms (" +
              std::to_string(env.n_arms) + ")");
    if (!sys.pools.empty()) {
      PoolAllocation p{sys.pools, env.n_arms};
      p.validate();
    }
  }
}

nlohmann::json to_json(const EnvSpec& env) {
  json j{{"kind", to_string(env.kind)}, {"n_arms", env.n_arms}};
  if (env.kind == EnvKind::kSynthetic) {
    j["d"] = env.d;
    j["noise_std"] = env.noise_std;
  } else {
    j["features"] = env.features_path;
    j["labels"] = env.labels_path;
    j["standardize"] = env.standardize;
    j["fixed_instance"] = env.fixed_instance;
    j["arm_categories"] = env.arm_categories;
  }
  return j;
}

nlohmann::json to_json(const SystemSpec& sys, int d) {
  json j{{"label", sys.label()},
         {"s", sys.resolved_s(d)},
         {"lambda", sys.params.lambda},
         {"alpha", sys.params.alpha},
         {"pg_learning_rate", sys.params.pg_learning_rate}};
  if (sys.kind == SystemKind::kSingleStage) {
    j["kind"] = "single-stage";
    j["agent"] = to_string(sys.agent);
  } else {
    j["kind"] = "two-stage";
    j["ranker"] = to_string(sys.ranker);
    j["nominator"] = to_string(sys.nominator);
    j["n_nominators"] = sys.n_nominators;
    j["training_mode"] = to_string(sys.mode);
    j["pools"] = sys.pools;
  }
  return j;
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin,
                                   const std::string& base_dir) {
  Locator loc(text);
  Ctx ctx{origin, &loc, base_dir};
  const json root = detail::parse_json_text(text, origin);
  Section top(root, {}, ctx);
  ExperimentConfig cfg;
  if (const json* env = top.get("environment")) cfg.env = parse_env(*env, ctx);
  if (const json* sys = top.get("system"))
    cfg.system = parse_system(*sys, {"system"}, cfg.env.kind, ctx);
  else
    cfg.system.params = default_agent_params(cfg.env.kind);

  cfg.T = top.value<std::int64_t>("T", cfg.T);
  if (cfg.T < 0) fail(ctx, top.at("T"), "must be non-negative");
  cfg.seeds = top.value<int>("seeds", cfg.seeds);
  if (cfg.seeds < 1) fail(ctx, top.at("seeds"), "must be at least 1");
  cfg.root_seed = top.value<std::uint64_t>("root_seed", cfg.root_seed);
  cfg.out = top.value<std::string>("out", cfg.out);
  cfg.write_ledgers = top.value<bool>("write_ledgers", cfg.write_ledgers);
  cfg.parallel = top.value<int>("parallel", cfg.parallel);
  if (cfg.parallel < 1) fail(ctx, top.at("parallel"), "must be at least 1");

  if (const json* sw = top.get("sweep")) {
    Section sec(*sw, {"sweep"}, ctx);
    cfg.grid.n_arms = sec.list<int>("n_arms");
    cfg.grid.d = sec.list<int>("d");
    cfg.grid.n_nominators = sec.list<int>("n_nominators");
    cfg.grid.noise_std = sec.list<double>("noise_std");
    cfg.grid.rho = sec.list<double>("rho");
    cfg.grid.s = sec.list<int>("s");
    if (!cfg.grid.rho.empty() && !cfg.grid.s.empty())
      fail(ctx, sec.at("rho"), "sweep either rho or s, not both");
    for (double r : cfg.grid.rho)
      if (!(r >= 1.0)) fail(ctx, sec.at("rho"), "every rho must be at least 1");
    if (const json* systems = sec.get("systems")) {
      if (!systems->is_array() || systems->empty())
        fail(ctx, sec.at("systems"), "expected a nonempty list of systems");
      for (std::size_t i = 0; i < systems->size(); ++i)
        cfg.grid.systems.push_back(parse_system(
            (*systems)[i], {"sweep", "systems", "[" + std::to_string(i) + "]"}, cfg.env.kind, ctx));
    }
    sec.finish();
  }
  top.finish();

  // Only the unswept base combination has to be valid on its own; swept cells
  // are checked as they are expanded.
  const bool swept = !cfg.grid.n_arms.empty() || !cfg.grid.d.empty() ||
                     !cfg.grid.n_nominators.empty() || !cfg.grid.rho.empty() ||
                     !cfg.grid.s.empty() || !cfg.grid.systems.empty();
  if (!swept) {
    try {
      validate(cfg.env, cfg.system);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  return parse_config_text(detail::read_text_file(path), path, detail::parent_dir(path));
}

namespace detail {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string parent_dir(const std::string& path) {
  return std::filesystem::path(path).parent_path().string();
}

json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const Locator loc(text);
    throw ConfigError(origin + ":" + std::to_string(loc.line_at_byte(e.byte == 0 ? 0 : e.byte - 1)) +
                      ": malformed JSON: " + e.what());
  }
}

}  // namespace detail

}  // namespace twostage
