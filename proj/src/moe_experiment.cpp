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

#include "twostage/moe_experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <numeric>

#include "json_schema.hpp"
#include "twostage/error.hpp"

namespace twostage {

namespace {

// Stream tags for the per-seed sub-streams.
enum : std::uint64_t { kDataStream = 1, kOfflineStream, kInitStream, kPoolStream, kTrainStream };

constexpr int kDistillContexts = 1000;

}  // namespace

MoEModelKind parse_moe_model_kind(const std::string& name) {
  if (name == "trainable") return MoEModelKind::kTrainable;
  if (name == "random-pools") return MoEModelKind::kRandomPools;
  throw ConfigError("unknown MoE model kind '" + name + "' (trainable, random-pools)");
}

std::string to_string(MoEModelKind kind) {
  return kind == MoEModelKind::kTrainable ? "trainable" : "random-pools";
}

double MoEExperimentConfig::resolved_sigma2() const {
  if (sigma2) return *sigma2;
  return model == MoEModelKind::kTrainable ? 0.01 : 1.0;
}

std::uint64_t moe_seed(const MoEExperimentConfig& cfg, int seed_index) {
  return derive_seed({cfg.root_seed, static_cast<std::uint64_t>(seed_index)});
}

MoETask prepare_moe_task(const MoEExperimentConfig& cfg, std::uint64_t seed) {
  MoETask task;
  std::vector<int> category_cluster;
  if (cfg.features_path.empty()) {
    auto syn = synth_multilabel_generate(cfg.synthetic, derive_seed({seed, kDataStream}));
    task.data = std::move(syn.data);
    category_cluster = std::move(syn.category_cluster);
    task.n_clusters = cfg.synthetic.clusters;
  } else {
    task.data = load_dataset(cfg.features_path, cfg.labels_path);
    if (cfg.standardize) task.data = standardize_features(task.data);
  }
  const int n = task.data.size();
  if (cfg.n_test < 1 || cfg.n_test >= n)
    throw ConfigError("n_test must lie in [1, " + std::to_string(n - 1) + "]");
  const int n_train = n - cfg.n_test;

  MultiLabelDataset train;
  train.features = task.data.features.topRows(n_train);
  train.labels.assign(task.data.labels.begin(), task.data.labels.begin() + n_train);
  train.n_categories = task.data.n_categories;
  train.standardized = task.data.standardized;

  auto order = categories_by_frequency(train);
  if (static_cast<int>(order.size()) < cfg.n_arms)
    throw ConfigError("data has fewer categories than n_arms");
  order.resize(static_cast<std::size_t>(cfg.n_arms));
  task.arm_categories = order;
  if (!category_cluster.empty())
    for (int cat : order) task.arm_cluster.push_back(category_cluster[static_cast<std::size_t>(cat)]);

  Rng rng(derive_seed({seed, kOfflineStream}));
  task.offline = build_offline_dataset(train, task.arm_categories, cfg.c, rng, cfg.sampling);

  task.test_users = task.data.features.bottomRows(cfg.n_test);
  std::vector<int> test_rows(static_cast<std::size_t>(cfg.n_test));
  std::iota(test_rows.begin(), test_rows.end(), n_train);
  task.test_labels = arm_labels(task.data, test_rows, task.arm_categories);
  return task;
}

MoEModel init_moe_model(const MoEExperimentConfig& cfg, const MoETask& task, std::uint64_t seed) {
  const MoEShape shape{cfg.n_arms, task.data.dim(), cfg.n_experts, cfg.d_e, cfg.s};
  Rng rng(derive_seed({seed, kInitStream}));
  std::optional<std::vector<int>> gating;
  if (cfg.item_only_gating) gating = std::vector<int>{};
  MoEModel m = MoEModel::random(shape, cfg.resolved_sigma2(), rng, cfg.shared_subset, gating);
  if (cfg.model == MoEModelKind::kRandomPools) {
    Rng pool_rng(derive_seed({seed, kPoolStream}));
    m.freeze_gating(pool_allocate(cfg.n_arms, cfg.n_experts, pool_rng));
  }
  return m;
}

MoEEvaluation evaluate_moe(const MoEModel& model, const MoETask& task) {
  MoEEvaluation ev;
  ev.at5 = precision_recall_at_k(moe_score(model, task.test_users), task.test_labels, 5);
  const auto rows = std::min<Eigen::Index>(kDistillContexts, task.test_users.rows());
  ev.distilled = distill_allocation(model, task.test_users.topRows(rows));
  if (!task.arm_cluster.empty())
    ev.clustering_accuracy = clustering_accuracy(ev.distilled, task.arm_cluster, task.n_clusters);
  return ev;
}

std::string moe_eval_row(const MoEExperimentConfig& cfg, std::uint64_t seed,
                         const MoEEvaluation& ev) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%llu,%d,%d,%d,%d,%.17g,%.17g", to_string(cfg.model).c_str(),
                static_cast<unsigned long long>(seed), cfg.c, cfg.s, cfg.d_e, cfg.n_experts,
                ev.at5.precision, ev.at5.recall);
  return buf;
}

MoEExperimentConfig parse_moe_config_text(const std::string& text, const std::string& origin,
                                          const std::string& base_dir) {
  using detail::Section;
  const detail::Locator loc(text);
  const detail::Ctx ctx{origin, &loc, base_dir};
  const auto root = detail::parse_json_text(text, origin);
  Section top(root, {}, ctx);
  MoEExperimentConfig cfg;

  if (const auto* data = top.get("data")) {
    Section sec(*data, {"data"}, ctx);
    const std::string kind = sec.value<std::string>("kind", "synthetic");
    if (kind == "synthetic") {
      auto& p = cfg.synthetic;
      p.n_examples = sec.value<int>("n_examples", p.n_examples);
      p.d = sec.value<int>("d", p.d);
      p.n_categories = sec.value<int>("n_categories", p.n_categories);
      p.clusters = sec.value<int>("clusters", p.clusters);
      p.exponent = sec.value<double>("exponent", p.exponent);
      p.center_scale = sec.value<double>("center_scale", p.center_scale);
      p.modulation = sec.value<double>("modulation", p.modulation);
      p.direction_scale = sec.value<double>("direction_scale", p.direction_scale);
    } else if (kind == "dataset") {
      auto path = [&](const std::string& key) {
        auto v = sec.opt<std::string>(key);
        if (!v) detail::fail(ctx, sec.at(key), "required for dataset input");
        std::filesystem::path p(*v);
        if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
        return p.string();
      };
      cfg.features_path = path("features");
      cfg.labels_path = path("labels");
      cfg.standardize = sec.value<bool>("standardize", cfg.standardize);
    } else {
      detail::fail(ctx, sec.at("kind"), "unknown data kind '" + kind + "'");
    }
    cfg.n_test = sec.value<int>("n_test", cfg.n_test);
    sec.finish();
  }

  cfg.n_arms = top.value<int>("n_arms", cfg.n_arms);
  cfg.c = top.value<int>("c", cfg.c);
  cfg.sampling =
      detail::parse_enum(top, "sampling", parse_offline_sampling).value_or(cfg.sampling);

  if (const auto* model = top.get("model")) {
    Section sec(*model, {"model"}, ctx);
    cfg.model = detail::parse_enum(sec, "kind", parse_moe_model_kind).value_or(cfg.model);
    cfg.n_experts = sec.value<int>("n_experts", cfg.n_experts);
    cfg.d_e = sec.value<int>("d_e", cfg.d_e);
    cfg.s = sec.value<int>("s", cfg.s);
    cfg.sigma2 = sec.opt<double>("sigma2");
    if (cfg.sigma2 && !(*cfg.sigma2 > 0.0)) detail::fail(ctx, sec.at("sigma2"), "must be positive");
    if (auto g = sec.opt<std::string>("gating")) {
      if (*g == "item") cfg.item_only_gating = true;
      else if (*g == "full") cfg.item_only_gating = false;
      else detail::fail(ctx, sec.at("gating"), "expected 'full' or 'item'");
    }
    cfg.shared_subset = sec.value<bool>("shared_subset", cfg.shared_subset);
    sec.finish();
  }

  if (const auto* train = top.get("train")) {
    Section sec(*train, {"train"}, ctx);
    auto& t = cfg.train;
    t.optimizer = detail::parse_enum(sec, "optimizer", parse_optimizer).value_or(t.optimizer);
    t.learning_rate = sec.value<double>("learning_rate", t.learning_rate);
    t.steps = sec.value<std::int64_t>("steps", t.steps);
    t.batch_size = sec.value<int>("batch_size", t.batch_size);
    t.trace_every = sec.value<std::int64_t>("trace_every", t.trace_every);
    if (!(t.learning_rate > 0.0)) detail::fail(ctx, sec.at("learning_rate"), "must be positive");
    if (t.steps < 0) detail::fail(ctx, sec.at("steps"), "must be non-negative");
    if (t.batch_size < 1) detail::fail(ctx, sec.at("batch_size"), "must be at least 1");
    if (t.trace_every < 1) detail::fail(ctx, sec.at("trace_every"), "must be at least 1");
    sec.finish();
  }

  cfg.seeds = top.value<int>("seeds", cfg.seeds);
  if (cfg.seeds < 1) detail::fail(ctx, top.at("seeds"), "must be at least 1");
  cfg.root_seed = top.value<std::uint64_t>("root_seed", cfg.root_seed);
  cfg.out = top.value<std::string>("out", cfg.out);
  top.finish();

  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(origin + ": " + msg);
  };
  const int d = cfg.features_path.empty() ? cfg.synthetic.d : -1;
  check(cfg.n_arms >= 1 && cfg.c >= 1, "n_arms and c must be positive");
  check(cfg.n_experts >= 1 && cfg.n_experts <= cfg.n_arms, "n_experts must lie in [1, n_arms]");
  check(cfg.d_e >= 1, "d_e must be positive");
  check(cfg.s >= 1 && (d < 0 || cfg.s <= d), "s must lie in [1, d]");
  if (cfg.features_path.empty())
    check(cfg.n_arms <= cfg.synthetic.n_categories, "n_arms exceeds n_categories");
  return cfg;
}

MoEExperimentConfig parse_moe_config(const std::string& path) {
  return parse_moe_config_text(detail::read_text_file(path), path, detail::parent_dir(path));
}

}  // namespace twostage
