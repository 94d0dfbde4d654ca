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

// twostage: experiment runner. Exit codes: 0 ok, 2 config error, 3 runtime
// failure.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "twostage/config.hpp"
#include "twostage/counterexample.hpp"
#include "twostage/error.hpp"
#include "twostage/moe_experiment.hpp"
#include "twostage/sweep.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace twostage;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config;
  std::optional<int> seeds;
  std::string out;
  std::optional<int> parallel;
  bool resume = false;
};

void add_common(CLI::App* sub, Common& c, bool need_config = true) {
  auto* opt = sub->add_option("--config", c.config, "JSON config file");
  if (need_config) opt->required();
  sub->add_option("--seeds", c.seeds, "number of seeds (overrides the config)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--out", c.out, "output directory (overrides the config)");
  sub->add_option("--parallel", c.parallel, "worker threads")->check(CLI::PositiveNumber);
  sub->add_flag("--resume", c.resume, "skip runs whose result files already exist");
}

int run_grid(const Common& c, std::optional<EnvKind> required_env, bool allow_grid) {
  ExperimentConfig cfg = parse_config(c.config);
  if (required_env && cfg.env.kind != *required_env)
    throw ConfigError(c.config + ": environment kind must be '" + to_string(*required_env) + "'");
  const bool has_grid = !cfg.grid.n_arms.empty() || !cfg.grid.d.empty() ||
                        !cfg.grid.n_nominators.empty() || !cfg.grid.noise_std.empty() ||
                        !cfg.grid.rho.empty() || !cfg.grid.s.empty() || !cfg.grid.systems.empty();
  if (has_grid && !allow_grid)
    throw ConfigError(c.config + ": has a sweep block; use the sweep subcommand");
  if (c.seeds) cfg.seeds = *c.seeds;
  if (!c.out.empty()) cfg.out = c.out;
  if (c.parallel) cfg.parallel = *c.parallel;

  const auto t0 = std::chrono::steady_clock::now();
  const SweepReport rep = run_sweep(cfg, SweepOptions{cfg.parallel, c.resume});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("cells %d (skipped %d with N > |A|), runs executed %d, reused %d, failed %d, %.1fs\n",
              rep.cells, rep.skipped_cells, rep.executed, rep.reused, rep.failed, secs);
  for (const auto& r : rep.rows)
    if (r.status != "ok")
      std::fprintf(stderr, "run %s (cell %d seed %d): %s\n", r.hash.c_str(), r.cell, r.seed_index,
                   r.status.c_str());
  if (rep.failed < static_cast<int>(rep.rows.size())) {
    const auto agg = summarize(cfg.out);
    for (const auto& a : agg)
      std::printf("cell %d %-5s |A|=%d d=%d N=%d s=%d: R2s %.3f +- %.3f  RN %.3f  RR %.3f\n",
                  a.key.cell, a.key.system.c_str(), a.key.n_arms, a.key.d, a.key.n_nominators,
                  a.key.s, a.regret_2s.mean, a.regret_2s.se2, a.regret_nom.mean,
                  a.regret_rank.mean);
  }
  std::printf("wrote %s\n", (fs::path(cfg.out) / "summary.csv").string().c_str());
  return rep.failed > 0 ? kExitRuntime : 0;
}

json vec_json(const Eigen::Vector2d& v) { return json::array({v[0], v[1]}); }

struct CounterexampleArgs {
  std::string construction = "eq7";
  std::string mode = "own";
  bool bandit = false;
  bool third = false;
  bool greedy = false;
  std::optional<std::int64_t> T;
  std::uint64_t seed = 0;
  std::optional<double> lambda;
  std::vector<double> rbar;
  std::string out;
};

int run_counterexample(const CounterexampleArgs& a) {
  const Construction c = parse_construction(a.construction);
  const TrainingMode mode = parse_training_mode(a.mode);
  json report;
  report["construction"] = to_string(c);
  report["mode"] = to_string(mode);
  if (!a.bandit) {
    if (a.third) throw ConfigError("--third-nominator applies to --bandit runs");
    std::vector<double> rbar = a.rbar;
    if (rbar.empty())
      rbar = c == Construction::kEq6 ? std::vector<double>{0.25, 0.5, 1.0}
                                     : std::vector<double>{0.75, 1.0, 1.0 / 6.0, 0.875};
    const auto r = supervised_limit_check(c, rbar, mode, a.T.value_or(50000),
                                          a.lambda.value_or(1e-6), RewardNoise::kBernoulli, a.seed);
    report["setting"] = "supervised";
    report["rounds"] = r.rounds;
    report["theta_hat"] = vec_json(r.theta_hat);
    report["theta_star"] = vec_json(r.theta_star);
    report["max_abs_error"] = r.max_abs_error;
    report["argmax_arm"] = r.argmax_arm;
    report["optimal_arm"] = r.optimal_arm;
    report["regret_slope_grid"] = json::array();
  } else {
    if (c != Construction::kEq7) throw ConfigError("the bandit demo uses the eq7 construction");
    BanditDemoParams p;
    p.mode = mode;
    p.third_nominator = a.third;
    p.T = a.T.value_or(p.T);
    p.seed = a.seed;
    if (a.lambda) p.agent.lambda = *a.lambda;
    if (!a.rbar.empty()) p.rbar = a.rbar;
    if (a.greedy) p.nominator_kind = p.ranker_kind = AgentKind::kGreedy;
    const auto r = bandit_regret_demo(p);
    const auto l2 = lemma2_convergence_check(r);
    report["setting"] = "bandit";
    report["rounds"] = p.T;
    report["third_nominator"] = p.third_nominator;
    report["agents"] = to_string(p.nominator_kind);
    report["theta_hat"] = vec_json(r.theta_hat);
    report["theta_star"] = vec_json(r.theta_star);
    report["argmax_arm"] = r.argmax_arm;
    json grid = json::array();
    for (std::size_t i = 0; i < r.grid.size(); ++i)
      grid.push_back({{"t", r.grid[i]},
                      {"regret_2s", r.regret_2s_slope[i]},
                      {"regret_nom", r.regret_nom_slope[i]},
                      {"regret_rank", r.regret_rank_slope[i]},
                      {"theta", vec_json(r.theta_trace[i])}});
    report["regret_slope_grid"] = grid;
    report["sign_stable"] = l2.sign_stable;
    report["expected_sign"] = l2.expected_sign;
    report["max_round_residual"] = r.max_round_residual;
    report["cumulative_residual"] = r.cumulative_residual;
  }
  const std::string text = report.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    std::ofstream f(a.out);
    if (!f) throw DataError("cannot write " + a.out);
    f << text;
    std::printf("wrote %s\n", a.out.c_str());
  }
  return 0;
}

MoEExperimentConfig moe_config(const Common& c) {
  MoEExperimentConfig cfg = parse_moe_config(c.config);
  if (c.seeds) cfg.seeds = *c.seeds;
  if (!c.out.empty()) cfg.out = c.out;
  if (c.parallel) omp_set_num_threads(*c.parallel);
  return cfg;
}

std::string checkpoint_path(const MoEExperimentConfig& cfg, int i) {
  return (fs::path(cfg.out) / (to_string(cfg.model) + "_seed" + std::to_string(i) + ".tsmoe")).string();
}

int run_moe_train(const Common& c) {
  const MoEExperimentConfig cfg = moe_config(c);
  fs::create_directories(cfg.out);
  for (int i = 0; i < cfg.seeds; ++i) {
    const std::string path = checkpoint_path(cfg, i);
    if (c.resume && fs::exists(path)) {
      std::printf("seed %d: %s exists, skipped\n", i, path.c_str());
      continue;
    }
    const std::uint64_t seed = moe_seed(cfg, i);
    const MoETask task = prepare_moe_task(cfg, seed);
    MoEModel model = init_moe_model(cfg, task, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    const auto trace = moe_train(model, task.offline, tc);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_moe(model, path);
    std::ofstream tf(path.substr(0, path.size() - 6) + "_trace.csv");
    tf << "step,loglik\n";
    char buf[64];
    for (const auto& p : trace) {
      std::snprintf(buf, sizeof buf, "%lld,%.17g\n", static_cast<long long>(p.step), p.loglik);
      tf << buf;
    }
    std::printf("seed %d: %s trained %lld steps in %.1fs, loglik %.4f -> %.4f, wrote %s\n", i,
                to_string(cfg.model).c_str(), static_cast<long long>(tc.steps), secs,
                trace.empty() ? 0.0 : trace.front().loglik, trace.empty() ? 0.0 : trace.back().loglik,
                path.c_str());
  }
  return 0;
}

int run_moe_eval(const Common& c, const std::string& model_path) {
  const MoEExperimentConfig cfg = moe_config(c);
  fs::create_directories(cfg.out);
  const fs::path csv = fs::path(cfg.out) / "moe_eval.csv";
  const bool fresh = !fs::exists(csv);
  std::ofstream out(csv, std::ios::app);
  if (!out) throw DataError("cannot write " + csv.string());
  if (fresh) out << kMoeEvalCsvHeader << '\n';
  const int n = model_path.empty() ? cfg.seeds : 1;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t seed = moe_seed(cfg, i);
    const MoEModel model = load_moe(model_path.empty() ? checkpoint_path(cfg, i) : model_path);
    const MoETask task = prepare_moe_task(cfg, seed);
    if (model.shape().n_arms != cfg.n_arms || model.shape().d != task.data.dim())
      throw ConfigError("checkpoint shape does not match the config");
    const MoEEvaluation ev = evaluate_moe(model, task);
    out << moe_eval_row(cfg, seed, ev) << '\n';
    std::printf("seed %d: %s P@5 %.4f R@5 %.4f", i, to_string(cfg.model).c_str(), ev.at5.precision,
                ev.at5.recall);
    if (ev.clustering_accuracy) std::printf(" distilled clustering accuracy %.2f", *ev.clustering_accuracy);
    std::printf("\n");
  }
  std::printf("appended to %s\n", csv.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage recommender bandit toolkit"};
  app.require_subcommand(1);

  Common synth, dataset, sweep, moe_train_args, moe_eval_args;
  add_common(app.add_subcommand("synth-run", "run one synthetic configuration over seeds"), synth);
  add_common(app.add_subcommand("dataset-run", "run one multi-label dataset configuration"), dataset);
  add_common(app.add_subcommand("sweep", "run every cell of a sweep grid"), sweep);

  CounterexampleArgs cx;
  auto* cx_cmd = app.add_subcommand("counterexample", "nominator-objective counterexamples");
  cx_cmd->add_option("--construction", cx.construction, "eq6 or eq7")->capture_default_str();
  cx_cmd->add_option("--mode", cx.mode, "all, own or chosen")->capture_default_str();
  cx_cmd->add_flag("--bandit", cx.bandit, "masked-row bandit demo instead of full feedback");
  cx_cmd->add_flag("--third-nominator", cx.third, "add the repairing third nominator");
  cx_cmd->add_flag("--greedy", cx.greedy, "greedy nominators and ranker in the bandit demo");
  cx_cmd->add_option("--T", cx.T, "rounds");
  cx_cmd->add_option("--seed", cx.seed, "seed")->capture_default_str();
  cx_cmd->add_option("--lambda", cx.lambda, "ridge regulariser before input scaling");
  cx_cmd->add_option("--rbar", cx.rbar, "expected reward per row");
  cx_cmd->add_option("--out", cx.out, "JSON report path (default stdout)");

  auto* mt = app.add_subcommand("moe-train", "train MoE models and write checkpoints");
  add_common(mt, moe_train_args);
  auto* me = app.add_subcommand("moe-eval", "evaluate checkpoints on the held-out split");
  add_common(me, moe_eval_args);
  std::string model_path;
  me->add_option("--model", model_path, "evaluate this checkpoint instead of the trained seeds");

  int pools = 10, arms_per_pool = 10;
  double frac = 0.1;
  std::int64_t trials = 1000000;
  std::uint64_t cov_seed = 0;
  std::optional<int> cov_threads;
  auto* cov = app.add_subcommand("coverage-prob", "P(some optimal arm is a candidate)");
  cov->add_option("--pools", pools, "disjoint uniform nominators")->capture_default_str();
  cov->add_option("--arms-per-pool", arms_per_pool)->capture_default_str();
  cov->add_option("--frac", frac, "fraction of optimal arms")->capture_default_str();
  cov->add_option("--trials", trials)->capture_default_str();
  cov->add_option("--seed", cov_seed)->capture_default_str();
  cov->add_option("--parallel", cov_threads, "worker threads")->check(CLI::PositiveNumber);

  std::string summary_dir;
  auto* sum = app.add_subcommand("summarize", "aggregate summary.csv across seeds");
  sum->add_option("--out", summary_dir, "results directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const auto* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    if (name == "synth-run") return run_grid(synth, EnvKind::kSynthetic, false);
    if (name == "dataset-run") return run_grid(dataset, EnvKind::kDataset, false);
    if (name == "sweep") return run_grid(sweep, std::nullopt, true);
    if (name == "counterexample") return run_counterexample(cx);
    if (name == "moe-train") return run_moe_train(moe_train_args);
    if (name == "moe-eval") return run_moe_eval(moe_eval_args, model_path);
    if (name == "coverage-prob") {
      if (cov_threads) omp_set_num_threads(*cov_threads);
      const double est = candidate_coverage_probability(pools, frac, trials, cov_seed, arms_per_pool);
      const double exact = 1.0 - std::pow(1.0 - frac, pools);
      std::cout << json{{"pools", pools},  {"arms_per_pool", arms_per_pool}, {"frac_optimal", frac},
                        {"trials", trials}, {"estimate", est}, {"closed_form", exact}}
                       .dump(2)
                << "\n";
      return 0;
    }
    if (name == "summarize") {
      const auto agg = summarize(summary_dir);
      std::printf("%zu cells, wrote %s\n", agg.size(),
                  (fs::path(summary_dir) / "aggregate.csv").string().c_str());
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitRuntime;
}
