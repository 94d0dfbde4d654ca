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

#include "twostage/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "twostage/error.hpp"

namespace twostage {

namespace fs = std::filesystem;

namespace {

template <typename T>
std::vector<T> or_base(const std::vector<T>& swept, T base) {
  return swept.empty() ? std::vector<T>{base} : swept;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string clean_status(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

std::string row_line(const RunRow& r) {
  std::ostringstream o;
  o << r.cell << ',' << r.hash << ',' << r.system << ',' << r.env << ',' << r.n_arms << ','
    << r.d << ',' << r.n_nominators << ',' << r.s << ',' << fmt(r.d_over_s()) << ','
    << fmt(r.noise_std) << ',' << r.training_mode << ',' << r.seed_index << ',' << r.seed << ','
    << r.T << ',' << fmt(r.regret_2s) << ',' << fmt(r.regret_nom) << ','
    << fmt(r.regret_rank) << ',' << fmt(r.uniform_regret_2s) << ',' << clean_status(r.status);
  return o.str();
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

RunRow parse_row(const std::string& line, const std::string& where) {
  const auto f = split(line);
  if (f.size() != 19) throw DataError(where + ": expected 19 fields, got " + std::to_string(f.size()));
  try {
    RunRow r;
    r.cell = std::stoi(f[0]);
    r.hash = f[1];
    r.system = f[2];
    r.env = f[3];
    r.n_arms = std::stoi(f[4]);
    r.d = std::stoi(f[5]);
    r.n_nominators = std::stoi(f[6]);
    r.s = std::stoi(f[7]);
    r.noise_std = std::stod(f[9]);
    r.training_mode = f[10];
    r.seed_index = std::stoi(f[11]);
    r.seed = std::stoull(f[12]);
    r.T = std::stoll(f[13]);
    r.regret_2s = std::stod(f[14]);
    r.regret_nom = std::stod(f[15]);
    r.regret_rank = std::stod(f[16]);
    r.uniform_regret_2s = std::stod(f[17]);
    r.status = f[18];
    return r;
  } catch (const std::logic_error&) {
    throw DataError(where + ": malformed row");
  }
}

void write_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<int> resolve_categories(const EnvSpec& env, const MultiLabelDataset& ds) {
  if (!env.arm_categories.empty()) return env.arm_categories;
  auto order = categories_by_frequency(ds);
  if (static_cast<int>(order.size()) < env.n_arms)
    throw ConfigError("dataset has " + std::to_string(order.size()) +
                      " categories, fewer than n_arms=" + std::to_string(env.n_arms));
  order.resize(static_cast<std::size_t>(env.n_arms));
  return order;
}

}  // namespace

std::uint64_t run_seed(std::uint64_t root, int cell, int seed_index) {
  return derive_seed({root, static_cast<std::uint64_t>(cell), static_cast<std::uint64_t>(seed_index)});
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string run_hash(const Cell& cell, std::int64_t T, std::uint64_t seed) {
  nlohmann::json j{{"env", to_json(cell.env)},
                   {"system", to_json(cell.system, cell.d)},
                   {"T", T},
                   {"seed", seed}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

GridExpansion expand_grid(const ExperimentConfig& cfg, int data_dim) {
  const auto& g = cfg.grid;
  if (cfg.env.kind == EnvKind::kDataset && !g.d.empty())
    throw ConfigError("sweep: d cannot be swept for dataset environments");
  if (cfg.env.kind == EnvKind::kDataset && !g.noise_std.empty())
    throw ConfigError("sweep: noise_std cannot be swept for dataset environments");

  const auto systems = g.systems.empty() ? std::vector<SystemSpec>{cfg.system} : g.systems;
  const auto arms = or_base(g.n_arms, cfg.env.n_arms);
  const auto dims = cfg.env.kind == EnvKind::kDataset ? std::vector<int>{data_dim}
                                                     : or_base(g.d, cfg.env.d);
  const auto noises = or_base(g.noise_std, cfg.env.noise_std);

  GridExpansion out;
  int index = 0;
  for (const auto& base_sys : systems) {
    const auto noms = or_base(g.n_nominators, base_sys.n_nominators);
    for (int n_arms : arms)
      for (int d : dims)
        for (int n : noms)
          for (double noise : noises) {
            // rho or s, whichever is swept; a single pass otherwise.
            const std::size_t reps = std::max<std::size_t>(1, std::max(g.rho.size(), g.s.size()));
            for (std::size_t k = 0; k < reps; ++k) {
              Cell c;
              c.env = cfg.env;
              c.env.n_arms = n_arms;
              c.env.noise_std = noise;
              if (cfg.env.kind == EnvKind::kSynthetic) c.env.d = d;
              c.system = base_sys;
              if (!base_sys.pools.empty() && n != base_sys.n_nominators)
                throw ConfigError("sweep: n_nominators cannot be swept with explicit pools");
              c.system.n_nominators = n;
              if (!g.rho.empty()) {
                c.system.rho = g.rho[k];
                c.system.s.reset();
              } else if (!g.s.empty()) {
                c.system.s = g.s[k];
                c.system.rho.reset();
              }
              if (n > n_arms) {
                ++out.skipped;
                continue;
              }
              c.d = d;
              c.s = c.system.resolved_s(d);
              if (cfg.env.kind == EnvKind::kDataset && c.s > d)
                throw ConfigError("s=" + std::to_string(c.s) + " exceeds the data dimension " +
                                  std::to_string(d));
              validate(c.env, c.system);
              c.index = index++;
              out.cells.push_back(std::move(c));
            }
          }
  }
  return out;
}

RunContext make_run_context(const EnvSpec& env) {
  RunContext ctx;
  if (env.kind == EnvKind::kDataset) {
    auto ds = load_dataset(env.features_path, env.labels_path);
    if (env.standardize) ds = standardize_features(ds);
    ctx.dataset = std::make_shared<const MultiLabelDataset>(std::move(ds));
  }
  return ctx;
}

RunRow run_cell(const Cell& cell, int seed_index, const ExperimentConfig& cfg,
                const RunContext& ctx, const std::string& ledger_path) {
  const std::uint64_t seed = run_seed(cfg.root_seed, cell.index, seed_index);
  RunRow row;
  row.cell = cell.index;
  row.hash = run_hash(cell, cfg.T, seed);
  row.system = cell.system.label();
  row.env = to_string(cell.env.kind);
  row.n_arms = cell.env.n_arms;
  row.d = cell.d;
  row.n_nominators = cell.system.n_nominators;
  row.s = cell.s;
  row.noise_std = cell.env.kind == EnvKind::kSynthetic ? cell.env.noise_std : 0.0;
  row.training_mode =
      cell.system.kind == SystemKind::kTwoStage ? to_string(cell.system.mode) : "none";
  row.seed_index = seed_index;
  row.seed = seed;
  row.T = cfg.T;

  std::unique_ptr<Environment> env;
  const std::uint64_t env_seed = derive_seed({seed, 0});
  if (cell.env.kind == EnvKind::kSynthetic) {
    env = std::make_unique<SyntheticLinearEnv>(cell.d, cell.env.n_arms, cell.env.noise_std, env_seed);
  } else {
    if (!ctx.dataset) throw ConfigError("dataset environment without loaded data");
    env = std::make_unique<DatasetBanditEnv>(ctx.dataset, resolve_categories(cell.env, *ctx.dataset),
                                             env_seed, cell.env.fixed_instance);
  }

  Rng build(derive_seed({seed, 2}));
  const std::uint64_t sys_seed = derive_seed({seed, 1});
  std::unique_ptr<System> system;
  const auto& sp = cell.system;
  if (sp.kind == SystemKind::kSingleStage) {
    std::vector<int> features;
    if (cell.s < cell.d) features = feature_allocate(cell.d, cell.s, 1, build).subsets[0];
    system = std::make_unique<SingleStageSystem>(Agent(sp.agent, cell.s, sp.params),
                                                 std::move(features), cell.env.n_arms, sys_seed);
  } else {
    PoolAllocation pools = sp.pools.empty() ? pool_allocate(cell.env.n_arms, sp.n_nominators, build)
                                            : PoolAllocation{sp.pools, cell.env.n_arms};
    FeatureAllocation feats = feature_allocate(cell.d, cell.s, sp.n_nominators, build);
    std::vector<Agent> noms;
    for (int n = 0; n < sp.n_nominators; ++n) noms.emplace_back(sp.nominator, cell.s, sp.params);
    system = std::make_unique<TwoStageSystem>(Agent(sp.ranker, cell.d, sp.params), std::move(noms),
                                              std::move(pools), std::move(feats), sp.mode, sys_seed);
  }

  const RegretLedger ledger = run_experiment(*env, *system, cfg.T, !ledger_path.empty());
  SingleStageSystem uniform(Agent(AgentKind::kUniform, cell.d, sp.params), {}, cell.env.n_arms,
                            derive_seed({seed, 3}));
  const RegretLedger uref = run_experiment(*env, uniform, cfg.T, false);

  row.regret_2s = ledger.cum_2s();
  row.regret_nom = ledger.cum_nom();
  row.regret_rank = ledger.cum_rank();
  row.uniform_regret_2s = uref.cum_2s();
  row.max_residual = std::max({ledger.max_round_residual(), ledger.cumulative_residual(),
                               uref.max_round_residual(), uref.cumulative_residual()});
  if (!ledger_path.empty()) {
    std::ostringstream o;
    ledger.write_csv(o, row.hash, seed);
    write_atomically(ledger_path, o.str());
  }
  return row;
}

SweepReport run_sweep(const ExperimentConfig& cfg, const SweepOptions& opts) {
  const RunContext ctx = make_run_context(cfg.env);
  const GridExpansion grid = expand_grid(cfg, ctx.dataset ? ctx.dataset->dim() : 0);

  const fs::path out(cfg.out);
  fs::create_directories(out / "runs");
  if (cfg.write_ledgers) fs::create_directories(out / "ledgers");

  SweepReport rep;
  rep.cells = static_cast<int>(grid.cells.size());
  rep.skipped_cells = grid.skipped;
  const std::int64_t n_tasks = static_cast<std::int64_t>(grid.cells.size()) * cfg.seeds;
  rep.rows.resize(static_cast<std::size_t>(n_tasks));
  std::vector<char> reused(static_cast<std::size_t>(n_tasks), 0);

#pragma omp parallel for schedule(dynamic, 1) num_threads(opts.parallel)
  for (std::int64_t task = 0; task < n_tasks; ++task) {
    const Cell& cell = grid.cells[static_cast<std::size_t>(task / cfg.seeds)];
    const int seed_index = static_cast<int>(task % cfg.seeds);
    const std::uint64_t seed = run_seed(cfg.root_seed, cell.index, seed_index);
    const std::string hash = run_hash(cell, cfg.T, seed);
    const fs::path row_path = out / "runs" / (hash + ".csv");
    RunRow& row = rep.rows[static_cast<std::size_t>(task)];

    if (opts.resume && fs::exists(row_path)) {
      try {
        std::ifstream in(row_path);
        std::string header, line;
        std::getline(in, header);
        std::getline(in, line);
        RunRow prev = parse_row(line, row_path.string());
        if (header == kSummaryCsvHeader && prev.status == "ok" && prev.hash == hash) {
          row = prev;
          reused[static_cast<std::size_t>(task)] = 1;
          continue;
        }
      } catch (const std::exception&) {
        // unreadable: run again
      }
    }

    try {
      const std::string ledger_path =
          cfg.write_ledgers ? (out / "ledgers" / (hash + ".csv")).string() : std::string();
      row = run_cell(cell, seed_index, cfg, ctx, ledger_path);
    } catch (const std::exception& e) {
      row = RunRow{};
      row.cell = cell.index;
      row.hash = hash;
      row.system = cell.system.label();
      row.env = to_string(cell.env.kind);
      row.n_arms = cell.env.n_arms;
      row.d = cell.d;
      row.n_nominators = cell.system.n_nominators;
      row.s = cell.s;
      row.seed_index = seed_index;
      row.seed = seed;
      row.T = cfg.T;
      row.training_mode = "none";
      row.status = std::string("failed: ") + e.what();
    }
    try {
      write_atomically(row_path, std::string(kSummaryCsvHeader) + "\n" + row_line(row) + "\n");
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
    }
  }

  for (std::int64_t i = 0; i < n_tasks; ++i) {
    const auto& r = rep.rows[static_cast<std::size_t>(i)];
    if (reused[static_cast<std::size_t>(i)]) ++rep.reused;
    else ++rep.executed;
    if (r.status != "ok") ++rep.failed;
  }
  write_summary_csv((out / "summary.csv").string(), rep.rows);
  return rep;
}

void write_summary_csv(const std::string& path, std::span<const RunRow> rows) {
  std::string s = std::string(kSummaryCsvHeader) + "\n";
  for (const auto& r : rows) s += row_line(r) + "\n";
  write_atomically(path, s);
}

std::vector<RunRow> read_summary_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != kSummaryCsvHeader)
    throw DataError(path + ": unexpected header");
  std::vector<RunRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    rows.push_back(parse_row(line, path + ":" + std::to_string(lineno)));
  }
  return rows;
}

MeanSe mean_se2(std::span<const double> values) {
  MeanSe m;
  m.n = static_cast<int>(values.size());
  if (m.n == 0) return m;
  double sum = 0.0;
  for (double v : values) sum += v;
  m.mean = sum / m.n;
  if (m.n < 2) return m;
  double ss = 0.0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  m.se2 = 2.0 * std::sqrt(ss / (m.n - 1) / m.n);
  return m;
}

std::vector<AggregateRow> aggregate(std::span<const RunRow> rows) {
  std::vector<int> order;
  std::map<int, std::vector<const RunRow*>> by_cell;
  for (const auto& r : rows) {
    if (r.status != "ok") continue;
    if (!by_cell.count(r.cell)) order.push_back(r.cell);
    by_cell[r.cell].push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (int c : order) {
    const auto& group = by_cell[c];
    std::vector<double> r2s, rn, rr, uni;
    for (const RunRow* r : group) {
      r2s.push_back(r->regret_2s);
      rn.push_back(r->regret_nom);
      rr.push_back(r->regret_rank);
      uni.push_back(r->uniform_regret_2s);
    }
    AggregateRow a;
    a.key = *group.front();
    a.n_seeds = static_cast<int>(group.size());
    a.regret_2s = mean_se2(r2s);
    a.regret_nom = mean_se2(rn);
    a.regret_rank = mean_se2(rr);
    const double umean = mean_se2(uni).mean;
    if (umean == 0.0) {
      a.relative_defined = false;
    } else {
      std::vector<double> rel;
      for (double v : r2s) rel.push_back(v / umean);
      a.relative_regret = mean_se2(rel);
    }
    out.push_back(a);
  }
  return out;
}

void write_aggregate_csv(const std::string& path, std::span<const AggregateRow> rows) {
  std::ostringstream o;
  o << kAggregateCsvHeader << '\n';
  for (const auto& a : rows) {
    const RunRow& k = a.key;
    o << k.cell << ',' << k.system << ',' << k.env << ',' << k.n_arms << ',' << k.d << ','
      << k.n_nominators << ',' << k.s << ',' << fmt(k.d_over_s()) << ',' << fmt(k.noise_std)
      << ',' << k.training_mode << ',' << a.n_seeds << ',' << fmt(a.regret_2s.mean) << ','
      << fmt(a.regret_2s.se2) << ',' << fmt(a.regret_nom.mean) << ',' << fmt(a.regret_nom.se2)
      << ',' << fmt(a.regret_rank.mean) << ',' << fmt(a.regret_rank.se2) << ',';
    if (a.relative_defined)
      o << fmt(a.relative_regret.mean) << ',' << fmt(a.relative_regret.se2);
    else
      o << ',';
    o << '\n';
  }
  write_atomically(path, o.str());
}

std::vector<AggregateRow> summarize(const std::string& dir) {
  const fs::path summary = fs::path(dir) / "summary.csv";
  if (!fs::exists(summary)) throw DataError("no summary.csv in " + dir);
  const auto rows = read_summary_csv(summary.string());
  auto agg = aggregate(rows);
  if (agg.empty()) throw DataError(dir + ": no completed runs to summarize");
  write_aggregate_csv((fs::path(dir) / "aggregate.csv").string(), agg);
  return agg;
}

}  // namespace twostage
