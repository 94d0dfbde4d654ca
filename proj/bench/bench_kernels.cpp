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

// OpenMP kernels against their serial references.

#include <benchmark/benchmark.h>

#include <random>

#include "twostage/moe.hpp"
#include "twostage/twostage.hpp"

using namespace twostage;

namespace {

struct MoEFixture {
  MoEModel model;
  OfflineBatch batch;
};

MoEFixture make_moe(int batch_size) {
  Rng rng(1);
  MoEFixture f{MoEModel::random(MoEShape{100, 50, 10, 10, 25}, 0.1, rng), {}};
  std::normal_distribution<double> normal;
  f.batch.x.resize(batch_size, 50);
  f.batch.r.resize(batch_size);
  for (Eigen::Index i = 0; i < f.batch.x.size(); ++i) f.batch.x.data()[i] = normal(rng);
  for (int t = 0; t < batch_size; ++t) {
    f.batch.arms.push_back(static_cast<ArmId>(rng() % 100));
    f.batch.r[t] = static_cast<double>(rng() % 2);
  }
  return f;
}

void BM_MoeGrad(benchmark::State& state) {
  const auto f = make_moe(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(moe_grad(f.model, f.batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_MoeGradSerial(benchmark::State& state) {
  const auto f = make_moe(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(moe_grad_serial(f.model, f.batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Coverage(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(candidate_coverage_probability(10, 0.1, state.range(0), 7));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_CoverageSerial(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(candidate_coverage_probability_serial(10, 0.1, state.range(0), 7));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_MoeGrad)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MoeGradSerial)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Coverage)->Arg(100000)->Arg(1000000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CoverageSerial)->Arg(100000)->Arg(1000000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
