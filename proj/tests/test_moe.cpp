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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "twostage/error.hpp"
#include "twostage/moe.hpp"

using namespace twostage;

namespace {

MoEModel small_model(std::uint64_t seed, double sigma2 = 0.5) {
  Rng rng(seed);
  MoEModel m = MoEModel::random(MoEShape{6, 5, 3, 2, 3}, sigma2, rng);
  std::normal_distribution<double> n(0.0, 0.5);
  for (Eigen::Index i = static_cast<Eigen::Index>(m.gating_offset()); i < m.params().size(); ++i)
    m.params()[i] = n(rng);
  return m;
}

OfflineBatch random_batch(int B, int d, int n_arms, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n;
  std::uniform_int_distribution<int> arm(0, n_arms - 1);
  OfflineBatch b;
  b.x.resize(B, d);
  b.r.resize(B);
  for (int t = 0; t < B; ++t) {
    for (int j = 0; j < d; ++j) b.x(t, j) = n(rng);
    b.arms.push_back(arm(rng));
    b.r[t] = (rng() & 1) ? 1.0 : 0.0;
  }
  return b;
}

}  // namespace

TEST_SUITE("moe") {

TEST_CASE("gating is a probability vector") {
  const MoEModel m = small_model(1);
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(5, -1, 1);
  for (ArmId a = 0; a < 6; ++a) {
    const Eigen::VectorXd p = m.gating(x, a);
    CHECK(p.sum() == doctest::Approx(1.0));
    CHECK(p.minCoeff() >= 0.0);
  }
}

TEST_CASE("gradient matches central differences") {
  MoEModel m = small_model(2);
  const OfflineBatch b = random_batch(40, 5, 6, 3);
  const Eigen::VectorXd g = moe_grad(m, b);
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < m.params().size(); ++i) {
    const double keep = m.params()[i];
    m.params()[i] = keep + h;
    const double up = moe_loglik(m, b);
    m.params()[i] = keep - h;
    const double down = moe_loglik(m, b);
    m.params()[i] = keep;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - g[i]) / std::max(1e-3, std::abs(fd) + std::abs(g[i])));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("parallel gradient equals the serial reference") {
  const MoEModel m = small_model(4);
  const OfflineBatch b = random_batch(1000, 5, 6, 5);
  CHECK((moe_grad(m, b) - moe_grad_serial(m, b)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("one-hot gating reproduces the frozen model") {
  MoEModel soft = small_model(6);
  const PoolAllocation pools{{{0, 3}, {1, 4}, {2, 5}}, 6};
  MoEModel hard = soft;
  hard.freeze_gating(pools);
  set_one_hot_gating(soft, pools);
  const OfflineBatch b = random_batch(200, 5, 6, 7);
  CHECK(moe_loglik(soft, b) == doctest::Approx(moe_loglik(hard, b)).epsilon(1e-12));
  const Eigen::VectorXd gs = moe_grad(soft, b), gh = moe_grad(hard, b);
  const auto off = static_cast<Eigen::Index>(soft.gating_offset());
  CHECK((gs.head(off) - gh.head(off)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(gh.tail(gh.size() - off).cwiseAbs().maxCoeff() == 0.0);
  const auto distilled = distill_allocation(hard, b.x);
  CHECK(distilled.pools == pools.pools);
}

TEST_CASE("uniform gating distills into nonempty pools") {
  Rng rng(8);
  const MoEModel m = MoEModel::random(MoEShape{7, 4, 3, 2, 2}, 1.0, rng);
  RowMatrix ctx = RowMatrix::Random(10, 4);
  const auto p = distill_allocation(m, ctx);
  p.validate();
  CHECK(p.disjoint());
  for (const auto& pool : p.pools) CHECK(!pool.empty());
}

TEST_CASE("relabelling experts leaves the likelihood unchanged") {
  const MoEModel m = small_model(9);
  const std::vector<int> perm = {2, 0, 1};
  auto feats = m.expert_features();
  std::vector<std::vector<int>> pf(3);
  for (int n = 0; n < 3; ++n) pf[static_cast<std::size_t>(perm[n])] = feats[static_cast<std::size_t>(n)];
  MoEModel q(m.shape(), pf, m.gating_features(), m.sigma2());
  for (int n = 0; n < 3; ++n) {
    q.E(perm[n]) = m.E(n);
    q.W(perm[n]) = m.W(n);
    q.G().row(perm[n]) = m.G().row(n);
    q.V().col(perm[n]) = m.V().col(n);
  }
  const OfflineBatch b = random_batch(100, 5, 6, 10);
  CHECK(moe_loglik(q, b) == doctest::Approx(moe_loglik(m, b)).epsilon(1e-12));
}

TEST_CASE("identical experts give no gating gradient") {
  MoEModel m = small_model(11);
  for (int n = 1; n < 3; ++n) {
    m.E(n) = m.E(0);
    m.W(n) = m.W(0);
  }
  MoEModel shared(m.shape(), std::vector<std::vector<int>>(3, m.expert_features()[0]),
                  m.gating_features(), m.sigma2());
  shared.params() = m.params();
  const OfflineBatch b = random_batch(50, 5, 6, 12);
  const Eigen::VectorXd g = moe_grad(shared, b);
  const auto off = static_cast<Eigen::Index>(shared.gating_offset());
  CHECK(g.tail(g.size() - off).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("single-example likelihood by hand") {
  MoEModel m(MoEShape{1, 1, 1, 1, 1}, {{0}}, {0}, 0.25);
  m.E(0)(0, 0) = 2.0;
  m.W(0)(0, 0) = 0.5;
  OfflineBatch b;
  b.x = RowMatrix::Constant(1, 1, 3.0);
  b.arms = {0};
  b.r = Eigen::VectorXd::Constant(1, 1.0);
  // prediction 3, residual -2: -(4) / (2 * 0.25)
  CHECK(moe_loglik(m, b) == doctest::Approx(-8.0));
  const Eigen::VectorXd g = moe_grad(m, b);
  // d/dE = res/sigma2 * W x = -8 * 1.5; d/dW = -8 * E x = -8 * 6
  CHECK(g[0] == doctest::Approx(-12.0));
  CHECK(g[1] == doctest::Approx(-48.0));
}

TEST_CASE("training raises the likelihood") {
  MoEModel m = small_model(13);
  OfflineDataset data;
  const OfflineBatch b = random_batch(300, 5, 6, 14);
  data.features = b.x;
  data.n_arms = 6;
  for (int t = 0; t < b.size(); ++t) {
    data.rows.push_back(t);
    data.arms.push_back(b.arms[static_cast<std::size_t>(t)]);
    data.rewards.push_back(b.r[t]);
  }
  const double before = moe_loglik(m, data.all());
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.batch_size = 64;
  const auto trace = moe_train(m, data, cfg);
  CHECK(!trace.empty());
  CHECK(moe_loglik(m, data.all()) > before);
}

TEST_CASE("checkpoint round trip and corruption") {
  MoEModel m = small_model(15);
  m.freeze_gating(PoolAllocation{{{0, 1}, {2, 3}, {4, 5}}, 6});
  const auto dir = std::filesystem::temp_directory_path() / "twostage_test_moe";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "m.tsmoe").string();
  save_moe(m, path);
  const MoEModel r = load_moe(path);
  // parameters are stored as float32
  CHECK(r.params() == m.params().cast<float>().cast<double>());
  CHECK(r.owner() == m.owner());
  CHECK(r.expert_features() == m.expert_features());
  CHECK(r.sigma2() == m.sigma2());

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS_AS(load_moe(path), DataError);
  save_moe(m, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
  CHECK_THROWS_AS(load_moe(path), DataError);
  CHECK_THROWS_AS(load_moe((dir / "missing.tsmoe").string()), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("precision and recall at K by hand") {
  Eigen::MatrixXd s(2, 4);
  s << 0.9, 0.1, 0.8, 0.0,
       0.0, 0.2, 0.1, 0.3;
  const std::vector<std::vector<ArmId>> labels = {{0, 1}, {3}};
  const auto pr = precision_recall_at_k(s, labels, 2);
  // row 0: top {0, 2}, one hit; row 1: top {3, 1}, one hit
  CHECK(pr.precision == doctest::Approx(0.5));
  CHECK(pr.recall == doctest::Approx((0.5 + 1.0) / 2));
  CHECK_THROWS(precision_recall_at_k(s, labels, 0));
}

TEST_CASE("clustering accuracy uses the best one-to-one matching") {
  const PoolAllocation p{{{0, 1, 2}, {3, 4}, {5}}, 6};
  const std::vector<int> truth = {1, 1, 0, 0, 0, 2};
  // pool0->1 (2), pool1->0 (2), pool2->2 (1)
  CHECK(clustering_accuracy(p, truth, 3) == doctest::Approx(5.0 / 6.0));
  const PoolAllocation perfect{{{2, 3, 4}, {0, 1}, {5}}, 6};
  CHECK(clustering_accuracy(perfect, truth, 3) == 1.0);
}

TEST_CASE("balanced offline sampling is half positive") {
  MultiLabelDataset ds;
  ds.features = Eigen::MatrixXd::Random(100, 3);
  ds.n_categories = 2;
  for (int i = 0; i < 100; ++i) ds.labels.push_back(i % 10 == 0 ? std::vector<int>{0} : std::vector<int>{1});
  Rng rng(1);
  const std::vector<int> cats = {0, 1};
  const auto bal = build_offline_dataset(ds, cats, 200, rng, OfflineSampling::kBalanced);
  CHECK(bal.size() == 400);
  CHECK(bal.positive_rate() == doctest::Approx(0.5));
  const auto uni = build_offline_dataset(ds, cats, 5000, rng, OfflineSampling::kUniform);
  CHECK(uni.positive_rate() == doctest::Approx(0.5).epsilon(0.05));
  CHECK_THROWS_AS(build_offline_dataset(ds, std::vector<int>{7}, 1, rng), ConfigError);
}

}  // TEST_SUITE
