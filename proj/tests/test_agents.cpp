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

#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "doctest.h"
#include "twostage/agents.hpp"

using namespace twostage;

namespace {

// Exact fractions for the normal-equation oracle.
struct Rational {
  __int128 num = 0, den = 1;

  Rational() = default;
  Rational(long long n, long long d = 1) : num(n), den(d) { normalize(); }

  static __int128 gcd(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
      const __int128 t = a % b;
      a = b;
      b = t;
    }
    return a == 0 ? 1 : a;
  }
  void normalize() {
    if (den < 0) {
      num = -num;
      den = -den;
    }
    const __int128 g = gcd(num, den);
    num /= g;
    den /= g;
  }
  friend Rational operator+(Rational a, const Rational& b) {
    Rational r;
    r.num = a.num * b.den + b.num * a.den;
    r.den = a.den * b.den;
    r.normalize();
    return r;
  }
  friend Rational operator-(Rational a, const Rational& b) {
    Rational nb = b;
    nb.num = -nb.num;
    return a + nb;
  }
  friend Rational operator*(Rational a, const Rational& b) {
    Rational r;
    r.num = a.num * b.num;
    r.den = a.den * b.den;
    r.normalize();
    return r;
  }
  friend Rational operator/(Rational a, const Rational& b) {
    Rational r;
    r.num = a.num * b.den;
    r.den = a.den * b.num;
    r.normalize();
    return r;
  }
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
};

// theta = (lambda I + sum w x x^T)^-1 sum w r x for 2-d integer data, by
// Cramer's rule in exact arithmetic.
std::array<Rational, 2> exact_ridge_2d(const std::vector<std::array<long long, 2>>& xs,
                                       const std::vector<long long>& rs,
                                       const std::vector<long long>& ws, Rational lambda) {
  Rational a = lambda, b = 0, c = lambda, u = 0, v = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Rational w(ws[i]), x0(xs[i][0]), x1(xs[i][1]), r(rs[i]);
    a = a + w * x0 * x0;
    b = b + w * x0 * x1;
    c = c + w * x1 * x1;
    u = u + w * r * x0;
    v = v + w * r * x1;
  }
  const Rational det = a * c - b * b;
  return {(u * c - b * v) / det, (a * v - b * u) / det};
}

}  // namespace

TEST_SUITE("agents") {

TEST_CASE("ridge update matches the exact normal equations") {
  const std::vector<std::array<long long, 2>> xs = {{1, 2}, {3, -1}, {0, 4}, {2, 2}, {-1, 5}};
  const std::vector<long long> rs = {3, -2, 7, 1, 4};
  const std::vector<long long> ws = {1, 2, 0, 3, 1};
  RidgeState st(2, 0.5);
  for (std::size_t i = 0; i < xs.size(); ++i)
    st.update(Eigen::Vector2d(xs[i][0], xs[i][1]), static_cast<double>(rs[i]),
              static_cast<double>(ws[i]));
  const auto exact = exact_ridge_2d(xs, rs, ws, Rational(1, 2));
  CHECK(st.theta()[0] == doctest::Approx(exact[0].to_double()).epsilon(1e-13));
  CHECK(st.theta()[1] == doctest::Approx(exact[1].to_double()).epsilon(1e-13));
  CHECK(st.n_obs() == 4);  // the w = 0 tuple is not absorbed
}

TEST_CASE("ridge: Sherman-Morrison stream agrees with a direct solve across re-solves") {
  const int d = 6;
  Rng rng(3);
  std::normal_distribution<double> n;
  RidgeState st = RidgeState::with_input_scaling(d, 1e-2);
  CHECK(st.lambda() == doctest::Approx(6e-2));
  Eigen::MatrixXd gram = st.lambda() * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd xr = Eigen::VectorXd::Zero(d);
  for (int i = 0; i < 3000; ++i) {
    Eigen::VectorXd x(d);
    for (int j = 0; j < d; ++j) x[j] = n(rng);
    const double r = n(rng), w = (i % 3) * 0.5;
    st.update(x, r, w);
    gram += w * x * x.transpose();
    xr += w * r * x;
  }
  const Eigen::VectorXd direct = gram.ldlt().solve(xr);
  CHECK((st.theta() - direct).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((st.sigma() * gram - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("ridge: zero weight is a no-op and bad input throws") {
  RidgeState st(3, 1.0);
  st.update(Eigen::Vector3d(1, 2, 3), 1.0);
  const RidgeState before = st;
  st.update(Eigen::Vector3d(5, 5, 5), 9.0, 0.0);
  CHECK(st.theta() == before.theta());
  CHECK(st.sigma() == before.sigma());
  CHECK(st.n_obs() == before.n_obs());
  CHECK_THROWS_AS(st.update(Eigen::Vector3d(1, 1, 1), 1.0, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(st.update(Eigen::Vector3d(1, NAN, 1), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(st.update(Eigen::Vector3d(1, 1, 1), INFINITY), std::invalid_argument);
  const RidgeState copy = ridge_update(before, Eigen::Vector3d(0, 1, 0), 2.0);
  CHECK(copy.n_obs() == before.n_obs() + 1);
}

TEST_CASE("argmax with uniform ties") {
  Rng rng(1);
  const std::vector<double> s = {0.5, 1.0, 1.0 + 1e-13, 0.2};
  int c1 = 0, c2 = 0;
  for (int i = 0; i < 4000; ++i) {
    const int k = argmax_uniform_ties(s, rng);
    CHECK((k == 1 || k == 2));
    c1 += k == 1;
    c2 += k == 2;
  }
  CHECK(std::abs(c1 - c2) < 300);
  const std::vector<double> clear = {0.5, 1.0, 1.0 + 1e-9};
  CHECK(argmax_uniform_ties(clear, rng) == 2);
}

TEST_CASE("UCB picks the largest optimistic score among eligible arms") {
  RidgeState st(2, 1.0);
  st.update(Eigen::Vector2d(1, 0), 1.0);
  st.update(Eigen::Vector2d(1, 0), 1.0);
  Eigen::MatrixXd ctx(3, 2);
  ctx << 1, 0, 0, 1, 0.9, 0;
  Rng rng(0);
  const std::vector<ArmId> all = {0, 1, 2};
  // theta = (2/3, 0); sigma = diag(1/3, 1)
  CHECK(greedy_select(st, ctx, all, rng) == 0);
  CHECK(ucb_select(st, UcbParams{0.0, 1.0}, ctx, all, rng) == 0);
  // alpha = 1: arm 0 = 2/3 + sqrt(1/3) = 1.244, arm 1 = 0 + 1 = 1
  CHECK(ucb_select(st, UcbParams{1.0, 1.0}, ctx, all, rng) == 0);
  // alpha = 3: arm 1 = 3 > 2/3 + 3 sqrt(1/3) = 2.398
  CHECK(ucb_select(st, UcbParams{3.0, 1.0}, ctx, all, rng) == 1);
  const std::vector<ArmId> only2 = {2};
  CHECK(ucb_select(st, UcbParams{3.0, 1.0}, ctx, only2, rng) == 2);
}

TEST_CASE("policy gradient: softmax, score-function gradient, one-tuple step") {
  PgState st{Eigen::Vector2d(0.5, -1.0), 0.1};
  Eigen::MatrixXd ctx(3, 2);
  ctx << 1, 0, 0, 1, 1, 1;
  const std::vector<ArmId> elig = {0, 2};
  const Eigen::VectorXd p = pg_probabilities(st, ctx, elig);
  CHECK(p.size() == 2);
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(p[0] / p[1] == doctest::Approx(std::exp(0.5 - (-0.5))));

  // gradient of r log pi(chosen) against central differences
  const double r = 0.7;
  const Eigen::VectorXd g = pg_gradient(st, ctx, 2, r, elig);
  for (int k = 0; k < 2; ++k) {
    const double h = 1e-6;
    PgState a = st, b = st;
    a.theta[k] += h;
    b.theta[k] -= h;
    const double fa = r * std::log(pg_probabilities(a, ctx, elig)[1]);
    const double fb = r * std::log(pg_probabilities(b, ctx, elig)[1]);
    CHECK(g[k] == doctest::Approx((fa - fb) / (2 * h)).epsilon(1e-6));
  }
  PgState up = st;
  pg_update(up, ctx, 2, r, elig);
  CHECK((up.theta - (st.theta + 0.1 * g)).norm() < 1e-15);

  Rng rng(5);
  int picked0 = 0;
  for (int i = 0; i < 20000; ++i) picked0 += pg_select(st, ctx, elig, rng) == 0;
  CHECK(std::abs(picked0 / 20000.0 - p[0]) < 0.015);
}

TEST_CASE("uniform select covers the eligible set evenly") {
  Rng rng(2);
  const std::vector<ArmId> elig = {3, 7, 9};
  std::map<int, int> hits;
  for (int i = 0; i < 30000; ++i) ++hits[uniform_select(elig, rng)];
  CHECK(hits.size() == 3);
  for (auto [a, c] : hits) CHECK(std::abs(c - 10000) < 400);
}

TEST_CASE("agent wrapper: kinds, letters, and weighted updates") {
  CHECK(parse_agent_kind("ucb") == AgentKind::kUcb);
  CHECK(parse_agent_kind("greedy") == AgentKind::kGreedy);
  CHECK(agent_letter(AgentKind::kUcb) == 'U');
  CHECK(agent_letter(AgentKind::kGreedy) == 'G');
  CHECK_THROWS(parse_agent_kind("thompson"));

  Agent a(AgentKind::kGreedy, 2, AgentParams{0.5, 0.0, 1.0});
  REQUIRE(a.ridge() != nullptr);
  CHECK(a.ridge()->lambda() == doctest::Approx(1.0));  // 0.5 * dim
  Eigen::MatrixXd ctx(2, 2);
  ctx << 1, 0, 0, 1;
  const std::vector<ArmId> elig = {0, 1};
  a.update(ctx, elig, 1, 1.0, 0.0);
  CHECK(a.n_updates() == 0);
  a.update(ctx, elig, 1, 1.0, 1.0);
  CHECK(a.n_updates() == 1);
  CHECK(a.ridge()->theta()[1] == doctest::Approx(0.5));
  Rng rng(0);
  CHECK(a.select(ctx, elig, rng) == 1);

  Agent pg(AgentKind::kPolicyGradient, 2, AgentParams{1.0, 0.0, 2.0});
  REQUIRE(pg.pg() != nullptr);
  // chosen arm outside the eligible list is added before normalising
  const std::vector<ArmId> only0 = {0};
  pg.update(ctx, only0, 1, 1.0, 1.0);
  CHECK(pg.pg()->theta[1] > 0.0);
  CHECK(pg.pg()->theta[0] < 0.0);
}

}  // TEST_SUITE
