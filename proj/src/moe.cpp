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

#include "twostage/moe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "twostage/error.hpp"

namespace twostage {

namespace {

constexpr int kGradChunk = 256;

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

// Per-thread buffers for one example's forward and backward pass.
struct Scratch {
  std::vector<Eigen::VectorXd> xs;  // x[S_n]
  std::vector<Eigen::VectorXd> u;   // W_n x[S_n]
  Eigen::VectorXd pred, logit, logp, ell, rho, xg;

  explicit Scratch(const MoEModel& m) {
    const auto& sh = m.shape();
    xs.assign(static_cast<std::size_t>(sh.n_experts), Eigen::VectorXd(sh.s));
    u.assign(static_cast<std::size_t>(sh.n_experts), Eigen::VectorXd(sh.d_e));
    pred.resize(sh.n_experts);
    logit.resize(sh.n_experts);
    logp.resize(sh.n_experts);
    ell.resize(sh.n_experts);
    rho.resize(sh.n_experts);
    xg.resize(m.d_g());
  }
};

// Adds scale * d(log-likelihood of one example) to `grad` when non-null and
// returns that example's log-likelihood.
double example_pass(const MoEModel& m, const double* x, ArmId a, double r, double scale,
                    double* grad, Scratch& sc) {
  const auto& sh = m.shape();
  const int N = sh.n_experts;
  const double inv2s2 = 0.5 / m.sigma2();
  const auto& feats = m.expert_features();

  auto expert_forward = [&](int n) {
    const auto& f = feats[static_cast<std::size_t>(n)];
    Eigen::VectorXd& xs = sc.xs[static_cast<std::size_t>(n)];
    for (int j = 0; j < sh.s; ++j) xs[j] = x[f[static_cast<std::size_t>(j)]];
    sc.u[static_cast<std::size_t>(n)].noalias() = m.W(n) * xs;
    sc.pred[n] = m.E(n).row(a).dot(sc.u[static_cast<std::size_t>(n)]);
  };

  auto expert_backward = [&](int n, double g) {
    if (g == 0.0) return;
    const std::size_t off = m.expert_offset(n);
    Eigen::Map<RowMatrix> dE(grad + off, sh.n_arms, sh.d_e);
    Eigen::Map<RowMatrix> dW(grad + off + static_cast<std::size_t>(sh.n_arms) * sh.d_e, sh.d_e, sh.s);
    dE.row(a).noalias() += g * sc.u[static_cast<std::size_t>(n)].transpose();
    dW.noalias() += (g * m.E(n).row(a).transpose()) * sc.xs[static_cast<std::size_t>(n)].transpose();
  };

  if (m.frozen()) {
    const int k = m.owner()[static_cast<std::size_t>(a)];
    expert_forward(k);
    const double res = r - sc.pred[k];
    if (grad) expert_backward(k, scale * res / m.sigma2());
    return -res * res * inv2s2;
  }

  for (int n = 0; n < N; ++n) expert_forward(n);
  const auto& gf = m.gating_features();
  for (int j = 0; j < m.d_g(); ++j) sc.xg[j] = x[gf[static_cast<std::size_t>(j)]];
  sc.logit.noalias() = m.G() * sc.xg;
  sc.logit += m.V().row(a).transpose();
  sc.logp = sc.logit.array() - log_sum_exp(sc.logit);
  sc.ell = sc.logp.array() - (r - sc.pred.array()).square() * inv2s2;
  const double ll = log_sum_exp(sc.ell);
  if (!grad) return ll;

  sc.rho = (sc.ell.array() - ll).exp();
  for (int n = 0; n < N; ++n) expert_backward(n, scale * sc.rho[n] * (r - sc.pred[n]) / m.sigma2());
  const Eigen::VectorXd delta = scale * (sc.rho - sc.logp.array().exp().matrix());
  const std::size_t goff = m.gating_offset();
  Eigen::Map<RowMatrix> dG(grad + goff, N, m.d_g());
  Eigen::Map<RowMatrix> dV(grad + goff + static_cast<std::size_t>(N) * m.d_g(), sh.n_arms, N);
  dG.noalias() += delta * sc.xg.transpose();
  dV.row(a) += delta.transpose();
  return ll;
}

void check_batch(const MoEModel& m, const OfflineBatch& b) {
  if (b.size() < 1) throw std::invalid_argument("MoE batch is empty");
  if (b.x.rows() != b.size() || b.r.size() != b.size() || b.x.cols() != m.shape().d)
    throw std::invalid_argument("MoE batch shape does not match the model");
  for (ArmId a : b.arms)
    if (a < 0 || a >= m.shape().n_arms) throw std::invalid_argument("MoE batch arm out of range");
}

// Chunked evaluation; partial results are combined in chunk order.
double evaluate(const MoEModel& m, const OfflineBatch& b, Eigen::VectorXd* grad) {
  check_batch(m, b);
  const int B = b.size();
  const int chunks = (B + kGradChunk - 1) / kGradChunk;
  std::vector<double> ll(static_cast<std::size_t>(chunks), 0.0);
  std::vector<Eigen::VectorXd> partial(grad ? static_cast<std::size_t>(chunks) : 0);
  const double scale = 1.0 / B;
#pragma omp parallel
  {
    Scratch sc(m);
#pragma omp for schedule(static)
    for (int c = 0; c < chunks; ++c) {
      double* g = nullptr;
      if (grad) {
        partial[static_cast<std::size_t>(c)] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.n_params()));
        g = partial[static_cast<std::size_t>(c)].data();
      }
      double acc = 0.0;
      for (int t = c * kGradChunk; t < std::min(B, (c + 1) * kGradChunk); ++t)
        acc += example_pass(m, b.x.row(t).data(), b.arms[static_cast<std::size_t>(t)], b.r[t], scale, g, sc);
      ll[static_cast<std::size_t>(c)] = acc;
    }
  }
  if (grad) {
    grad->setZero(static_cast<Eigen::Index>(m.n_params()));
    for (const auto& p : partial) *grad += p;
  }
  return std::accumulate(ll.begin(), ll.end(), 0.0) * scale;
}

void check_sigma2(double sigma2) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
    throw std::invalid_argument("MoE sigma^2 must be positive and finite");
}

}  // namespace

// ---------------------------------------------------------------------------

MoEModel::MoEModel(MoEShape shape, std::vector<std::vector<int>> expert_features,
                   std::vector<int> gating_features, double sigma2)
    : shape_(shape),
      expert_features_(std::move(expert_features)),
      gating_features_(std::move(gating_features)),
      sigma2_(sigma2) {
  check_sigma2(sigma2);
  if (shape_.n_arms < 1 || shape_.d < 1 || shape_.n_experts < 1 || shape_.d_e < 1 || shape_.s < 1)
    throw ConfigError("MoE dimensions must be positive");
  if (shape_.s > shape_.d) throw ConfigError("MoE: s must not exceed d");
  if (static_cast<int>(expert_features_.size()) != shape_.n_experts)
    throw ConfigError("MoE: one feature subset per expert is required");
  for (const auto& f : expert_features_) {
    if (static_cast<int>(f.size()) != shape_.s) throw ConfigError("MoE: expert subset size != s");
    for (int j : f)
      if (j < 0 || j >= shape_.d) throw ConfigError("MoE: expert feature index out of range");
  }
  for (int j : gating_features_)
    if (j < 0 || j >= shape_.d) throw ConfigError("MoE: gating feature index out of range");
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(
      gating_offset() + static_cast<std::size_t>(shape_.n_experts) * d_g() +
      static_cast<std::size_t>(shape_.n_arms) * shape_.n_experts));
}

MoEModel MoEModel::random(const MoEShape& shape, double sigma2, Rng& rng, bool shared_subset,
                          std::optional<std::vector<int>> gating_features) {
  std::vector<std::vector<int>> feats;
  if (shared_subset) {
    feats.assign(static_cast<std::size_t>(shape.n_experts),
                 feature_allocate(shape.d, shape.s, 1, rng).subsets.front());
  } else {
    feats = feature_allocate(shape.d, shape.s, shape.n_experts, rng).subsets;
  }
  std::vector<int> gating;
  if (gating_features) {
    gating = std::move(*gating_features);
  } else {
    gating.resize(static_cast<std::size_t>(shape.d));
    std::iota(gating.begin(), gating.end(), 0);
  }
  MoEModel m(shape, std::move(feats), std::move(gating), sigma2);
  std::normal_distribution<double> init(0.0, 1.0 / std::sqrt(static_cast<double>(shape.d_e)));
  const std::size_t n_expert_params = m.gating_offset();
  for (std::size_t i = 0; i < n_expert_params; ++i) m.params_[static_cast<Eigen::Index>(i)] = init(rng);
  return m;
}

void MoEModel::freeze_gating(const PoolAllocation& pools) {
  if (pools.n_arms != shape_.n_arms || pools.n_pools() != shape_.n_experts)
    throw ConfigError("freeze_gating: need one pool per expert over all arms");
  pools.validate();
  if (!pools.disjoint()) throw ConfigError("freeze_gating: pools must be disjoint");
  owner_ = pools.owner();
}

void MoEModel::set_sigma2(double sigma2) {
  check_sigma2(sigma2);
  sigma2_ = sigma2;
}

std::size_t MoEModel::expert_offset(int n) const {
  return static_cast<std::size_t>(n) *
         (static_cast<std::size_t>(shape_.n_arms) * shape_.d_e +
          static_cast<std::size_t>(shape_.d_e) * shape_.s);
}

std::size_t MoEModel::gating_offset() const { return expert_offset(shape_.n_experts); }

Eigen::Map<RowMatrix> MoEModel::E(int n) {
  return {params_.data() + expert_offset(n), shape_.n_arms, shape_.d_e};
}
Eigen::Map<const RowMatrix> MoEModel::E(int n) const {
  return {params_.data() + expert_offset(n), shape_.n_arms, shape_.d_e};
}
Eigen::Map<RowMatrix> MoEModel::W(int n) {
  return {params_.data() + expert_offset(n) + static_cast<std::size_t>(shape_.n_arms) * shape_.d_e,
          shape_.d_e, shape_.s};
}
Eigen::Map<const RowMatrix> MoEModel::W(int n) const {
  return {params_.data() + expert_offset(n) + static_cast<std::size_t>(shape_.n_arms) * shape_.d_e,
          shape_.d_e, shape_.s};
}
Eigen::Map<RowMatrix> MoEModel::G() {
  return {params_.data() + gating_offset(), shape_.n_experts, d_g()};
}
Eigen::Map<const RowMatrix> MoEModel::G() const {
  return {params_.data() + gating_offset(), shape_.n_experts, d_g()};
}
Eigen::Map<RowMatrix> MoEModel::V() {
  return {params_.data() + gating_offset() + static_cast<std::size_t>(shape_.n_experts) * d_g(),
          shape_.n_arms, shape_.n_experts};
}
Eigen::Map<const RowMatrix> MoEModel::V() const {
  return {params_.data() + gating_offset() + static_cast<std::size_t>(shape_.n_experts) * d_g(),
          shape_.n_arms, shape_.n_experts};
}

Eigen::VectorXd MoEModel::gating(const Eigen::Ref<const Eigen::VectorXd>& x, ArmId a) const {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(shape_.n_experts);
  if (frozen()) {
    p[owner_[static_cast<std::size_t>(a)]] = 1.0;
    return p;
  }
  Eigen::VectorXd xg(d_g());
  for (int j = 0; j < d_g(); ++j) xg[j] = x[gating_features_[static_cast<std::size_t>(j)]];
  Eigen::VectorXd logit = G() * xg + V().row(a).transpose();
  p = (logit.array() - logit.maxCoeff()).exp();
  return p / p.sum();
}

Eigen::VectorXd MoEModel::predictions(const Eigen::Ref<const Eigen::VectorXd>& x, ArmId a) const {
  Eigen::VectorXd out(shape_.n_experts);
  Eigen::VectorXd xs(shape_.s);
  for (int n = 0; n < shape_.n_experts; ++n) {
    const auto& f = expert_features_[static_cast<std::size_t>(n)];
    for (int j = 0; j < shape_.s; ++j) xs[j] = x[f[static_cast<std::size_t>(j)]];
    out[n] = E(n).row(a).dot(W(n) * xs);
  }
  return out;
}

void set_one_hot_gating(MoEModel& model, const PoolAllocation& pools) {
  const auto& sh = model.shape();
  if (pools.n_arms != sh.n_arms || pools.n_pools() != sh.n_experts)
    throw ConfigError("one-hot gating: need one pool per expert over all arms");
  pools.validate();
  if (!pools.disjoint()) throw ConfigError("one-hot gating: pools must be disjoint");
  model.unfreeze_gating();
  model.G().setZero();
  model.V().setConstant(-kOneHotLogitGap);
  for (int n = 0; n < pools.n_pools(); ++n)
    for (ArmId a : pools.pools[static_cast<std::size_t>(n)]) model.V()(a, n) = 0.0;
}

double moe_loglik(const MoEModel& model, const OfflineBatch& batch) {
  return evaluate(model, batch, nullptr);
}

Eigen::VectorXd moe_grad(const MoEModel& model, const OfflineBatch& batch) {
  Eigen::VectorXd g;
  evaluate(model, batch, &g);
  return g;
}

Eigen::VectorXd moe_grad_serial(const MoEModel& model, const OfflineBatch& batch) {
  check_batch(model, batch);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.n_params()));
  Scratch sc(model);
  const double scale = 1.0 / batch.size();
  for (int t = 0; t < batch.size(); ++t)
    example_pass(model, batch.x.row(t).data(), batch.arms[static_cast<std::size_t>(t)],
                 batch.r[t], scale, g.data(), sc);
  return g;
}

// ---------------------------------------------------------------------------

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "rmsprop") return OptimizerKind::kRmsProp;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or rmsprop)");
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "rmsprop";
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, std::size_t n_params)
    : kind_(kind), lr_(learning_rate) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  m_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params));
  v_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params));
}

void Optimizer::ascend(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  constexpr double kEps = 1e-8;
  ++step_;
  if (kind_ == OptimizerKind::kRmsProp) {
    v_ = 0.9 * v_ + 0.1 * grad.cwiseAbs2();
    params.array() += lr_ * grad.array() / (v_.array().sqrt() + kEps);
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999;
  m_ = b1 * m_ + (1.0 - b1) * grad;
  v_ = b2 * v_ + (1.0 - b2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  params.array() += lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + kEps);
}

// ---------------------------------------------------------------------------

OfflineSampling parse_offline_sampling(const std::string& name) {
  if (name == "uniform") return OfflineSampling::kUniform;
  if (name == "balanced") return OfflineSampling::kBalanced;
  throw ConfigError("unknown offline sampling '" + name + "' (expected uniform or balanced)");
}

OfflineBatch OfflineDataset::batch(std::span<const std::size_t> indices) const {
  OfflineBatch b;
  b.x.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  b.arms.resize(indices.size());
  b.r.resize(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t k = indices[i];
    b.x.row(static_cast<Eigen::Index>(i)) = features.row(rows[k]);
    b.arms[i] = arms[k];
    b.r[static_cast<Eigen::Index>(i)] = rewards[k];
  }
  return b;
}

OfflineBatch OfflineDataset::all() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return batch(idx);
}

double OfflineDataset::positive_rate() const {
  if (rewards.empty()) return 0.0;
  return std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
}

OfflineDataset build_offline_dataset(const MultiLabelDataset& ds,
                                     std::span<const int> arm_categories, int c, Rng& rng,
                                     OfflineSampling sampling) {
  if (c < 1) throw ConfigError("examples per arm c must be >= 1");
  if (ds.size() < 1) throw DataError("offline dataset: no examples");
  for (int cat : arm_categories)
    if (cat < 0 || cat >= ds.n_categories)
      throw ConfigError("offline dataset: unknown category id " + std::to_string(cat));
  OfflineDataset out;
  out.features = ds.features;
  out.n_arms = static_cast<int>(arm_categories.size());
  std::uniform_int_distribution<int> any_row(0, ds.size() - 1);
  auto emit = [&](int row, ArmId a) {
    out.rows.push_back(row);
    out.arms.push_back(a);
    out.rewards.push_back(ds.has_label(row, arm_categories[static_cast<std::size_t>(a)]) ? 1.0 : 0.0);
  };
  for (ArmId a = 0; a < out.n_arms; ++a) {
    if (sampling == OfflineSampling::kUniform) {
      for (int i = 0; i < c; ++i) emit(any_row(rng), a);
      continue;
    }
    std::vector<int> pos, neg;
    for (int row = 0; row < ds.size(); ++row)
      (ds.has_label(row, arm_categories[static_cast<std::size_t>(a)]) ? pos : neg).push_back(row);
    const int n_pos = pos.empty() ? 0 : (neg.empty() ? c : c / 2);
    for (int i = 0; i < c; ++i) {
      const auto& src = i < n_pos ? pos : neg;
      emit(src[std::uniform_int_distribution<std::size_t>(0, src.size() - 1)(rng)], a);
    }
  }
  return out;
}

std::vector<TracePoint> moe_train(MoEModel& model, const OfflineDataset& data,
                                  const TrainConfig& cfg) {
  if (data.size() == 0) throw DataError("moe_train: empty dataset");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (cfg.steps < 0) throw ConfigError("steps must be >= 0");
  if (data.n_arms != model.shape().n_arms || data.features.cols() != model.shape().d)
    throw ConfigError("moe_train: dataset does not match model dimensions");
  std::vector<TracePoint> trace;
  Optimizer opt(cfg.optimizer, cfg.learning_rate, model.n_params());
  Rng rng(derive_seed({cfg.seed, 0x747261696eULL}));
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<std::size_t> idx(static_cast<std::size_t>(cfg.batch_size));
  Eigen::VectorXd grad;
  const std::int64_t every = std::max<std::int64_t>(cfg.trace_every, 1);
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    for (auto& i : idx) i = pick(rng);
    const OfflineBatch b = data.batch(idx);
    const double ll = evaluate(model, b, &grad);
    if (!std::isfinite(ll) || !grad.allFinite())
      throw TrainingDiverged("MoE training diverged at step " + std::to_string(step) +
                             " (log-likelihood " + std::to_string(ll) + ")");
    if (step % every == 0 || step + 1 == cfg.steps) trace.push_back({step, ll});
    opt.ascend(model.params(), grad);
  }
  return trace;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd moe_score(const MoEModel& model, const RowMatrix& users) {
  const auto& sh = model.shape();
  if (users.cols() != sh.d) throw std::invalid_argument("moe_score: user width != d");
  Eigen::MatrixXd out(users.rows(), sh.n_arms);
#pragma omp parallel
  {
    Eigen::VectorXd xs(sh.s), xg(model.d_g()), base;
    Eigen::MatrixXd pred(sh.n_arms, sh.n_experts);
#pragma omp for schedule(static)
    for (Eigen::Index i = 0; i < users.rows(); ++i) {
      const auto x = users.row(i);
      for (int n = 0; n < sh.n_experts; ++n) {
        const auto& f = model.expert_features()[static_cast<std::size_t>(n)];
        for (int j = 0; j < sh.s; ++j) xs[j] = x[f[static_cast<std::size_t>(j)]];
        pred.col(n).noalias() = model.E(n) * (model.W(n) * xs);
      }
      if (model.frozen()) {
        for (ArmId a = 0; a < sh.n_arms; ++a)
          out(i, a) = pred(a, model.owner()[static_cast<std::size_t>(a)]);
        continue;
      }
      for (int j = 0; j < model.d_g(); ++j) xg[j] = x[model.gating_features()[static_cast<std::size_t>(j)]];
      base = model.G() * xg;
      for (ArmId a = 0; a < sh.n_arms; ++a) {
        Eigen::VectorXd logit = base + model.V().row(a).transpose();
        Eigen::VectorXd p = (logit.array() - logit.maxCoeff()).exp();
        out(i, a) = p.dot(pred.row(a)) / p.sum();
      }
    }
  }
  return out;
}

Eigen::VectorXd moe_score(const MoEModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
                          std::span<const ArmId> arms) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(arms.size()));
  for (std::size_t i = 0; i < arms.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = model.gating(x, arms[i]).dot(model.predictions(x, arms[i]));
  return out;
}

PrecisionRecall precision_recall_at_k(const Eigen::MatrixXd& scores,
                                      const std::vector<std::vector<ArmId>>& labels, int k) {
  if (k < 1) throw std::invalid_argument("precision_recall_at_k: K must be >= 1");
  if (static_cast<std::size_t>(scores.rows()) != labels.size())
    throw std::invalid_argument("precision_recall_at_k: one label set per score row required");
  PrecisionRecall pr;
  if (labels.empty()) return pr;
  const int n_arms = static_cast<int>(scores.cols());
  const int kk = std::min(k, n_arms);
  std::vector<int> order(static_cast<std::size_t>(n_arms));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const auto& lab = labels[static_cast<std::size_t>(i)];
    if (lab.empty()) continue;
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + kk, order.end(), [&](int a, int b) {
      if (scores(i, a) != scores(i, b)) return scores(i, a) > scores(i, b);
      return a < b;
    });
    int hits = 0;
    for (int j = 0; j < kk; ++j)
      hits += std::find(lab.begin(), lab.end(), order[static_cast<std::size_t>(j)]) != lab.end();
    pr.precision += static_cast<double>(hits) / k;
    pr.recall += static_cast<double>(hits) / static_cast<double>(lab.size());
  }
  pr.precision /= static_cast<double>(labels.size());
  pr.recall /= static_cast<double>(labels.size());
  return pr;
}

std::vector<std::vector<ArmId>> arm_labels(const MultiLabelDataset& ds, std::span<const int> rows,
                                           std::span<const int> arm_categories) {
  std::vector<ArmId> arm_of(static_cast<std::size_t>(std::max(ds.n_categories, 0)), -1);
  for (std::size_t a = 0; a < arm_categories.size(); ++a) {
    const int cat = arm_categories[a];
    if (cat < 0 || cat >= ds.n_categories)
      throw ConfigError("unknown category id " + std::to_string(cat));
    arm_of[static_cast<std::size_t>(cat)] = static_cast<ArmId>(a);
  }
  std::vector<std::vector<ArmId>> out;
  out.reserve(rows.size());
  for (int row : rows) {
    std::vector<ArmId> l;
    for (int cat : ds.labels[static_cast<std::size_t>(row)])
      if (arm_of[static_cast<std::size_t>(cat)] >= 0) l.push_back(arm_of[static_cast<std::size_t>(cat)]);
    std::sort(l.begin(), l.end());
    out.push_back(std::move(l));
  }
  return out;
}

PoolAllocation distill_allocation(const MoEModel& model, const RowMatrix& contexts) {
  const auto& sh = model.shape();
  if (contexts.rows() < 1) throw std::invalid_argument("distill_allocation: no contexts");
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(sh.n_arms, sh.n_experts);
  for (Eigen::Index i = 0; i < contexts.rows(); ++i)
    for (ArmId a = 0; a < sh.n_arms; ++a)
      mean.row(a) += model.gating(contexts.row(i).transpose(), a).transpose();
  mean /= static_cast<double>(contexts.rows());

  std::vector<int> assign(static_cast<std::size_t>(sh.n_arms));
  std::vector<int> count(static_cast<std::size_t>(sh.n_experts), 0);
  for (ArmId a = 0; a < sh.n_arms; ++a) {
    int best = 0;
    for (int n = 1; n < sh.n_experts; ++n)
      if (mean(a, n) > mean(a, best)) best = n;
    assign[static_cast<std::size_t>(a)] = best;
    ++count[static_cast<std::size_t>(best)];
  }
  if (sh.n_arms >= sh.n_experts) {
    for (int n = 0; n < sh.n_experts; ++n) {
      if (count[static_cast<std::size_t>(n)] > 0) continue;
      ArmId pick = -1;
      for (ArmId a = 0; a < sh.n_arms; ++a)
        if (count[static_cast<std::size_t>(assign[static_cast<std::size_t>(a)])] > 1 &&
            (pick < 0 || mean(a, n) > mean(pick, n)))
          pick = a;
      --count[static_cast<std::size_t>(assign[static_cast<std::size_t>(pick)])];
      assign[static_cast<std::size_t>(pick)] = n;
      ++count[static_cast<std::size_t>(n)];
    }
  }
  PoolAllocation out;
  out.n_arms = sh.n_arms;
  out.pools.resize(static_cast<std::size_t>(sh.n_experts));
  for (ArmId a = 0; a < sh.n_arms; ++a) out.pools[static_cast<std::size_t>(assign[static_cast<std::size_t>(a)])].push_back(a);
  return out;
}

double clustering_accuracy(const PoolAllocation& pools, std::span<const int> arm_cluster,
                           int n_clusters) {
  if (n_clusters < 1 || n_clusters > 20)
    throw std::invalid_argument("clustering_accuracy supports 1..20 clusters");
  if (arm_cluster.size() != static_cast<std::size_t>(pools.n_arms))
    throw std::invalid_argument("clustering_accuracy: one cluster per arm required");
  const std::size_t n_masks = std::size_t{1} << n_clusters;
  std::vector<std::vector<int>> agree(pools.pools.size(), std::vector<int>(static_cast<std::size_t>(n_clusters), 0));
  for (std::size_t n = 0; n < pools.pools.size(); ++n)
    for (ArmId a : pools.pools[n]) ++agree[n][static_cast<std::size_t>(arm_cluster[static_cast<std::size_t>(a)])];

  // dp[mask]: best agreement with the clusters in `mask` already matched.
  std::vector<int> dp(n_masks, -1), next;
  dp[0] = 0;
  for (const auto& row : agree) {
    next = dp;
    for (std::size_t mask = 0; mask < n_masks; ++mask) {
      if (dp[mask] < 0) continue;
      for (int c = 0; c < n_clusters; ++c) {
        if (mask & (std::size_t{1} << c)) continue;
        const std::size_t m2 = mask | (std::size_t{1} << c);
        next[m2] = std::max(next[m2], dp[mask] + row[static_cast<std::size_t>(c)]);
      }
    }
    dp.swap(next);
  }
  return static_cast<double>(*std::max_element(dp.begin(), dp.end())) / pools.n_arms;
}

}  // namespace twostage
