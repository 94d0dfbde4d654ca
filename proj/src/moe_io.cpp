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
#include <cstring>
#include <fstream>

#include "twostage/error.hpp"
#include "twostage/moe.hpp"

namespace twostage {

namespace {

constexpr std::array<char, 6> kMagic = {'T', 'S', 'M', 'O', 'E', '1'};

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot write checkpoint " + path);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 8);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 4);
  }
  void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open checkpoint " + path);
  }
  void bytes(unsigned char* b, std::size_t n) {
    if (!in_.read(reinterpret_cast<char*>(b), static_cast<std::streamsize>(n)))
      throw DataError(path_ + ": truncated checkpoint");
  }
  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  int dim(std::uint64_t limit = 1u << 24) {
    const std::uint64_t v = u64();
    if (v > limit) throw DataError(path_ + ": implausible dimension in checkpoint");
    return static_cast<int>(v);
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  float f32() {
    unsigned char b[4];
    bytes(b, 4);
    const std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                               (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
};

}  // namespace

void save_moe(const MoEModel& model, const std::string& path) {
  Writer w(path);
  w.raw(kMagic.data(), kMagic.size());
  const auto& sh = model.shape();
  for (int v : {sh.n_arms, sh.d, sh.n_experts, sh.d_e, sh.s, model.d_g()})
    w.u64(static_cast<std::uint64_t>(v));
  for (const auto& f : model.expert_features())
    for (int j : f) w.u64(static_cast<std::uint64_t>(j));
  for (int j : model.gating_features()) w.u64(static_cast<std::uint64_t>(j));
  w.u64(model.frozen() ? 1 : 0);
  if (model.frozen())
    for (int n : model.owner()) w.u64(static_cast<std::uint64_t>(n));
  w.f64(model.sigma2());
  for (Eigen::Index i = 0; i < model.params().size(); ++i)
    w.f32(static_cast<float>(model.params()[i]));
}

MoEModel load_moe(const std::string& path) {
  Reader r(path);
  unsigned char head[6];
  r.bytes(head, 6);
  if (std::memcmp(head, kMagic.data(), 6) != 0) throw DataError(path + ": missing TSMOE1 magic");
  MoEShape sh;
  sh.n_arms = r.dim();
  sh.d = r.dim();
  sh.n_experts = r.dim(4096);
  sh.d_e = r.dim(4096);
  sh.s = r.dim();
  const int d_g = r.dim();
  std::vector<std::vector<int>> feats(static_cast<std::size_t>(sh.n_experts));
  for (auto& f : feats) {
    f.resize(static_cast<std::size_t>(sh.s));
    for (auto& j : f) j = r.dim();
  }
  std::vector<int> gating(static_cast<std::size_t>(d_g));
  for (auto& j : gating) j = r.dim();
  const std::uint64_t frozen = r.u64();
  std::vector<int> owner;
  if (frozen > 1) throw DataError(path + ": corrupt gating flag");
  if (frozen) {
    owner.resize(static_cast<std::size_t>(sh.n_arms));
    for (auto& n : owner) {
      n = r.dim();
      if (n >= sh.n_experts) throw DataError(path + ": owner out of range");
    }
  }
  const double sigma2 = r.f64();
  MoEModel m(sh, std::move(feats), std::move(gating), sigma2);
  for (Eigen::Index i = 0; i < m.params().size(); ++i) m.params()[i] = r.f32();
  if (!m.params().allFinite()) throw DataError(path + ": non-finite parameter");
  if (!r.at_end()) throw DataError(path + ": trailing bytes");
  if (frozen) {
    PoolAllocation pools;
    pools.n_arms = sh.n_arms;
    pools.pools.resize(static_cast<std::size_t>(sh.n_experts));
    for (ArmId a = 0; a < sh.n_arms; ++a) pools.pools[static_cast<std::size_t>(owner[static_cast<std::size_t>(a)])].push_back(a);
    m.freeze_gating(pools);
  }
  return m;
}

}  // namespace twostage
