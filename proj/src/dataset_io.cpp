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

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string_view>

#include "twostage/env.hpp"
#include "twostage/error.hpp"

namespace twostage {

namespace {

constexpr std::array<char, 5> kBinaryMagic = {'T', 'S', 'B', 'F', '1'};

std::string where(const std::string& path, std::size_t line) {
  return path + ":" + std::to_string(line) + ": ";
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("binary features: truncated header");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

bool has_binary_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::array<char, 5> head{};
  return in.read(head.data(), 5) && head == kBinaryMagic;
}

}  // namespace

Eigen::MatrixXd read_features_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open features file " + path);
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++rows;
    const std::string_view sv = trim_cr(line);
    std::size_t row_cols = 0;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = sv.find(',', pos);
      std::string_view field = sv.substr(pos, comma == std::string_view::npos ? sv.npos : comma - pos);
      while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
      while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
      double v = 0.0;
      const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (field.empty() || ec != std::errc() || end != field.data() + field.size() ||
          !std::isfinite(v))
        throw DataError(where(path, rows) + "non-numeric feature '" + std::string(field) + "'");
      values.push_back(v);
      ++row_cols;
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (rows == 1) cols = row_cols;
    if (row_cols != cols)
      throw DataError(where(path, rows) + "expected " + std::to_string(cols) +
                      " columns, found " + std::to_string(row_cols));
  }
  if (rows == 0) throw DataError(path + ": empty features file");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i * cols + j];
  return m;
}

void write_features_csv(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}

Eigen::MatrixXd read_features_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open features file " + path);
  std::array<char, 5> head{};
  if (!in.read(head.data(), 5) || head != kBinaryMagic)
    throw DataError(path + ": missing TSBF1 magic");
  const std::uint64_t rows = read_u64_le(in);
  const std::uint64_t cols = read_u64_le(in);
  if (rows == 0 || cols == 0 || rows > (1ULL << 32) || cols > (1ULL << 32))
    throw DataError(path + ": implausible dimensions");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  unsigned char b[4];
  for (std::uint64_t i = 0; i < rows; ++i) {
    for (std::uint64_t j = 0; j < cols; ++j) {
      if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError(path + ": truncated payload");
      const std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                                 (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
      float f;
      std::memcpy(&f, &bits, 4);
      if (!std::isfinite(f)) throw DataError(path + ": non-finite feature value");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f;
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(path + ": trailing bytes");
  return m;
}

void write_features_binary(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(kBinaryMagic.data(), 5);
  write_u64_le(out, static_cast<std::uint64_t>(m.rows()));
  write_u64_le(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const float f = static_cast<float>(m(i, j));
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      const unsigned char b[4] = {static_cast<unsigned char>(bits),
                                  static_cast<unsigned char>(bits >> 8),
                                  static_cast<unsigned char>(bits >> 16),
                                  static_cast<unsigned char>(bits >> 24)};
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
}

std::vector<std::vector<int>> read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open labels file " + path);
  std::vector<std::vector<int>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string_view sv = trim_cr(line);
    std::vector<int> ids;
    std::size_t pos = 0;
    while (!sv.empty()) {
      const std::size_t comma = sv.find(',', pos);
      std::string_view field = sv.substr(pos, comma == std::string_view::npos ? sv.npos : comma - pos);
      while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
      while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
      std::uint64_t v = 0;
      const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec == std::errc::result_out_of_range ||
          (ec == std::errc() && v > static_cast<std::uint64_t>(std::numeric_limits<int>::max() - 1)))
        throw DataError(where(path, n) + "label id overflow '" + std::string(field) + "'");
      if (field.empty() || ec != std::errc() || end != field.data() + field.size())
        throw DataError(where(path, n) + "invalid label id '" + std::string(field) + "'");
      ids.push_back(static_cast<int>(v));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    out.push_back(std::move(ids));
  }
  return out;
}

void write_labels(const std::string& path, const std::vector<std::vector<int>>& labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& l : labels) {
    for (std::size_t i = 0; i < l.size(); ++i) out << (i ? "," : "") << l[i];
    out << '\n';
  }
}

MultiLabelDataset load_dataset(const std::string& features_path,
                               const std::string& labels_path) {
  MultiLabelDataset ds;
  ds.features = has_binary_magic(features_path) ? read_features_binary(features_path)
                                                : read_features_csv(features_path);
  ds.labels = read_labels(labels_path);
  if (static_cast<std::size_t>(ds.features.rows()) != ds.labels.size())
    throw DataError("row-count mismatch: " + std::to_string(ds.features.rows()) +
                    " feature rows vs " + std::to_string(ds.labels.size()) + " label rows");
  int max_id = -1;
  for (const auto& l : ds.labels)
    if (!l.empty()) max_id = std::max(max_id, l.back());
  ds.n_categories = max_id + 1;
  ds.validate();
  return ds;
}

}  // namespace twostage
