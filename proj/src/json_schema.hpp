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

// Strict JSON object reading with line-numbered errors. Internal.

#ifndef TWOSTAGE_SRC_JSON_SCHEMA_HPP_
#define TWOSTAGE_SRC_JSON_SCHEMA_HPP_

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "twostage/error.hpp"

namespace twostage::detail {

using nlohmann::json;

// Maps a key path to a line by scanning for each quoted key in turn. Good
// enough for error messages; JSON has no positions after parsing.
class Locator {
 public:
  explicit Locator(const std::string& text) : text_(text) {}

  int line_of(const std::vector<std::string>& path) const {
    std::size_t pos = 0;
    for (const auto& key : path) {
      if (key.empty() || key[0] == '[') continue;
      const std::size_t hit = text_.find("\"" + key + "\"", pos);
      if (hit == std::string::npos) break;
      pos = hit;
    }
    return 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
  }

  int line_at_byte(std::size_t byte) const {
    byte = std::min(byte, text_.size());
    return 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
  }

 private:
  const std::string& text_;
};

struct Ctx {
  std::string origin;
  const Locator* loc;
  std::string base_dir;
};

[[noreturn]] inline void fail(const Ctx& ctx, const std::vector<std::string>& path,
                       const std::string& msg) {
  std::string dotted;
  for (const auto& p : path) {
    if (!dotted.empty() && p[0] != '[') dotted += '.';
    dotted += p;
  }
  throw ConfigError(ctx.origin + ":" + std::to_string(ctx.loc->line_of(path)) + ": " +
                    (dotted.empty() ? "" : dotted + ": ") + msg);
}

// An object whose keys must all be consumed.
class Section {
 public:
  Section(const json& j, std::vector<std::string> path, const Ctx& ctx)
      : j_(j), path_(std::move(path)), ctx_(ctx) {
    if (!j_.is_object()) fail(ctx_, path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::vector<std::string> at(const std::string& key) const {
    auto p = path_;
    p.push_back(key);
    return p;
  }

  template <typename T>
  std::optional<T> opt(const std::string& key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    return convert<T>(*v, at(key));
  }

  template <typename T>
  T value(const std::string& key, T fallback) {
    return opt<T>(key).value_or(fallback);
  }

  template <typename T>
  std::vector<T> list(const std::string& key) {
    const json* v = get(key);
    if (!v) return {};
    if (!v->is_array()) fail(ctx_, at(key), "expected a list");
    std::vector<T> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      auto p = at(key);
      p.push_back("[" + std::to_string(i) + "]");
      out.push_back(convert<T>((*v)[i], p));
    }
    return out;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(ctx_, at(it.key()), "unknown key");
  }

  const Ctx& ctx() const { return ctx_; }

 private:
  template <typename T>
  T convert(const json& v, const std::vector<std::string>& p) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(ctx_, p, "expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(ctx_, p, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(ctx_, p, "expected an integer");
      if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() &&
          v.get<std::int64_t>() < 0)
        fail(ctx_, p, "expected a non-negative integer");
      if constexpr (std::is_same_v<T, int>) {
        const auto x = v.get<std::int64_t>();
        if (x < INT32_MIN || x > INT32_MAX) fail(ctx_, p, "integer out of range");
      }
      return v.get<T>();
    } else {
      if (!v.is_number()) fail(ctx_, p, "expected a number");
      const double x = v.get<double>();
      if (!std::isfinite(x)) fail(ctx_, p, "expected a finite number");
      return x;
    }
  }

  const json& j_;
  std::vector<std::string> path_;
  const Ctx& ctx_;
  std::set<std::string> seen_;
};

template <typename Parse>
auto parse_enum(Section& sec, const std::string& key, Parse parse)
    -> std::optional<decltype(parse(std::string()))> {
  auto name = sec.opt<std::string>(key);
  if (!name) return std::nullopt;
  try {
    return parse(*name);
  } catch (const std::exception& e) {
    fail(sec.ctx(), sec.at(key), e.what());
  }
}

std::string read_text_file(const std::string& path);
std::string parent_dir(const std::string& path);
// Parses `text`, turning syntax errors into ConfigErrors with a line number.
json parse_json_text(const std::string& text, const std::string& origin);

}  // namespace twostage::detail

#endif  // TWOSTAGE_SRC_JSON_SCHEMA_HPP_
