// Copyright (c) 2026, The BTIC Authors. All rights reserved.
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

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace btic {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

// Bad input or configuration. The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure while running an otherwise valid pipeline. Exit code 1.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Label { Reliable = 0, Unreliable = 1 };

inline std::string_view to_string(Label label) {
  return label == Label::Reliable ? "Reliable" : "Unreliable";
}

inline Label parse_label(std::string_view s) {
  if (s == "Reliable") return Label::Reliable;
  if (s == "Unreliable") return Label::Unreliable;
  throw InputError("unknown label '" + std::string(s) + "'");
}

inline Label opposite(Label label) {
  return label == Label::Reliable ? Label::Unreliable : Label::Reliable;
}

// Unreliable is the positive class (y = 1).
inline double target_of(Label label) { return label == Label::Unreliable ? 1.0 : 0.0; }

using Rng = std::mt19937_64;

// Stable across platforms and runs, unlike std::hash.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

inline double cosine(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;  // cos(a, 0) := 0
  return a.dot(b) / (na * nb);
}

}  // namespace btic
