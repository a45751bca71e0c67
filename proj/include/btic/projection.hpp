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

// Two-dimensional projections of embedding tables.

#include <btic/common.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace btic {

// Centred principal components, N x 2 (zero-padded when the data has rank < 2).
inline Matrix pca_2d(const Matrix& x) {
  Matrix out = Matrix::Zero(x.rows(), 2);
  if (x.rows() < 2) return out;
  Matrix centred = x.rowwise() - x.colwise().mean();
  Eigen::JacobiSVD<Matrix> svd(centred, Eigen::ComputeThinV);
  const Eigen::Index k = std::min<Eigen::Index>(2, svd.matrixV().cols());
  out.leftCols(k) = centred * svd.matrixV().leftCols(k);
  return out;
}

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 0.0;  // <= 0 selects max(N / exaggeration / 4, 50)
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"method", "tsne"},
            {"perplexity", perplexity},
            {"iterations", iterations},
            {"learning_rate", learning_rate},
            {"early_exaggeration", early_exaggeration},
            {"exaggeration_iterations", exaggeration_iterations},
            {"seed", seed}};
  }
};

// Exact t-SNE (O(N^2) per iteration) with momentum and per-coordinate gains.
// The perplexity is capped at (N - 1) / 3 for small inputs.
inline Matrix tsne_2d(const Matrix& x, const TsneOptions& opt = {}) {
  const Eigen::Index n = x.rows();
  if (n < 4) return pca_2d(x);

  Matrix d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) d2(i, j) = (x.row(i) - x.row(j)).squaredNorm();

  const double perplexity = std::min(opt.perplexity, (static_cast<double>(n) - 1.0) / 3.0);
  const double target = std::log(perplexity);
  Matrix p = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 100; ++it) {
      double sum = 0.0, weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double v = std::exp(-beta * d2(i, j));
        p(i, j) = v;
        sum += v;
        weighted += v * d2(i, j);
      }
      if (sum <= 0.0) {
        beta /= 2.0;
        hi = beta * 2.0;
        continue;
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      p.row(i) /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = (beta + lo) / 2.0;
      }
    }
  }
  p = (p + p.transpose()).eval() / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);

  const double lr = opt.learning_rate > 0.0
                        ? opt.learning_rate
                        : std::max(static_cast<double>(n) / opt.early_exaggeration / 4.0, 50.0);
  Rng rng(opt.seed);
  Matrix y = random_normal(n, 2, 1e-4, rng);
  Matrix update = Matrix::Zero(n, 2);
  Matrix gains = Matrix::Ones(n, 2);
  Matrix num(n, n);
  for (int iter = 0; iter < opt.iterations; ++iter) {
    const double exaggeration = iter < opt.exaggeration_iterations ? opt.early_exaggeration : 1.0;
    const double momentum = iter < opt.exaggeration_iterations ? 0.5 : 0.8;
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        num(i, j) = num(j, i) = v;
        total += 2.0 * v;
      }
    }
    Matrix grad = Matrix::Zero(n, 2);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double mult = (exaggeration * p(i, j) - num(i, j) / total) * num(i, j);
        grad.row(i) += 4.0 * mult * (y.row(i) - y.row(j));
      }
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < 2; ++c) {
        const bool same = (grad(i, c) > 0) == (update(i, c) > 0);
        gains(i, c) = std::max(same ? gains(i, c) * 0.8 : gains(i, c) + 0.2, 0.01);
        update(i, c) = momentum * update(i, c) - lr * gains(i, c) * grad(i, c);
      }
    y += update;
    y = y.rowwise() - y.colwise().mean();
  }
  return y;
}

}  // namespace btic
