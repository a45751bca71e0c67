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

#include <btic/nn.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace btic {

// Text rows first, then image rows: e = e^w (+) e~^i, l = n + m.
inline ag::Var fuse(const ag::Var& text, const ag::Var& image) {
  if (text.cols() != image.cols())
    throw InputError("fuse: text width " + std::to_string(text.cols()) + " != image width " +
                     std::to_string(image.cols()));
  return ag::concat_rows({text, image});
}

struct FusedRepresentation {
  ag::Var x;                      // l x d
  std::vector<Matrix> attention;  // R matrices, l x l, rows sum to 1
};

// x_d = [colmax(x), colmean(x)] of width 2d; dropout (inverted scaling) only in training.
struct PooledVector {
  ag::Var pooled;  // before dropout
  ag::Var x_d;     // after dropout
};

inline PooledVector pool(const ag::Var& x, double dropout_p, bool training, Rng* rng = nullptr) {
  ag::Var pooled = ag::concat_cols({ag::col_max(x), ag::col_mean(x)});
  if (!training || dropout_p <= 0.0) return {pooled, pooled};
  if (!rng) throw std::invalid_argument("pool: training-mode dropout needs an rng");
  std::bernoulli_distribution keep(1.0 - dropout_p);
  Matrix mask(1, pooled.cols());
  for (Eigen::Index j = 0; j < mask.cols(); ++j) mask(0, j) = keep(*rng) ? 1.0 / (1.0 - dropout_p) : 0.0;
  return {pooled, ag::hadamard(pooled, ag::constant(std::move(mask)))};
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// score = P(Unreliable); label Unreliable iff score >= 0.5.
struct Prediction {
  double score = 0.5;
  Label label = Label::Unreliable;
  ag::Var logit;
};

// Binary cross-entropy with y = 1 for Unreliable.
inline double cross_entropy(double score, Label y) {
  if (!(score > 0.0 && score < 1.0))
    throw RuntimeError("cross_entropy: score " + std::to_string(score) + " outside (0, 1)");
  const double t = target_of(y);
  return -(t * std::log(score) + (1.0 - t) * std::log(1.0 - score));
}

inline double cross_entropy(const std::vector<double>& scores, const std::vector<Label>& labels) {
  if (scores.size() != labels.size() || scores.empty()) throw std::invalid_argument("cross_entropy: bad batch");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) total += cross_entropy(scores[i], labels[i]);
  return total / static_cast<double>(scores.size());
}

// Multi-head self-attention over the fused sequence followed by the pooled
// sigmoid classifier.
class FusionHead {
 public:
  FusionHead() = default;
  FusionHead(nn::ParameterSet& params, Eigen::Index width, int heads, Rng& rng)
      : attention_(params, "fusion.attention", width, heads, rng, /*bias=*/false),
        classifier_(params, "classifier", 2 * width, 1, rng) {}

  FusedRepresentation attend(const ag::Var& e) const {
    FusedRepresentation out;
    nn::AttentionTrace trace;
    out.x = attention_(e, nullptr, &trace);
    out.attention = std::move(trace.heads);
    return out;
  }

  Prediction classify(const ag::Var& x_d) const {
    if (x_d.cols() != classifier_.in_features()) throw InputError("classify: pooled width mismatch");
    Prediction p;
    p.logit = classifier_(x_d);
    p.score = sigmoid(p.logit.scalar());
    // Keep the score strictly inside (0, 1) where double rounding would reach the bounds.
    p.score = std::clamp(p.score, std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0));
    p.label = p.score >= 0.5 ? Label::Unreliable : Label::Reliable;
    return p;
  }

  nn::MultiHeadSelfAttention& attention() { return attention_; }
  const nn::MultiHeadSelfAttention& attention() const { return attention_; }
  nn::Linear& classifier() { return classifier_; }

 private:
  nn::MultiHeadSelfAttention attention_;
  nn::Linear classifier_;
};

}  // namespace btic
