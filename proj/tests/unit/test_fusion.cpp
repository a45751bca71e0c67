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


#include <btic/fusion.hpp>

#include <gtest/gtest.h>

#include "support/gradcheck.hpp"

namespace btic {
namespace {

Matrix softmax_rows_direct(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) z += std::exp(s(i, j) - mx);
    for (Eigen::Index j = 0; j < s.cols(); ++j) out(i, j) = std::exp(s(i, j) - mx) / z;
  }
  return out;
}

TEST(Fuse, TextRowsThenImageRows) {
  Rng rng(1);
  const Matrix t = random_normal(256, 16, 1.0, rng), im = random_normal(64, 16, 1.0, rng);
  const Matrix e = fuse(ag::constant(t), ag::constant(im)).value();
  EXPECT_EQ(e.rows(), 320);
  EXPECT_EQ(e.topRows(256), t);
  EXPECT_EQ(e.bottomRows(64), im);
}

TEST(Fuse, WidthMismatchIsFatal) {
  EXPECT_THROW(fuse(ag::constant(Matrix::Zero(4, 8)), ag::constant(Matrix::Zero(2, 6))), InputError);
}

TEST(Attend, SingleHeadIdentityProjectionsMatchHandOracle) {
  Rng rng(2);
  nn::ParameterSet params(true);
  FusionHead head(params, 4, 1, rng);
  auto& a = head.attention();
  for (auto* lin : {&a.query(), &a.key(), &a.value(), &a.output()}) lin->weight().mutable_value() = Matrix::Identity(4, 4);
  const Matrix e = random_normal(3, 4, 1.0, rng);
  const auto fused = head.attend(ag::constant(e));
  const Matrix expected = softmax_rows_direct(e * e.transpose() / 2.0) * e;
  EXPECT_LT((fused.x.value() - expected).cwiseAbs().maxCoeff(), 1e-12);
  ASSERT_EQ(fused.attention.size(), 1u);
  EXPECT_LT((fused.attention[0] - softmax_rows_direct(e * e.transpose() / 2.0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attend, ShapeAndRowStochasticityOnRandomInputs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int heads = std::vector<int>{1, 2, 4, 8}[seed % 4];
    const Eigen::Index l = 3 + static_cast<Eigen::Index>(seed % 7);
    nn::ParameterSet params(true);
    FusionHead head(params, 16, heads, rng);
    const auto fused = head.attend(ag::constant(random_normal(l, 16, 3.0, rng)));
    EXPECT_EQ(fused.x.rows(), l);
    EXPECT_EQ(fused.x.cols(), 16);
    ASSERT_EQ(fused.attention.size(), static_cast<std::size_t>(heads));
    for (const auto& w : fused.attention) {
      EXPECT_LT((w.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-5);
      EXPECT_GE(w.minCoeff(), 0.0);
    }
  }
}

TEST(Attend, IndivisibleHeadsFailAtConstruction) {
  Rng rng(3);
  nn::ParameterSet params(true);
  EXPECT_THROW(FusionHead(params, 10, 4, rng), InputError);
}

TEST(Attend, ZeroingImageRowsChangesTheOutput) {
  Rng rng(4);
  nn::ParameterSet params(true);
  FusionHead head(params, 8, 2, rng);
  const Matrix t = random_normal(5, 8, 1.0, rng), im = random_normal(3, 8, 1.0, rng);
  const Matrix x1 = head.attend(fuse(ag::constant(t), ag::constant(im))).x.value();
  const Matrix x0 = head.attend(fuse(ag::constant(t), ag::constant(Matrix::Zero(3, 8)))).x.value();
  EXPECT_GT((x1.topRows(5) - x0.topRows(5)).norm(), 1e-6);
}

TEST(Pool, ConstantMatrixGivesConstantHalves) {
  const auto p = pool(ag::constant(Matrix::Constant(6, 4, 2.5)), 0.5, false);
  EXPECT_TRUE((p.x_d.value().array() == 2.5).all());
  EXPECT_EQ(p.x_d.cols(), 8);
}

TEST(Pool, MatchesDirectColumnMaxAndMean) {
  Rng rng(5);
  const Matrix x = random_normal(5, 8, 1.0, rng);
  const RowVector v = pool(ag::constant(x), 0.5, false).x_d.value().row(0);
  for (Eigen::Index c = 0; c < 8; ++c) {
    double mx = -1e300, sum = 0.0;
    for (Eigen::Index r = 0; r < 5; ++r) {
      mx = std::max(mx, x(r, c));
      sum += x(r, c);
    }
    EXPECT_EQ(v(c), mx);
    EXPECT_NEAR(v(8 + c), sum / 5.0, 1e-15);
  }
}

TEST(Pool, EvaluationModeIsDeterministicAndTrainingDrops) {
  Rng rng(6);
  const Matrix x = random_normal(5, 64, 1.0, rng);
  const auto a = pool(ag::constant(x), 0.5, false), b = pool(ag::constant(x), 0.5, false);
  EXPECT_EQ(a.x_d.value(), b.x_d.value());
  EXPECT_EQ(a.x_d.value(), a.pooled.value());
  Rng drop(7);
  const auto t = pool(ag::constant(x), 0.5, true, &drop);
  const Matrix& pre = t.pooled.value();
  const Matrix& post = t.x_d.value();
  int zeros = 0;
  for (Eigen::Index j = 0; j < post.cols(); ++j) {
    if (post(0, j) == 0.0)
      ++zeros;
    else
      EXPECT_NEAR(post(0, j), 2.0 * pre(0, j), 1e-12);
  }
  EXPECT_GT(zeros, 30);
  EXPECT_LT(zeros, 100);
  EXPECT_THROW(pool(ag::constant(x), 0.5, true, nullptr), std::invalid_argument);
}

TEST(Pool, PermutationInvariantOverRows) {
  Rng rng(8);
  const Matrix x = random_normal(7, 6, 1.0, rng);
  Matrix shuffled = x;
  shuffled.row(0).swap(shuffled.row(6));
  shuffled.row(2).swap(shuffled.row(3));
  const RowVector a = pool(ag::constant(x), 0.0, false).x_d.value().row(0);
  const RowVector b = pool(ag::constant(shuffled), 0.0, false).x_d.value().row(0);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Classify, ZeroWeightsGiveHalfAndUnreliableAtThreshold) {
  Rng rng(9);
  nn::ParameterSet params(true);
  FusionHead head(params, 4, 2, rng);
  head.classifier().weight().mutable_value().setZero();
  head.classifier().bias().mutable_value().setZero();
  const auto p = head.classify(ag::constant(Matrix::Ones(1, 8)));
  EXPECT_EQ(p.score, 0.5);
  EXPECT_EQ(p.label, Label::Unreliable);
}

TEST(Classify, ScoreStrictlyInsideUnitIntervalAtExtremes) {
  Rng rng(10);
  nn::ParameterSet params(true);
  FusionHead head(params, 4, 2, rng);
  head.classifier().weight().mutable_value().setConstant(1e6);
  for (double v : {1.0, -1.0}) {
    const auto p = head.classify(ag::constant(Matrix::Constant(1, 8, v)));
    EXPECT_GT(p.score, 0.0);
    EXPECT_LT(p.score, 1.0);
    EXPECT_EQ(p.label, v > 0 ? Label::Unreliable : Label::Reliable);
  }
}

TEST(CrossEntropy, HandValues) {
  EXPECT_NEAR(cross_entropy(0.5, Label::Reliable), std::log(2.0), 1e-12);
  EXPECT_NEAR(cross_entropy(0.5, Label::Unreliable), 0.6931471805599453, 1e-12);
  EXPECT_LT(cross_entropy(1.0 - 1e-12, Label::Unreliable), 1e-11);
  const double expected = (-std::log(0.9) - std::log(0.8) - std::log(0.5)) / 3.0;
  EXPECT_NEAR(cross_entropy({0.9, 0.2, 0.5}, {Label::Unreliable, Label::Reliable, Label::Unreliable}), expected,
              1e-12);
  EXPECT_THROW(cross_entropy(0.0, Label::Reliable), RuntimeError);
  EXPECT_THROW(cross_entropy(1.0, Label::Reliable), RuntimeError);
}

TEST(CrossEntropy, LogitGradientIsScoreMinusTarget) {
  for (double z : {-2.0, 0.3, 1.7})
    for (Label y : {Label::Reliable, Label::Unreliable}) {
      ag::Var logit = ag::leaf(Matrix::Constant(1, 1, z));
      ag::backward(ag::bce_with_logits(logit, target_of(y)));
      const double h = 1e-6;
      const double numeric = (cross_entropy(sigmoid(z + h), y) - cross_entropy(sigmoid(z - h), y)) / (2 * h);
      EXPECT_NEAR(logit.grad()(0, 0), sigmoid(z) - target_of(y), 1e-12);
      EXPECT_LT(std::abs(numeric - logit.grad()(0, 0)) / std::abs(logit.grad()(0, 0)), 1e-4);
    }
}

TEST(FusionHead, EndToEndGradientOfCrossEntropyMatchesFiniteDifferences) {
  Rng rng(11);
  nn::ParameterSet params(true);
  FusionHead head(params, 8, 2, rng);
  const Matrix e = random_normal(6, 8, 1.0, rng);
  auto loss = [&] {
    const auto fused = head.attend(ag::constant(e));
    return ag::bce_with_logits(head.classify(pool(fused.x, 0.0, false).x_d).logit, 1.0);
  };
  params.zero_grad();
  ag::backward(loss());
  for (auto& [name, p] : params.entries()) {
    const Matrix numeric = testing::numeric_gradient(p, [&] { return loss().scalar(); });
    EXPECT_LT(testing::relative_error(p.grad(), numeric), 1e-4) << name;
  }
}

}  // namespace
}  // namespace btic
