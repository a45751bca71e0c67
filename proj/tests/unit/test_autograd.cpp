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


#include <btic/autograd.hpp>
#include <btic/nn.hpp>

#include <gtest/gtest.h>

#include "support/gradcheck.hpp"

namespace btic {
namespace {

using testing::numeric_gradient;
using testing::relative_error;

// Reduces a matrix-valued op to a scalar through fixed random weights so every
// output entry contributes to the gradient.
struct Probe {
  Matrix w;
  ag::Var operator()(const ag::Var& y) const { return ag::sum(ag::hadamard(y, ag::constant(w))); }
};

void check_unary(const std::function<ag::Var(const ag::Var&)>& op, Matrix x0, double tol = 1e-6) {
  Rng rng(11);
  ag::Var x = ag::leaf(std::move(x0));
  const Matrix out = op(x).value();
  Probe probe{random_normal(out.rows(), out.cols(), 1.0, rng)};
  ag::Var loss = probe(op(x));
  ag::backward(loss);
  const Matrix analytic = x.grad();
  const Matrix numeric = numeric_gradient(x, [&] { return probe(op(ag::constant(x.value()))).scalar(); });
  EXPECT_LT(relative_error(analytic, numeric), tol);
}

TEST(Autograd, MatmulGradientsMatchFiniteDifferences) {
  Rng rng(1);
  const Matrix b = random_normal(4, 3, 1.0, rng);
  check_unary([&](const ag::Var& a) { return ag::matmul(a, ag::constant(b)); }, random_normal(2, 4, 1.0, rng));
  const Matrix a = random_normal(2, 4, 1.0, rng);
  check_unary([&](const ag::Var& x) { return ag::matmul(ag::constant(a), x); }, random_normal(4, 3, 1.0, rng));
  const Matrix c = random_normal(5, 4, 1.0, rng);
  check_unary([&](const ag::Var& x) { return ag::matmul_nt(x, ag::constant(c)); }, random_normal(3, 4, 1.0, rng));
  check_unary([&](const ag::Var& x) { return ag::matmul_nt(ag::constant(c), x); }, random_normal(3, 4, 1.0, rng));
}

TEST(Autograd, ElementwiseGradientsMatchFiniteDifferences) {
  Rng rng(2);
  const Matrix other = random_normal(3, 5, 1.0, rng);
  const Matrix row = random_normal(1, 5, 1.0, rng);
  check_unary([&](const ag::Var& x) { return ag::add(x, ag::constant(other)); }, random_normal(3, 5, 1.0, rng));
  check_unary([&](const ag::Var& x) { return ag::sub(ag::constant(other), x); }, random_normal(3, 5, 1.0, rng));
  check_unary([&](const ag::Var& x) { return ag::add_row(x, ag::constant(row)); }, random_normal(3, 5, 1.0, rng));
  check_unary([&](const ag::Var& r) { return ag::add_row(ag::constant(other), r); }, random_normal(1, 5, 1.0, rng));
  check_unary([&](const ag::Var& x) { return ag::scale(x, -2.5); }, random_normal(3, 5, 1.0, rng));
  check_unary([&](const ag::Var& x) { return ag::hadamard(x, ag::constant(other)); }, random_normal(3, 5, 1.0, rng));
  check_unary([](const ag::Var& x) { return ag::gelu(x); }, random_normal(3, 5, 1.0, rng));
  // Away from the kink at 0.
  Matrix pos = random_normal(3, 5, 1.0, rng);
  pos = pos.unaryExpr([](double v) { return v >= 0 ? v + 0.1 : v - 0.1; });
  check_unary([](const ag::Var& x) { return ag::relu(x); }, pos);
}

TEST(Autograd, SoftmaxAndLayerNormGradientsMatchFiniteDifferences) {
  Rng rng(3);
  check_unary([](const ag::Var& x) { return ag::softmax_rows(x); }, random_normal(4, 6, 1.0, rng));
  const std::vector<bool> mask{true, true, false, true, false, true};
  check_unary([&](const ag::Var& x) { return ag::softmax_rows(x, &mask); }, random_normal(4, 6, 1.0, rng));
  const Matrix gamma = random_normal(1, 6, 1.0, rng), beta = random_normal(1, 6, 1.0, rng);
  check_unary(
      [&](const ag::Var& x) { return ag::layer_norm_rows(x, ag::constant(gamma), ag::constant(beta), 1e-12); },
      random_normal(4, 6, 1.0, rng), 1e-5);
  const Matrix x0 = random_normal(4, 6, 1.0, rng);
  check_unary([&](const ag::Var& g) { return ag::layer_norm_rows(ag::constant(x0), g, ag::constant(beta)); },
              random_normal(1, 6, 1.0, rng));
}

TEST(Autograd, StructuralOpsRouteGradients) {
  Rng rng(4);
  const Matrix other = random_normal(2, 5, 1.0, rng);
  check_unary([&](const ag::Var& x) { return ag::concat_rows({x, ag::constant(other)}); }, random_normal(3, 5, 1.0, rng));
  check_unary([&](const ag::Var& x) { return ag::concat_cols({ag::constant(other), x}); }, random_normal(2, 3, 1.0, rng));
  check_unary([](const ag::Var& x) { return ag::slice_cols(x, 1, 3); }, random_normal(3, 5, 1.0, rng));
  check_unary([](const ag::Var& x) { return ag::col_max(x); }, random_normal(4, 5, 1.0, rng));
  check_unary([](const ag::Var& x) { return ag::col_mean(x); }, random_normal(4, 5, 1.0, rng));
}

TEST(Autograd, BceWithLogitsGradientIsScoreMinusTarget) {
  for (double z : {-3.0, -0.2, 0.0, 0.7, 4.0})
    for (double y : {0.0, 1.0}) {
      ag::Var logit = ag::leaf(Matrix::Constant(1, 1, z));
      ag::Var loss = ag::bce_with_logits(logit, y);
      ag::backward(loss);
      EXPECT_NEAR(logit.grad()(0, 0), 1.0 / (1.0 + std::exp(-z)) - y, 1e-12);
      const double s = 1.0 / (1.0 + std::exp(-z));
      EXPECT_NEAR(loss.scalar(), -(y * std::log(s) + (1 - y) * std::log(1 - s)), 1e-12);
    }
}

TEST(Autograd, SharedSubgraphAccumulates) {
  ag::Var x = ag::leaf(Matrix::Constant(1, 1, 3.0));
  ag::Var y = ag::hadamard(x, x);  // x^2
  ag::Var z = ag::add(y, ag::scale(x, 2.0));
  ag::backward(z);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 8.0);
}

TEST(Autograd, ConstantsBuildNoGraph) {
  ag::Var a = ag::constant(Matrix::Ones(2, 2));
  ag::Var b = ag::matmul(a, a);
  EXPECT_FALSE(b.requires_grad());
  EXPECT_TRUE(b.node()->inputs.empty());
}

TEST(Autograd, MeanOfAveragesScalars) {
  ag::Var a = ag::leaf(Matrix::Constant(1, 1, 1.0));
  ag::Var b = ag::leaf(Matrix::Constant(1, 1, 4.0));
  ag::Var m = ag::mean_of({a, b});
  EXPECT_DOUBLE_EQ(m.scalar(), 2.5);
  ag::backward(m);
  EXPECT_DOUBLE_EQ(a.grad()(0, 0), 0.5);
}

TEST(Nn, AttentionParameterGradientsMatchFiniteDifferences) {
  Rng rng(5);
  nn::ParameterSet params(true);
  nn::MultiHeadSelfAttention attn(params, "a", 8, 2, rng, true);
  const Matrix e = random_normal(5, 8, 1.0, rng);
  Probe probe{random_normal(5, 8, 1.0, rng)};
  auto loss = [&] { return probe(attn(ag::constant(e))); };
  params.zero_grad();
  ag::backward(loss());
  for (auto& [name, p] : params.entries()) {
    const Matrix numeric = numeric_gradient(p, [&] { return loss().scalar(); });
    if (name.ends_with("key.bias")) {
      // A shared key offset shifts every score in a row equally; softmax ignores it.
      EXPECT_LT(p.grad().norm(), 1e-12) << name;
      EXPECT_LT(numeric.norm(), 1e-8) << name;
      continue;
    }
    EXPECT_LT(relative_error(p.grad(), numeric), 1e-6) << name;
  }
}

TEST(Nn, TransformerLayerGradientsMatchFiniteDifferences) {
  Rng rng(6);
  nn::ParameterSet params(true);
  nn::TransformerLayer layer(params, "t", 8, 2, 16, rng, 0.3);
  const Matrix x = random_normal(4, 8, 1.0, rng);
  Probe probe{random_normal(4, 8, 1.0, rng)};
  auto loss = [&] { return probe(layer(ag::constant(x))); };
  params.zero_grad();
  ag::backward(loss());
  for (auto& [name, p] : params.entries()) {
    const Matrix numeric = numeric_gradient(p, [&] { return loss().scalar(); });
    if (name.ends_with("key.bias")) {
      // A shared key offset shifts every score in a row equally; softmax ignores it.
      EXPECT_LT(p.grad().norm(), 1e-12) << name;
      EXPECT_LT(numeric.norm(), 1e-8) << name;
      continue;
    }
    EXPECT_LT(relative_error(p.grad(), numeric), 1e-5) << name;
  }
}

TEST(Nn, AttentionRejectsIndivisibleHeads) {
  Rng rng(7);
  nn::ParameterSet params(true);
  EXPECT_THROW(nn::MultiHeadSelfAttention(params, "a", 10, 3, rng), InputError);
}

TEST(Nn, FrozenParameterSetYieldsConstants) {
  Rng rng(8);
  nn::ParameterSet frozen(false);
  nn::Linear lin(frozen, "l", 3, 2, rng);
  EXPECT_FALSE(lin(ag::constant(Matrix::Ones(1, 3))).requires_grad());
}

TEST(Nn, CheckpointRoundTripsExactly) {
  Rng rng(9);
  nn::ParameterSet a(true);
  nn::Linear la(a, "l", 3, 4, rng);
  const auto path = std::filesystem::temp_directory_path() / "btic_ckpt_roundtrip.ckpt";
  a.save(path);
  Rng other(10);
  nn::ParameterSet b(true);
  nn::Linear lb(b, "l", 3, 4, other);
  b.load(path);
  EXPECT_EQ(la.weight().value(), lb.weight().value());
  EXPECT_EQ(la.bias().value(), lb.bias().value());
  std::filesystem::remove(path);
}

TEST(Nn, AdamMovesAgainstTheGradient) {
  nn::ParameterSet params(true);
  ag::Var w = params.add("w", Matrix::Constant(1, 1, 2.0));
  nn::Adam adam(params, {0.1});
  for (int i = 0; i < 200; ++i) {
    params.zero_grad();
    ag::backward(ag::hadamard(w, w));
    adam.step();
  }
  EXPECT_LT(std::abs(w.value()(0, 0)), 0.05);
}

}  // namespace
}  // namespace btic
