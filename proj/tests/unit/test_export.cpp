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


#include <btic/export.hpp>
#include <btic/projection.hpp>

#include <gtest/gtest.h>

#include <fstream>

#include "support/fixtures.hpp"

namespace btic {
namespace {

TEST(Pca, RecoversDominantDirection) {
  Matrix x(5, 3);
  for (int i = 0; i < 5; ++i) x.row(i) << i, 2.0 * i, -i;
  const Matrix y = pca_2d(x);
  EXPECT_NEAR(y.col(1).norm(), 0.0, 1e-9);
  EXPECT_NEAR(std::abs(y(4, 0) - y(0, 0)), 4.0 * std::sqrt(6.0), 1e-9);
  EXPECT_TRUE(pca_2d(Matrix::Ones(1, 3)).isZero(0.0));
}

TEST(Tsne, KeepsSeparatedClustersApartAndIsDeterministic) {
  Rng rng(3);
  Matrix x = random_normal(30, 10, 0.1, rng);
  for (int i = 15; i < 30; ++i) x.row(i).array() += 5.0;
  TsneOptions opt;
  opt.seed = 4;
  const Matrix y = tsne_2d(x, opt);
  ASSERT_TRUE(y.allFinite());
  for (int i = 0; i < 30; ++i) {
    int nearest = -1;
    double best = 1e300;
    for (int j = 0; j < 30; ++j)
      if (j != i && (y.row(i) - y.row(j)).squaredNorm() < best) best = (y.row(i) - y.row(j)).squaredNorm(), nearest = j;
    EXPECT_EQ(nearest < 15, i < 15) << i;
  }
  EXPECT_EQ(y, tsne_2d(x, opt));
  EXPECT_LT(y.cwiseAbs().maxCoeff(), 1e3);
}

TEST(Npy, HeaderIsAlignedAndDataFollows) {
  const auto path = testing::scratch_dir("npy") / "a.npy";
  write_npy(path, {2, 3}, {1, 2, 3, 4, 5, 6});
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ASSERT_EQ(bytes.substr(0, 6), "\x93NUMPY");
  const std::size_t header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
  EXPECT_EQ((10 + header_len) % 64, 0u);
  const std::string header = bytes.substr(10, header_len);
  EXPECT_NE(header.find("'shape': (2, 3)"), std::string::npos);
  EXPECT_EQ(header.back(), '\n');
  ASSERT_EQ(bytes.size(), 10 + header_len + 6 * sizeof(double));
  double last = 0;
  std::memcpy(&last, bytes.data() + bytes.size() - sizeof(double), sizeof(double));
  EXPECT_EQ(last, 6.0);
}

TEST(AttentionSummary, SplitsTextAndPatchMass) {
  Matrix h(6, 6);
  h.setConstant(1.0 / 6.0);
  h.col(5).array() += 0.1;
  h.col(0).array() -= 0.1;
  const auto s = summarize_attention({h, h}, 2, 2);
  EXPECT_NEAR(s.received.sum(), 6.0, 1e-12);
  EXPECT_EQ(s.text.size(), 2);
  ASSERT_EQ(s.patch_grid.rows(), 2);
  EXPECT_NEAR(s.patch_grid(1, 1), 1.0 + 0.6, 1e-12);
  EXPECT_NEAR(s.patch_grid(0, 0), 1.0, 1e-12);
  EXPECT_EQ(summarize_attention({h}, 6, 2).patch_grid.size(), 0);
}

TEST(UpscaleGrid, ConstantGridStaysConstant) {
  const Matrix up = upscale_grid(Matrix::Constant(2, 2, 0.25), 32);
  EXPECT_EQ(up.rows(), 32);
  EXPECT_NEAR(up.minCoeff(), 0.25, 1e-12);
  EXPECT_NEAR(up.maxCoeff(), 0.25, 1e-12);
}

}  // namespace
}  // namespace btic
