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


#include <btic/encoders.hpp>
#include <btic/image.hpp>

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

namespace btic {
namespace {

using testing::scratch_dir;

std::shared_ptr<const Encoders> tiny_encoders() {
  static auto enc = std::make_shared<const Encoders>(EncoderConfig::tiny());
  return enc;
}

cv::Mat noise_image(int h, int w, std::uint64_t seed) {
  cv::Mat img(h, w, CV_8UC3);
  cv::RNG rng(seed);
  rng.fill(img, cv::RNG::UNIFORM, 0, 256);
  return img;
}

Article article(const std::string& id, const std::string& headline, const std::string& body) {
  Article a;
  a.id = id;
  a.headline = headline;
  a.body = body;
  return a;
}

// --- tokenizer -----------------------------------------------------------------

TEST(Tokenizer, PairLayoutAndPadding) {
  Tokenizer t(1024);
  auto [ids, valid] = t.encode("Masks work", "Study finds.", 10, true);
  ASSERT_EQ(ids.size(), 10u);
  // [CLS] masks work [SEP] study finds . [SEP] [PAD] [PAD]
  EXPECT_EQ(valid, 8);
  EXPECT_EQ(ids[0], Tokenizer::kCls);
  EXPECT_EQ(ids[3], Tokenizer::kSep);
  EXPECT_EQ(ids[7], Tokenizer::kSep);
  EXPECT_EQ(ids[8], Tokenizer::kPad);
  EXPECT_EQ(t.display("Masks work", "Study finds.", 10, true)[1], "masks");
}

TEST(Tokenizer, EmptyTextGivesOnlySpecialTokens) {
  Tokenizer t(1024);
  EXPECT_EQ(t.encode("", "", 16, true).second, 3);
  EXPECT_EQ(t.encode("", "", 16, false).second, 2);
}

TEST(Tokenizer, LongBodyIsTruncatedBeforeTheHeadline) {
  Tokenizer t(30522);
  std::string body;
  for (int i = 0; i < 1000; ++i) body += "word" + std::to_string(i) + " ";
  auto [ids, valid] = t.encode("short headline here", body, 256, true);
  EXPECT_EQ(valid, 256);
  EXPECT_EQ(ids.size(), 256u);
  const auto shown = t.display("short headline here", body, 256, true);
  EXPECT_EQ(shown[1], "short");
  EXPECT_EQ(shown[3], "here");
  EXPECT_EQ(shown[5], "word0");
  EXPECT_EQ(shown[254], "word249");  // 256 - 3 specials - 3 headline tokens = 250 body tokens
  EXPECT_EQ(shown[255], "[SEP]");
}

TEST(Tokenizer, HashedIdsStayInVocabularyAndAvoidSpecials) {
  Tokenizer t(64);
  for (int id : t.tokenize("the quick brown fox jumps over the lazy dog 12345 !? ünïcode")) {
    EXPECT_GE(id, 5);
    EXPECT_LT(id, 64);
  }
}

TEST(Tokenizer, WordPieceFromVocabularyFile) {
  const auto dir = scratch_dir("wordpiece");
  {
    std::ofstream v(dir / "vocab.txt");
    v << "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nun\n##reli\n##able\nnews\n";
  }
  Tokenizer t(0, (dir / "vocab.txt").string());
  EXPECT_EQ(t.vocab_size(), 9);
  EXPECT_EQ(t.tokenize("Unreliable news zzz"), (std::vector<int>{5, 6, 7, 8, 1}));
}

// --- text encoder --------------------------------------------------------------------

TEST(TextEncoder, ShapeAndDeterminism) {
  const auto enc = tiny_encoders();
  const auto a = article("x", "Vaccine trial results", "The trial enrolled many volunteers.");
  const auto e1 = enc->encode_text(a);
  EXPECT_EQ(e1.matrix.rows(), 16);
  EXPECT_EQ(e1.matrix.cols(), 32);
  EXPECT_EQ(e1.matrix, enc->encode_text(a).matrix);
  const Encoders other(EncoderConfig::tiny());
  EXPECT_EQ(e1.matrix, other.encode_text(a).matrix);
  EXPECT_TRUE(e1.matrix.allFinite());
}

TEST(TextEncoder, EmptyTextIsSpecialTokensOnly) {
  const auto e = tiny_encoders()->encode_text(article("x", "", ""));
  EXPECT_EQ(e.valid_len, 3);
  EXPECT_EQ(e.matrix.rows(), 16);
}

TEST(TextEncoder, PaddedPositionsDoNotInfluenceValidRows) {
  const TextEncoder& t = tiny_encoders()->text_encoder();
  auto [ids, valid] = t.tokenizer().encode("alpha beta", "gamma", 16, true);
  const auto base = t.encode_ids(ids, valid);
  for (std::size_t i = static_cast<std::size_t>(valid); i < ids.size(); ++i) ids[i] = 100 + static_cast<int>(i);
  const auto changed = t.encode_ids(ids, valid);
  EXPECT_LT((base.matrix.topRows(valid) - changed.matrix.topRows(valid)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(HeadlineVector, SelfCosineAndDeterminism) {
  const auto enc = tiny_encoders();
  for (const char* h : {"Masks reduce transmission", "Miracle cure hidden by doctors", "x"}) {
    const auto v = enc->encode_headline("id", h).vector;
    EXPECT_NEAR(cosine(v, v), 1.0, 1e-12);
    EXPECT_EQ(v, enc->encode_headline("id", h).vector);
  }
}

TEST(HeadlineVector, ParaphraseCloserThanUnrelated) {
  const auto enc = tiny_encoders();
  const auto a = enc->encode_headline("a", "New vaccine trial shows strong protection against covid").vector;
  const auto b = enc->encode_headline("b", "Vaccine trial shows strong protection against covid variant").vector;
  const auto c = enc->encode_headline("c", "Stock markets rally").vector;
  const auto d = enc->encode_headline("d", "Garden birds migrate south").vector;
  EXPECT_GT(cosine(a, b), cosine(c, d));
  EXPECT_GT(cosine(a, b), cosine(a, c));
}

TEST(HeadlineVector, DependsOnlyOnHeadline) {
  const auto enc = tiny_encoders();
  Article x = article("x", "Same headline", "body one");
  Article y = article("y", "Same headline", "a different body");
  y.label = Label::Unreliable;
  y.image_path = "elsewhere.png";
  EXPECT_EQ(enc->encode_headline(x.id, x.headline).vector, enc->encode_headline(y.id, y.headline).vector);
}

// --- images -------------------------------------------------------------------------------

TEST(Patchify, FullResolutionGridShape) {
  const auto g = patchify(noise_image(480, 720, 1), 640, 8);
  ASSERT_EQ(g.size(), 64u);
  for (const auto& p : g.patches) {
    EXPECT_EQ(p.rows, 80);
    EXPECT_EQ(p.cols, 80);
    EXPECT_EQ(p.channels(), 3);
  }
}

TEST(Patchify, ReassembleIsTheResizedImageBitExact) {
  const cv::Mat img = noise_image(97, 131, 2);
  for (auto [size, grid] : {std::pair{640, 8}, {32, 2}, {30, 5}}) {
    const cv::Mat back = reassemble(patchify(img, size, grid));
    const cv::Mat resized = resize_bilinear(img, size, size);
    EXPECT_EQ(cv::norm(back, resized, cv::NORM_INF), 0.0);
  }
}

TEST(Patchify, RowMajorOrder) {
  cv::Mat img(4, 4, CV_8UC3, cv::Scalar(0, 0, 0));
  img(cv::Rect(2, 0, 2, 2)).setTo(cv::Scalar(255, 255, 255));  // top-right quadrant
  const auto g = patchify(img, 4, 2);
  EXPECT_EQ(cv::countNonZero(g.patches[1].reshape(1)), 12);
  EXPECT_EQ(cv::countNonZero(g.patches[2].reshape(1)), 0);
}

TEST(Patchify, ConstantImageGivesIdenticalPatches) {
  const auto g = patchify(cv::Mat(300, 200, CV_8UC3, cv::Scalar(12, 34, 56)), 640, 8);
  for (const auto& p : g.patches) EXPECT_EQ(cv::norm(p, g.patches.front(), cv::NORM_INF), 0.0);
}

TEST(Patchify, RejectsBadGridAndEmptyImage) {
  EXPECT_THROW(patchify(noise_image(10, 10, 3), 30, 4), InputError);
  EXPECT_THROW(patchify(cv::Mat(), 32, 2), InputError);
}

TEST(PatchFeatures, ShapeIdenticalPatchesAndDeterminism) {
  const auto enc = tiny_encoders();
  cv::Mat img = noise_image(32, 32, 4);
  img(cv::Rect(16, 0, 16, 16)).copyTo(img(cv::Rect(0, 0, 16, 16)));  // patch 0 == patch 1
  const Matrix f = enc->encode_patches(enc->patchify(img));
  EXPECT_EQ(f.rows(), 4);
  EXPECT_EQ(f.cols(), 24);
  EXPECT_EQ(f.row(0), f.row(1));
  EXPECT_NE(f.row(0), f.row(2));
  const Encoders other(EncoderConfig::tiny());
  EXPECT_EQ(f, other.encode_patches(other.patchify(img)));
}

TEST(PatchFeatures, SerializedFeaturesReloadIdentically) {
  const auto enc = tiny_encoders();
  const Matrix f = enc->encode_patches(enc->patchify(noise_image(50, 40, 5)));
  const auto path = scratch_dir("featstore") / "patches.bin";
  FeatureStore store(f.rows(), f.cols());
  store.put("a1", f);
  store.save(path);
  const auto loaded = FeatureStore::load(path);
  EXPECT_EQ(loaded.get("a1"), f);
  EXPECT_THROW(loaded.get("zz"), InputError);
}

TEST(Encoders, ImageFeaturesNameUndecodableArticle) {
  const auto enc = tiny_encoders();
  Article a = article("broken7", "h", "b");
  const auto dir = scratch_dir("undecodable");
  {
    std::ofstream(dir / "x.png") << "garbage";
  }
  a.image_path = (dir / "x.png").string();
  try {
    enc->image_features(a);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("broken7"), std::string::npos);
  }
}

TEST(Encoders, FeatureStoresReplaceTheFrozenEncoders) {
  const auto dir = scratch_dir("stores");
  const auto cfg0 = EncoderConfig::tiny();
  FeatureStore text(cfg0.max_len, cfg0.width), patches(cfg0.patches(), cfg0.patch_feature_width);
  Rng rng(3);
  const Matrix t = random_normal(cfg0.max_len, cfg0.width, 1.0, rng);
  const Matrix p = random_normal(cfg0.patches(), cfg0.patch_feature_width, 1.0, rng);
  text.put("a", t);
  patches.put("a", p);
  text.save(dir / "t.bin");
  patches.save(dir / "p.bin");
  EncoderConfig cfg = cfg0;
  cfg.text_features = (dir / "t.bin").string();
  cfg.patch_features = (dir / "p.bin").string();
  const Encoders enc(cfg);
  const Article a = article("a", "h", "b");
  EXPECT_EQ(enc.encode_text(a).matrix, t);
  EXPECT_EQ(enc.image_features(a), p);
}

// --- contextualizer --------------------------------------------------------------------------

TEST(ImageContextualizer, OutputShape) {
  Rng rng(1);
  nn::ParameterSet params(true);
  const auto cfg = EncoderConfig::tiny();
  ImageContextualizer ctx(params, cfg, rng);
  const auto out = ctx(ag::constant(random_normal(4, 24, 1.0, rng)));
  EXPECT_EQ(out.rows(), 4);
  EXPECT_EQ(out.cols(), 32);
}

TEST(ImageContextualizer, WithoutTransformerIsTheComposedLinearMap) {
  Rng rng(2);
  nn::ParameterSet params(true);
  const auto cfg = EncoderConfig::tiny();
  ImageContextualizer ctx(params, cfg, rng, /*with_transformer=*/false);
  ctx.first().weight().mutable_value() = Matrix::Identity(24, 24);
  ctx.first().bias().mutable_value().setZero();
  Matrix w2 = Matrix::Zero(24, 32);
  w2.leftCols(24) = Matrix::Identity(24, 24);
  ctx.second().weight().mutable_value() = w2;
  ctx.second().bias().mutable_value().setZero();
  const Matrix f = random_normal(4, 24, 1.0, rng);
  const Matrix out = ctx(ag::constant(f)).value();
  EXPECT_EQ(out.leftCols(24), f);
  EXPECT_TRUE(out.rightCols(8).isZero());
}

TEST(ImageContextualizer, ProjectionGradientsMatchFiniteDifferences) {
  Rng rng(3);
  nn::ParameterSet params(true);
  const auto cfg = EncoderConfig::tiny();
  ImageContextualizer ctx(params, cfg, rng);
  const Matrix f = random_normal(4, 24, 1.0, rng);
  const Matrix probe = random_normal(4, 32, 1.0, rng);
  auto loss = [&] { return ag::sum(ag::hadamard(ctx(ag::constant(f)), ag::constant(probe))); };
  params.zero_grad();
  ag::backward(loss());
  for (auto* lin : {&ctx.first(), &ctx.second()}) {
    const Matrix numeric = testing::numeric_gradient(lin->weight(), [&] { return loss().scalar(); });
    EXPECT_LT(testing::relative_error(lin->weight().grad(), numeric), 1e-4);
  }
}

// --- config -----------------------------------------------------------------------------------------

TEST(EncoderConfig, ProfilesAndJsonOverrides) {
  const auto full = EncoderConfig::full();
  EXPECT_EQ(full.max_len, 256);
  EXPECT_EQ(full.width, 768);
  EXPECT_EQ(full.patches(), 64);
  EXPECT_EQ(full.patch_feature_width, 2048);
  EXPECT_EQ(full.mid_width, 1024);
  EXPECT_EQ(full.image_size, 640);
  const auto tiny = EncoderConfig::tiny();
  EXPECT_EQ(tiny.max_len, 16);
  EXPECT_EQ(tiny.width, 32);
  EXPECT_EQ(tiny.patches(), 4);
  const auto c = nlohmann::json{{"profile", "full"}, {"grid", 4}}.get<EncoderConfig>();
  EXPECT_EQ(c.grid, 4);
  EXPECT_EQ(c.width, 768);
  const nlohmann::json round = c;
  EXPECT_EQ(round.get<EncoderConfig>().grid, 4);
  EXPECT_THROW(EncoderConfig::for_profile("huge"), InputError);
}

TEST(EncoderConfig, ProblemsAreReported) {
  auto c = EncoderConfig::tiny();
  c.text_heads = 3;
  c.image_size = 33;
  const auto p = c.problems();
  EXPECT_EQ(p.size(), 2u);
  EXPECT_THROW(Encoders{c}, InputError);
}

}  // namespace
}  // namespace btic
