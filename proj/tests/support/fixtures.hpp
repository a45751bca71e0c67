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

// Synthetic corpora shared by the unit and acceptance tests.

#include <btic/btic.hpp>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace btic::testing {

namespace fs = std::filesystem;

inline fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "btic_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline Timestamp day(int d, int seconds = 0) {
  return Timestamp{std::chrono::sys_days{std::chrono::year{2020} / 1 / 1}} + std::chrono::days{d} +
         std::chrono::seconds{seconds};
}

// Solid image with per-class hue and a small bright square whose position
// depends on the label; written as PNG.
inline std::string write_class_image(const fs::path& dir, const std::string& id, Label label, int size, Rng& rng) {
  std::uniform_int_distribution<int> jitter(0, 30);
  const cv::Scalar base = label == Label::Unreliable ? cv::Scalar(40 + jitter(rng), 40, 200 - jitter(rng))
                                                     : cv::Scalar(200 - jitter(rng), 160, 40 + jitter(rng));
  cv::Mat img(size, size, CV_8UC3, base);
  const int q = size / 4;
  const cv::Point corner = label == Label::Unreliable ? cv::Point(0, 0) : cv::Point(size - q, size - q);
  cv::rectangle(img, corner, corner + cv::Point(q - 1, q - 1), cv::Scalar(255, 255, 255), cv::FILLED);
  const fs::path path = dir / (id + ".png");
  cv::imwrite(path.string(), img);
  return path.string();
}

// Linearly separable corpus: headlines and bodies draw from disjoint
// per-class vocabularies, images differ in colour and layout. Articles are
// published one day apart in id order with alternating labels shuffled by seed.
inline Corpus separable_corpus(const fs::path& image_dir, int count = 32, std::uint64_t seed = 7,
                               int image_size = 32) {
  static const std::vector<std::string> reliable_words{"vaccine", "trial", "peer", "review", "study", "data",
                                                       "evidence", "hospital", "doctors", "agency"};
  static const std::vector<std::string> unreliable_words{"hoax", "secret", "cure", "miracle", "banned", "shocking",
                                                         "exposed", "plot", "truth", "hidden"};
  Rng rng(seed);
  fs::create_directories(image_dir);
  Corpus c;
  std::vector<Label> labels;
  for (int i = 0; i < count; ++i) labels.push_back(i % 2 ? Label::Unreliable : Label::Reliable);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (int i = 0; i < count; ++i) {
    Article a;
    char id[16];
    std::snprintf(id, sizeof(id), "a%03d", i);
    a.id = id;
    a.label = labels[static_cast<std::size_t>(i)];
    const auto& words = a.label == Label::Reliable ? reliable_words : unreliable_words;
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
    for (int w = 0; w < 4; ++w) a.headline += (w ? " " : "") + words[pick(rng)];
    for (int w = 0; w < 12; ++w) a.body += (w ? " " : "") + words[pick(rng)];
    a.timestamp = day(i);
    a.image_ref = "images/" + a.id + ".png";
    a.image_path = write_class_image(image_dir, a.id, a.label, image_size, rng);
    c.articles.push_back(std::move(a));
  }
  c.provenance.source = "synthetic";
  c.provenance.adapter = "canonical";
  c.provenance.rows_read = static_cast<std::size_t>(count);
  return c;
}

// Tiny-profile training config for fast tests.
inline TrainConfig tiny_config(Variant v = Variant::BTIC) {
  TrainConfig c;
  c.variant = v;
  c.encoder = EncoderConfig::tiny();
  c.heads = 4;
  c.learning_rate = 1e-3;
  c.epochs = 3;
  c.batch_size = 8;
  c.k = 3;
  c.dropout = 0.1;
  c.split_mode = SplitMode::Chronological;
  return c;
}

}  // namespace btic::testing
