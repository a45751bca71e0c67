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

#include <btic/corpus.hpp>
#include <btic/image.hpp>
#include <btic/nn.hpp>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace btic {

struct EncoderConfig {
  std::string profile = "tiny";
  std::uint64_t seed = 1234;  // initialization of the frozen encoders

  // text
  int max_len = 16;  // n
  int width = 32;    // d
  int text_layers = 2;
  int text_heads = 2;
  int text_ff = 64;
  int vocab_size = 1024;
  std::string vocab_file;  // WordPiece vocabulary; hashed word ids when empty

  // image
  int image_size = 32;
  int grid = 2;                // m = grid^2
  int patch_feature_width = 24;  // d^I
  std::vector<int> backbone_channels{8, 16};
  int mid_width = 24;  // d_mid, interior width of the two projections
  int image_heads = 2;
  int image_ff = 64;

  // Optional precomputed feature stores keyed by article id.
  std::string text_features;
  std::string patch_features;

  int patches() const { return grid * grid; }

  static EncoderConfig tiny() { return {}; }

  static EncoderConfig full() {
    EncoderConfig c;
    c.profile = "full";
    c.max_len = 256;
    c.width = 768;
    c.text_layers = 12;
    c.text_heads = 12;
    c.text_ff = 3072;
    c.vocab_size = 30522;
    c.image_size = 640;
    c.grid = 8;
    c.patch_feature_width = 2048;
    c.backbone_channels = {32, 64, 128, 256};
    c.mid_width = 1024;
    c.image_heads = 8;
    c.image_ff = 3072;
    return c;
  }

  static EncoderConfig for_profile(const std::string& name) {
    if (name == "tiny") return tiny();
    if (name == "full") return full();
    throw InputError("unknown encoder profile '" + name + "' (expected full or tiny)");
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    auto positive = [&](const char* name, int v) {
      if (v <= 0) out.push_back(std::string("encoder.") + name + " must be positive");
    };
    positive("max_len", max_len);
    positive("width", width);
    positive("text_layers", text_layers);
    positive("text_heads", text_heads);
    positive("text_ff", text_ff);
    positive("image_size", image_size);
    positive("grid", grid);
    positive("patch_feature_width", patch_feature_width);
    positive("mid_width", mid_width);
    positive("image_heads", image_heads);
    positive("image_ff", image_ff);
    if (max_len < 3) out.push_back("encoder.max_len must be at least 3 (special tokens)");
    if (vocab_size <= 5) out.push_back("encoder.vocab_size must exceed the 5 special tokens");
    if (text_heads > 0 && width % text_heads != 0) out.push_back("encoder.width must be divisible by text_heads");
    if (image_heads > 0 && width % image_heads != 0) out.push_back("encoder.width must be divisible by image_heads");
    if (grid > 0 && image_size % grid != 0) out.push_back("encoder.image_size must be a multiple of grid");
    if (backbone_channels.empty()) out.push_back("encoder.backbone_channels must not be empty");
    return out;
  }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"profile", c.profile},
                     {"seed", c.seed},
                     {"max_len", c.max_len},
                     {"width", c.width},
                     {"text_layers", c.text_layers},
                     {"text_heads", c.text_heads},
                     {"text_ff", c.text_ff},
                     {"vocab_size", c.vocab_size},
                     {"vocab_file", c.vocab_file},
                     {"image_size", c.image_size},
                     {"grid", c.grid},
                     {"patch_feature_width", c.patch_feature_width},
                     {"backbone_channels", c.backbone_channels},
                     {"mid_width", c.mid_width},
                     {"image_heads", c.image_heads},
                     {"image_ff", c.image_ff},
                     {"text_features", c.text_features},
                     {"patch_features", c.patch_features}};
}

// Starts from the named profile's defaults, then applies every key present.
inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c = EncoderConfig::for_profile(j.value("profile", std::string("tiny")));
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("seed", c.seed);
  take("max_len", c.max_len);
  take("width", c.width);
  take("text_layers", c.text_layers);
  take("text_heads", c.text_heads);
  take("text_ff", c.text_ff);
  take("vocab_size", c.vocab_size);
  take("vocab_file", c.vocab_file);
  take("image_size", c.image_size);
  take("grid", c.grid);
  take("patch_feature_width", c.patch_feature_width);
  take("backbone_channels", c.backbone_channels);
  take("mid_width", c.mid_width);
  take("image_heads", c.image_heads);
  take("image_ff", c.image_ff);
  take("text_features", c.text_features);
  take("patch_features", c.patch_features);
}

// id -> fixed-shape matrix, stored as
//   "BTICFEAT" | u64 count | u64 rows | u64 cols | count x { u64 id_len | id | rows*cols f64 row-major }
class FeatureStore {
 public:
  FeatureStore() = default;
  FeatureStore(Eigen::Index rows, Eigen::Index cols) : rows_(rows), cols_(cols) {}

  void put(const std::string& id, const Matrix& m) {
    if (m.rows() != rows_ || m.cols() != cols_) throw std::invalid_argument("feature store: shape mismatch for " + id);
    data_[id] = m;
  }
  bool contains(const std::string& id) const { return data_.count(id) != 0; }
  const Matrix& get(const std::string& id) const {
    auto it = data_.find(id);
    if (it == data_.end()) throw InputError("feature store has no entry for article " + id);
    return it->second;
  }
  std::size_t size() const { return data_.size(); }
  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write " + path.string());
    out.write("BTICFEAT", 8);
    put_u64(out, data_.size());
    put_u64(out, static_cast<std::uint64_t>(rows_));
    put_u64(out, static_cast<std::uint64_t>(cols_));
    for (const auto& [id, m] : data_) {
      put_u64(out, id.size());
      out.write(id.data(), static_cast<std::streamsize>(id.size()));
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
      out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
    }
  }

  static FeatureStore load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read feature store " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != "BTICFEAT") throw InputError("not a feature store: " + path.string());
    const auto count = get_u64(in);
    const auto rows = static_cast<Eigen::Index>(get_u64(in));
    const auto cols = static_cast<Eigen::Index>(get_u64(in));
    FeatureStore s(rows, cols);
    for (std::uint64_t k = 0; k < count; ++k) {
      std::string id(get_u64(in), '\0');
      in.read(id.data(), static_cast<std::streamsize>(id.size()));
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(s.rows_, s.cols_);
      in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
      if (!in) throw InputError("truncated feature store " + path.string());
      s.data_[id] = rm;
    }
    return s;
  }

 private:
  static void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
  static std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw InputError("truncated feature store");
    return v;
  }

  Eigen::Index rows_ = 0, cols_ = 0;
  std::map<std::string, Matrix> data_;
};

// Lower-cases ASCII, splits on whitespace and isolates punctuation. With a
// vocabulary, words are split greedily into WordPiece units; without one,
// each word maps to a hashed id.
class Tokenizer {
 public:
  static constexpr int kPad = 0, kUnk = 1, kCls = 2, kSep = 3, kMask = 4;

  explicit Tokenizer(int vocab_size, const std::string& vocab_file = {}) : vocab_size_(vocab_size) {
    if (vocab_file.empty()) return;
    std::ifstream in(vocab_file);
    if (!in) throw InputError("cannot read vocabulary " + vocab_file);
    std::string line;
    int id = 0;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      vocab_.emplace(line, id++);
    }
    vocab_size_ = id;
    for (auto [tok, sid] : {std::pair{"[PAD]", &pad_}, {"[UNK]", &unk_}, {"[CLS]", &cls_}, {"[SEP]", &sep_}}) {
      auto it = vocab_.find(tok);
      if (it == vocab_.end()) throw InputError("vocabulary lacks " + std::string(tok));
      *sid = it->second;
    }
  }

  static std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    };
    for (unsigned char c : text) {
      if (std::isspace(c)) {
        flush();
      } else if (c < 128 && std::ispunct(c)) {
        flush();
        words.emplace_back(1, static_cast<char>(c));
      } else {
        cur += static_cast<char>(c < 128 ? std::tolower(c) : c);
      }
    }
    flush();
    return words;
  }

  std::vector<int> tokenize(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& [id, _] : pieces(text)) ids.push_back(id);
    return ids;
  }

  // [CLS] first [SEP] (second [SEP]) truncated to max_len, body first then
  // headline, then padded. Returns ids of length max_len and the count of
  // non-padding positions.
  std::pair<std::vector<int>, int> encode(std::string_view first, std::string_view second, int max_len,
                                          bool pair) const {
    auto seq = assemble(first, second, max_len, pair);
    std::vector<int> ids;
    for (const auto& [id, _] : seq) ids.push_back(id);
    const int valid = static_cast<int>(ids.size());
    ids.resize(static_cast<std::size_t>(max_len), pad_);
    return {ids, valid};
  }

  // Display strings aligned with encode(), padding included.
  std::vector<std::string> display(std::string_view first, std::string_view second, int max_len, bool pair) const {
    std::vector<std::string> out;
    for (auto& [_, text] : assemble(first, second, max_len, pair)) out.push_back(std::move(text));
    out.resize(static_cast<std::size_t>(max_len), "[PAD]");
    return out;
  }

  int vocab_size() const { return vocab_size_; }
  int pad_id() const { return pad_; }

 private:
  using Piece = std::pair<int, std::string>;

  std::vector<Piece> pieces(std::string_view text) const {
    std::vector<Piece> out;
    for (auto& w : split_words(text)) {
      if (vocab_.empty()) {
        const int id = 5 + static_cast<int>(fnv1a64(w) % static_cast<std::uint64_t>(vocab_size_ - 5));
        out.emplace_back(id, std::move(w));
      } else {
        wordpiece(w, out);
      }
    }
    return out;
  }

  std::vector<Piece> assemble(std::string_view first, std::string_view second, int max_len, bool pair) const {
    auto a = pieces(first);
    auto b = pair ? pieces(second) : std::vector<Piece>{};
    const int specials = pair ? 3 : 2;
    const int budget = std::max(0, max_len - specials);
    if (static_cast<int>(a.size()) > budget) a.resize(static_cast<std::size_t>(budget));
    const int rest = budget - static_cast<int>(a.size());
    if (static_cast<int>(b.size()) > rest) b.resize(static_cast<std::size_t>(rest));
    std::vector<Piece> seq{{cls_, "[CLS]"}};
    seq.insert(seq.end(), a.begin(), a.end());
    seq.emplace_back(sep_, "[SEP]");
    if (pair) {
      seq.insert(seq.end(), b.begin(), b.end());
      seq.emplace_back(sep_, "[SEP]");
    }
    return seq;
  }

  void wordpiece(const std::string& word, std::vector<Piece>& out) const {
    if (word.size() > 100) {
      out.emplace_back(unk_, "[UNK]");
      return;
    }
    std::vector<Piece> found_pieces;
    std::size_t start = 0;
    while (start < word.size()) {
      std::size_t end = word.size();
      int found = -1;
      std::string sub;
      while (end > start) {
        sub = (start > 0 ? "##" : "") + word.substr(start, end - start);
        auto it = vocab_.find(sub);
        if (it != vocab_.end()) {
          found = it->second;
          break;
        }
        --end;
      }
      if (found < 0) {
        out.emplace_back(unk_, "[UNK]");
        return;
      }
      found_pieces.emplace_back(found, sub);
      start = end;
    }
    out.insert(out.end(), found_pieces.begin(), found_pieces.end());
  }

  int vocab_size_;
  std::unordered_map<std::string, int> vocab_;
  int pad_ = kPad, unk_ = kUnk, cls_ = kCls, sep_ = kSep;
};

struct TextEmbedding {
  Matrix matrix;  // n x d
  int valid_len = 0;
};

struct HeadlineVector {
  std::string article_id;
  RowVector vector;
};

// Frozen BERT-style encoder: token + position embeddings, layer norm, then
// post-norm transformer layers with padding keys masked out.
class TextEncoder {
 public:
  explicit TextEncoder(const EncoderConfig& cfg)
      : cfg_(cfg), tokenizer_(cfg.vocab_size, cfg.vocab_file), params_(false) {
    Rng rng(cfg.seed);
    token_ = params_.add("text.token", random_normal(tokenizer_.vocab_size(), cfg.width, 0.02, rng));
    position_ = params_.add("text.position", random_normal(cfg.max_len, cfg.width, 0.02, rng));
    norm_ = nn::LayerNorm(params_, "text.embed_norm", cfg.width);
    for (int l = 0; l < cfg.text_layers; ++l)
      layers_.emplace_back(params_, "text.layer" + std::to_string(l), cfg.width, cfg.text_heads, cfg.text_ff, rng);
  }

  TextEmbedding encode_ids(const std::vector<int>& ids, int valid) const {
    const auto n = static_cast<Eigen::Index>(ids.size());
    Matrix x(n, cfg_.width);
    for (Eigen::Index i = 0; i < n; ++i)
      x.row(i) = token_.value().row(ids[static_cast<std::size_t>(i)]) + position_.value().row(i);
    std::vector<bool> mask(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = static_cast<int>(i) < valid;
    ag::Var h = norm_(ag::constant(std::move(x)));
    for (const auto& layer : layers_) h = layer(h, &mask);
    return {h.value(), valid};
  }

  // Headline then body, jointly truncated to n tokens.
  TextEmbedding encode(std::string_view headline, std::string_view body) const {
    auto [ids, valid] = tokenizer_.encode(headline, body, cfg_.max_len, true);
    return encode_ids(ids, valid);
  }

  // Mean of the valid token embeddings of the headline alone.
  RowVector headline_vector(std::string_view headline) const {
    auto [ids, valid] = tokenizer_.encode(headline, {}, cfg_.max_len, false);
    TextEmbedding e = encode_ids(ids, valid);
    return e.matrix.topRows(valid).colwise().mean();
  }

  const Tokenizer& tokenizer() const { return tokenizer_; }

 private:
  EncoderConfig cfg_;
  Tokenizer tokenizer_;
  nn::ParameterSet params_;
  ag::Var token_, position_;
  nn::LayerNorm norm_;
  std::vector<nn::TransformerLayer> layers_;
};

// Frozen convolutional backbone: stride-2 3x3 convolutions with ReLU, a 1x1
// convolution to d^I channels, then global average pooling.
class PatchBackbone {
 public:
  explicit PatchBackbone(const EncoderConfig& cfg) : out_width_(cfg.patch_feature_width) {
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    int in_ch = 3;
    for (int ch : cfg.backbone_channels) {
      convs_.push_back(random_normal(9 * in_ch, ch, std::sqrt(2.0 / (9.0 * in_ch)), rng));
      in_ch = ch;
    }
    head_ = random_normal(in_ch, out_width_, std::sqrt(2.0 / in_ch), rng);
  }

  RowVector operator()(const cv::Mat& patch) const {
    int h = patch.rows, w = patch.cols, ch = 3;
    // HWC, row-major pixel order, each row one pixel.
    Matrix x(h * w, ch);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const auto& px = patch.at<cv::Vec3b>(r, c);
        for (int k = 0; k < 3; ++k) x(r * w + c, k) = px[k] / 255.0 - 0.5;
      }
    for (const auto& kernel : convs_) {
      const int oh = (h + 1) / 2, ow = (w + 1) / 2;
      Matrix cols = Matrix::Zero(oh * ow, 9 * ch);
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c)
          for (int dr = 0; dr < 3; ++dr)
            for (int dc = 0; dc < 3; ++dc) {
              const int sr = 2 * r + dr - 1, sc = 2 * c + dc - 1;
              if (sr < 0 || sc < 0 || sr >= h || sc >= w) continue;
              cols.block(r * ow + c, (dr * 3 + dc) * ch, 1, ch) = x.row(sr * w + sc);
            }
      x = (cols * kernel).cwiseMax(0.0);
      h = oh;
      w = ow;
      ch = static_cast<int>(kernel.cols());
    }
    return (x * head_).cwiseMax(0.0).colwise().mean();
  }

 private:
  int out_width_;
  std::vector<Matrix> convs_;
  Matrix head_;
};

// Trainable image path: two affine projections d^I -> d_mid -> d followed by
// one transformer encoder layer over the patch sequence. No positional
// encoding is added.
class ImageContextualizer {
 public:
  ImageContextualizer() = default;
  ImageContextualizer(nn::ParameterSet& params, const EncoderConfig& cfg, Rng& rng, bool with_transformer = true)
      : first_(params, "image.proj1", cfg.patch_feature_width, cfg.mid_width, rng),
        second_(params, "image.proj2", cfg.mid_width, cfg.width, rng) {
    if (with_transformer)
      transformer_ = std::make_shared<nn::TransformerLayer>(params, "image.transformer", cfg.width, cfg.image_heads,
                                                            cfg.image_ff, rng);
  }

  ag::Var project(const ag::Var& features) const { return second_(first_(features)); }

  ag::Var operator()(const ag::Var& features) const {
    ++calls_;
    ag::Var p = project(features);
    return transformer_ ? (*transformer_)(p) : p;
  }

  nn::Linear& first() { return first_; }
  nn::Linear& second() { return second_; }
  long calls() const { return calls_; }

 private:
  nn::Linear first_, second_;
  std::shared_ptr<nn::TransformerLayer> transformer_;
  mutable long calls_ = 0;
};

// Frozen feature extractors plus the image preprocessing. Read-only after
// construction; safe to share across threads.
class Encoders {
 public:
  explicit Encoders(EncoderConfig cfg) : cfg_(validated(std::move(cfg))), text_(cfg_), backbone_(cfg_) {
    if (!cfg_.text_features.empty()) text_store_ = FeatureStore::load(cfg_.text_features);
    if (!cfg_.patch_features.empty()) patch_store_ = FeatureStore::load(cfg_.patch_features);
  }

  const EncoderConfig& config() const { return cfg_; }
  const TextEncoder& text_encoder() const { return text_; }

  TextEmbedding encode_text(const Article& a) const {
    if (text_store_) return {text_store_->get(a.id), cfg_.max_len};
    return text_.encode(a.headline, a.body);
  }

  HeadlineVector encode_headline(const std::string& id, std::string_view headline) const {
    if (headline.empty()) spdlog::warn("article {} has an empty headline; its vector encodes special tokens only", id);
    return {id, text_.headline_vector(headline)};
  }

  PatchGrid patchify(const cv::Mat& image) const { return btic::patchify(image, cfg_.image_size, cfg_.grid); }

  Matrix encode_patches(const PatchGrid& grid) const {
    ++image_calls_;
    Matrix out(static_cast<Eigen::Index>(grid.size()), cfg_.patch_feature_width);
    for (std::size_t j = 0; j < grid.size(); ++j) out.row(static_cast<Eigen::Index>(j)) = backbone_(grid.patches[j]);
    return out;
  }

  // Decode, patchify and encode an article's resolved image (m x d^I).
  Matrix image_features(const Article& a) const {
    if (patch_store_) {
      ++image_calls_;
      return patch_store_->get(a.id);
    }
    if (a.image_path.empty()) throw InputError("article " + a.id + " has no resolved image");
    cv::Mat img;
    try {
      img = load_image(a.image_path);
    } catch (const InputError&) {
      throw InputError("article " + a.id + ": image " + a.image_path + " is not decodable");
    }
    return encode_patches(patchify(img));
  }

  long image_calls() const { return image_calls_.load(); }

 private:
  static EncoderConfig validated(EncoderConfig cfg) {
    if (auto p = cfg.problems(); !p.empty()) throw InputError(p.front());
    return cfg;
  }

  EncoderConfig cfg_;
  TextEncoder text_;
  PatchBackbone backbone_;
  std::optional<FeatureStore> text_store_, patch_store_;
  mutable std::atomic<long> image_calls_{0};
};

// Headline vectors are static, so they are computed once per corpus and cached.
inline FeatureStore headline_cache(const Encoders& enc, const Corpus& corpus) {
  FeatureStore store(1, enc.config().width);
  for (const auto& a : corpus.articles) store.put(a.id, enc.encode_headline(a.id, a.headline).vector);
  return store;
}

}  // namespace btic
