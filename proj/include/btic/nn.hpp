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

#include <btic/autograd.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace btic::nn {

using ag::Var;

// Named registry of parameters. A frozen set hands out constant leaves so
// forward passes through it record no graph.
class ParameterSet {
 public:
  explicit ParameterSet(bool trainable = true) : trainable_(trainable) {}

  Var add(const std::string& name, Matrix init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    Var v = trainable_ ? ag::leaf(std::move(init)) : ag::constant(std::move(init));
    index_[name] = entries_.size();
    entries_.push_back({name, v});
    return v;
  }

  bool trainable() const { return trainable_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Var>>& entries() { return entries_; }
  Var& at(const std::string& name) { return entries_.at(index_.at(name)).second; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += static_cast<std::size_t>(v.value().size());
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v.zero_grad();
  }

  std::vector<Matrix> snapshot() const {
    std::vector<Matrix> out;
    out.reserve(entries_.size());
    for (const auto& [_, v] : entries_) out.push_back(v.value());
    return out;
  }

  void restore(const std::vector<Matrix>& values) {
    if (values.size() != entries_.size()) throw std::invalid_argument("restore: parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) entries_[i].second.mutable_value() = values[i];
  }

  // Binary layout, little-endian:
  //   "BTICKPT1" | u64 count | count x { u64 name_len | name | u64 rows | u64 cols | rows*cols f64 column-major }
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write checkpoint " + path.string());
    out.write("BTICKPT1", 8);
    write_u64(out, entries_.size());
    for (const auto& [name, v] : entries_) {
      write_u64(out, name.size());
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u64(out, static_cast<std::uint64_t>(v.rows()));
      write_u64(out, static_cast<std::uint64_t>(v.cols()));
      out.write(reinterpret_cast<const char*>(v.value().data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(v.value().size())));
    }
    if (!out) throw RuntimeError("short write to " + path.string());
  }

  void load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read checkpoint " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != "BTICKPT1") throw InputError("not a checkpoint: " + path.string());
    const auto count = read_u64(in);
    for (std::uint64_t k = 0; k < count; ++k) {
      std::string name(read_u64(in), '\0');
      in.read(name.data(), static_cast<std::streamsize>(name.size()));
      const auto rows = static_cast<Eigen::Index>(read_u64(in));
      const auto cols = static_cast<Eigen::Index>(read_u64(in));
      auto it = index_.find(name);
      if (it == index_.end()) throw InputError("checkpoint has unknown parameter " + name);
      Matrix& dst = entries_[it->second].second.mutable_value();
      if (dst.rows() != rows || dst.cols() != cols) throw InputError("checkpoint shape mismatch for " + name);
      in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols));
      if (!in) throw InputError("truncated checkpoint " + path.string());
    }
    if (count != entries_.size()) throw InputError("checkpoint parameter count mismatch in " + path.string());
  }

 private:
  static void write_u64(std::ofstream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
  static std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw InputError("truncated checkpoint");
    return v;
  }

  bool trainable_;
  std::vector<std::pair<std::string, Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

// y = x W + b, W stored (in x out).
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
         bool bias = true, double init_std = -1.0) {
    const double sd = init_std > 0 ? init_std : std::sqrt(1.0 / static_cast<double>(in));
    weight_ = params.add(name + ".weight", random_normal(in, out, sd, rng));
    if (bias) bias_ = params.add(name + ".bias", Matrix::Zero(1, out));
  }

  Var operator()(const Var& x) const {
    Var y = ag::matmul(x, weight_);
    return bias_.defined() ? ag::add_row(y, bias_) : y;
  }

  Var& weight() { return weight_; }
  Var& bias() { return bias_; }
  Eigen::Index in_features() const { return weight_.rows(); }
  Eigen::Index out_features() const { return weight_.cols(); }

 private:
  Var weight_;
  Var bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& name, Eigen::Index width, double eps = 1e-12)
      : eps_(eps) {
    gamma_ = params.add(name + ".gamma", Matrix::Ones(1, width));
    beta_ = params.add(name + ".beta", Matrix::Zero(1, width));
  }
  Var operator()(const Var& x) const { return ag::layer_norm_rows(x, gamma_, beta_, eps_); }

 private:
  Var gamma_;
  Var beta_;
  double eps_ = 1e-12;
};

// Per-head softmax weights of one forward pass, each (l x l).
struct AttentionTrace {
  std::vector<Matrix> heads;
};

// Scaled dot-product self-attention with `heads` heads of width d/heads.
// Queries, keys and values are e W^Q, e W^K, e W^V; head outputs are
// concatenated and mapped by W^O.
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParameterSet& params, const std::string& name, Eigen::Index width, int heads, Rng& rng,
                         bool bias = true, double init_std = -1.0)
      : heads_(heads), width_(width) {
    if (heads <= 0 || width % heads != 0)
      throw InputError("attention width " + std::to_string(width) + " is not divisible by " +
                       std::to_string(heads) + " heads");
    query_ = Linear(params, name + ".query", width, width, rng, bias, init_std);
    key_ = Linear(params, name + ".key", width, width, rng, bias, init_std);
    value_ = Linear(params, name + ".value", width, width, rng, bias, init_std);
    output_ = Linear(params, name + ".output", width, width, rng, bias, init_std);
  }

  Var operator()(const Var& e, const std::vector<bool>* key_mask = nullptr, AttentionTrace* trace = nullptr) const {
    if (e.cols() != width_) throw std::invalid_argument("attention input width mismatch");
    const Eigen::Index dk = width_ / heads_;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    Var q = query_(e);
    Var k = key_(e);
    Var v = value_(e);
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(heads_));
    if (trace) trace->heads.clear();
    for (int h = 0; h < heads_; ++h) {
      const Eigen::Index off = h * dk;
      Var scores = ag::scale(ag::matmul_nt(ag::slice_cols(q, off, dk), ag::slice_cols(k, off, dk)), inv_sqrt_dk);
      Var weights = ag::softmax_rows(scores, key_mask);
      if (trace) trace->heads.push_back(weights.value());
      outs.push_back(ag::matmul(weights, ag::slice_cols(v, off, dk)));
    }
    Var cat = heads_ == 1 ? outs.front() : ag::concat_cols(outs);
    return output_(cat);
  }

  int heads() const { return heads_; }
  Eigen::Index width() const { return width_; }
  Linear& query() { return query_; }
  Linear& key() { return key_; }
  Linear& value() { return value_; }
  Linear& output() { return output_; }

 private:
  int heads_ = 1;
  Eigen::Index width_ = 0;
  Linear query_, key_, value_, output_;
};

// Post-norm encoder layer: h = LN(x + MHA(x)); y = LN(h + FFN(h)), FFN = W2 GELU(W1 h).
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(ParameterSet& params, const std::string& name, Eigen::Index width, int heads,
                   Eigen::Index ff_width, Rng& rng, double init_std = 0.02)
      : attention_(params, name + ".attention", width, heads, rng, true, init_std),
        norm1_(params, name + ".norm1", width),
        ff_in_(params, name + ".ff_in", width, ff_width, rng, true, init_std),
        ff_out_(params, name + ".ff_out", ff_width, width, rng, true, init_std),
        norm2_(params, name + ".norm2", width) {}

  Var operator()(const Var& x, const std::vector<bool>* key_mask = nullptr) const {
    Var h = norm1_(ag::add(x, attention_(x, key_mask)));
    return norm2_(ag::add(h, ff_out_(ag::gelu(ff_in_(h)))));
  }

 private:
  MultiHeadSelfAttention attention_;
  LayerNorm norm1_;
  Linear ff_in_;
  Linear ff_out_;
  LayerNorm norm2_;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(ParameterSet& params, AdamOptions options) : params_(&params), opt_(options) {
    for (const auto& [_, v] : params.entries()) {
      m_.push_back(Matrix::Zero(v.rows(), v.cols()));
      v_.push_back(Matrix::Zero(v.rows(), v.cols()));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    auto& entries = params_->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Var& p = entries[i].second;
      const Matrix g = p.grad();
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
      v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g.cwiseProduct(g);
      p.mutable_value().array() -=
          opt_.learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opt_.epsilon);
    }
  }

  long steps() const { return t_; }

 private:
  ParameterSet* params_;
  AdamOptions opt_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

}  // namespace btic::nn
