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
#include <btic/corpus.hpp>
#include <btic/encoders.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace btic {

struct IndexEntry {
  std::string id;
  Timestamp timestamp{};
  Label label = Label::Reliable;
};

// Pairwise headline cosine similarities over the training set, computed once.
struct SimilarityIndex {
  std::vector<IndexEntry> entries;
  Matrix similarity;  // D x D, symmetric, unit diagonal
  std::map<std::string, std::size_t> position;

  std::size_t size() const { return entries.size(); }

  std::size_t at(const std::string& id) const {
    auto it = position.find(id);
    if (it == position.end()) throw InputError("article " + id + " is not in the similarity index");
    return it->second;
  }
};

// Index order follows `train`. Every training article needs a nonzero vector.
inline SimilarityIndex build_index(const std::vector<HeadlineVector>& vectors, const std::vector<Article>& train) {
  std::map<std::string, const RowVector*> by_id;
  for (const auto& v : vectors) by_id[v.article_id] = &v.vector;

  SimilarityIndex index;
  const auto n = static_cast<Eigen::Index>(train.size());
  Matrix unit;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Article& a = train[static_cast<std::size_t>(i)];
    auto it = by_id.find(a.id);
    if (it == by_id.end()) throw InputError("no headline vector for article " + a.id);
    const RowVector& v = *it->second;
    const double norm = v.norm();
    if (norm == 0.0) throw InputError("headline vector of article " + a.id + " has zero norm");
    if (unit.size() == 0) unit.resize(n, v.size());
    unit.row(i) = v / norm;
    index.entries.push_back({a.id, a.timestamp, a.label});
    index.position[a.id] = static_cast<std::size_t>(i);
  }
  index.similarity.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    index.similarity(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j)
      index.similarity(i, j) = index.similarity(j, i) = unit.row(i).dot(unit.row(j));
  }
  return index;
}

inline SimilarityIndex build_index(const FeatureStore& headlines, const std::vector<Article>& train) {
  std::vector<HeadlineVector> vectors;
  vectors.reserve(train.size());
  for (const auto& a : train) vectors.push_back({a.id, headlines.get(a.id).row(0)});
  return build_index(vectors, train);
}

namespace detail {

// Training articles published no later than the anchor with the wanted
// label, anchor excluded.
inline std::vector<std::size_t> eligible(const Article& anchor, const SimilarityIndex& index, Label wanted) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < index.size(); ++j) {
    const auto& e = index.entries[j];
    if (e.id != anchor.id && e.timestamp <= anchor.timestamp && e.label == wanted) out.push_back(j);
  }
  return out;
}

inline std::vector<std::string> top_k(const Article& anchor, const SimilarityIndex& index, Label wanted, int k) {
  const std::size_t a = index.at(anchor.id);
  auto cand = eligible(anchor, index, wanted);
  auto better = [&](std::size_t x, std::size_t y) {
    const double sx = index.similarity(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(x));
    const double sy = index.similarity(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(y));
    return sx != sy ? sx > sy : index.entries[x].id < index.entries[y].id;
  };
  const auto keep = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(std::max(k, 0)));
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), better);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < keep; ++i) ids.push_back(index.entries[cand[i]].id);
  return ids;
}

}  // namespace detail

// Up to k earlier-or-simultaneous same-label training articles with the most
// similar headlines, most similar first, ties by id.
inline std::vector<std::string> select_positives(const Article& anchor, const SimilarityIndex& index, int k = 5) {
  return detail::top_k(anchor, index, anchor.label, k);
}

// As select_positives, with the opposite label.
inline std::vector<std::string> select_negatives(const Article& anchor, const SimilarityIndex& index, int k = 5) {
  return detail::top_k(anchor, index, opposite(anchor.label), k);
}

// Uniform draw without replacement from the opposite-label, not-later pool.
inline std::vector<std::string> select_negatives_random(const Article& anchor, const SimilarityIndex& index, int k,
                                                        Rng& rng) {
  index.at(anchor.id);
  auto cand = detail::eligible(anchor, index, opposite(anchor.label));
  const auto keep = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(std::max(k, 0)));
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (cand.size() - i));
    std::swap(cand[i], cand[j]);
    ids.push_back(index.entries[cand[i]].id);
  }
  return ids;
}

inline std::vector<std::string> select_negatives_random(const Article& anchor, const SimilarityIndex& index, int k,
                                                        std::uint64_t seed) {
  Rng rng(seed);
  return select_negatives_random(anchor, index, k, rng);
}

enum class NegativeSource { Similar, Random };

inline std::string_view to_string(NegativeSource s) { return s == NegativeSource::Similar ? "similar" : "random"; }

struct Candidates {
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
};

// Per-anchor sample lists, precomputed once after splitting.
struct CandidatePool {
  NegativeSource negative_source = NegativeSource::Similar;
  int k = 5;
  std::map<std::string, Candidates> by_id;

  const Candidates& at(const std::string& id) const {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InputError("no candidate pool for article " + id);
    return it->second;
  }
};

inline CandidatePool build_candidate_pool(const SimilarityIndex& index, const std::vector<Article>& train, int k,
                                          NegativeSource source, std::uint64_t seed = 0) {
  CandidatePool pool;
  pool.negative_source = source;
  pool.k = k;
  Rng rng(seed);
  for (const auto& a : train) {
    Candidates c;
    c.positives = select_positives(a, index, k);
    c.negatives = source == NegativeSource::Similar ? select_negatives(a, index, k)
                                                    : select_negatives_random(a, index, k, rng);
    pool.by_id.emplace(a.id, std::move(c));
  }
  return pool;
}

inline nlohmann::ordered_json to_json(const CandidatePool& pool) {
  nlohmann::ordered_json j;
  j["negative_source"] = std::string(to_string(pool.negative_source));
  j["k"] = pool.k;
  auto& items = j["anchors"] = nlohmann::ordered_json::object();
  for (const auto& [id, c] : pool.by_id) items[id] = {{"positives", c.positives}, {"negatives", c.negatives}};
  return j;
}

// One slot of width 2d per training article, zero-initialized. Writes made
// during a pass are staged and become visible when the pass ends, so every
// read in pass i sees the value written in pass i-1 (or zeros).
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(const std::vector<std::string>& ids, Eigen::Index width)
      : ids_(ids), slots_(Matrix::Zero(static_cast<Eigen::Index>(ids.size()), width)),
        written_in_(ids.size(), 0), generation_(ids.size(), 0), pending_(ids.size()) {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (!position_.emplace(ids[i], i).second) throw InputError("memory bank: duplicate id " + ids[i]);
  }

  std::size_t size() const { return ids_.size(); }
  Eigen::Index width() const { return slots_.cols(); }
  long pass() const { return pass_; }
  bool in_pass() const { return in_pass_; }

  void begin_pass() {
    if (in_pass_) throw std::logic_error("memory bank: pass already open");
    ++pass_;
    in_pass_ = true;
  }

  void end_pass() {
    if (!in_pass_) throw std::logic_error("memory bank: no open pass");
    for (std::size_t i = 0; i < pending_.size(); ++i) {
      if (!pending_[i]) continue;
      slots_.row(static_cast<Eigen::Index>(i)) = *pending_[i];
      written_in_[i] = pass_;
      pending_[i].reset();
    }
    in_pass_ = false;
  }

  RowVector read(const std::string& id) const { return slots_.row(static_cast<Eigen::Index>(slot(id))); }

  std::vector<RowVector> read(const std::vector<std::string>& ids) const {
    std::vector<RowVector> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(read(id));
    return out;
  }

  // Rows of the requested slots stacked into a matrix (0 x width when empty).
  Matrix read_matrix(const std::vector<std::string>& ids) const {
    Matrix out(static_cast<Eigen::Index>(ids.size()), width());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = read(ids[i]);
    return out;
  }

  // Values are plain copies; no gradient flows into the bank.
  void write(const std::string& id, const RowVector& value) {
    if (value.size() != width())
      throw InputError("memory bank: width " + std::to_string(value.size()) + " != " + std::to_string(width()));
    const std::size_t i = slot(id);
    ++generation_[i];
    if (in_pass_) {
      pending_[i] = value;
    } else {
      slots_.row(static_cast<Eigen::Index>(i)) = value;
      written_in_[i] = pass_;
    }
  }

  // Number of writes ever made to the slot.
  long generation(const std::string& id) const { return generation_[slot(id)]; }
  // Pass whose value the slot currently exposes; 0 for the zero initialization.
  long written_in(const std::string& id) const { return written_in_[slot(id)]; }

  std::size_t nonzero_slots() const {
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < slots_.rows(); ++i) n += slots_.row(i).squaredNorm() > 0.0;
    return n;
  }

  const std::vector<std::string>& ids() const { return ids_; }
  const Matrix& slots() const { return slots_; }

  // "BTICBANK" | u64 slots | u64 width | i64 pass | per slot { u64 id_len | id | i64 written_in | i64 generation } | f64 data column-major
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write " + path.string());
    auto u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    auto i64 = [&](std::int64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    out.write("BTICBANK", 8);
    u64(ids_.size());
    u64(static_cast<std::uint64_t>(width()));
    i64(pass_);
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      u64(ids_[i].size());
      out.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
      i64(written_in_[i]);
      i64(generation_[i]);
    }
    out.write(reinterpret_cast<const char*>(slots_.data()), static_cast<std::streamsize>(sizeof(double) * slots_.size()));
  }

  static MemoryBank load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read memory bank " + path.string());
    auto u64 = [&] {
      std::uint64_t v = 0;
      in.read(reinterpret_cast<char*>(&v), 8);
      return v;
    };
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != "BTICBANK") throw InputError("not a memory bank: " + path.string());
    const auto n = u64();
    const auto w = static_cast<Eigen::Index>(u64());
    const auto pass = static_cast<long>(u64());
    std::vector<std::string> ids;
    std::vector<long> written, gens;
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string id(u64(), '\0');
      in.read(id.data(), static_cast<std::streamsize>(id.size()));
      ids.push_back(std::move(id));
      written.push_back(static_cast<long>(u64()));
      gens.push_back(static_cast<long>(u64()));
    }
    MemoryBank bank(ids, w);
    in.read(reinterpret_cast<char*>(bank.slots_.data()), static_cast<std::streamsize>(sizeof(double) * bank.slots_.size()));
    if (!in) throw InputError("truncated memory bank " + path.string());
    bank.pass_ = pass;
    bank.written_in_ = std::move(written);
    bank.generation_ = std::move(gens);
    return bank;
  }

 private:
  std::size_t slot(const std::string& id) const {
    auto it = position_.find(id);
    if (it == position_.end()) throw InputError("memory bank: unknown id " + id);
    return it->second;
  }

  std::vector<std::string> ids_;
  std::map<std::string, std::size_t> position_;
  Matrix slots_;
  std::vector<long> written_in_;
  std::vector<long> generation_;
  std::vector<std::optional<RowVector>> pending_;
  long pass_ = 0;
  bool in_pass_ = false;
};

// L_s for one anchor:
//   -(1/2k) * sum_p log( exp(cos(x, p)) / sum_q exp(cos(x, q)) )
// zero when either list is empty.
inline double contrastive_loss(const RowVector& x, const std::vector<RowVector>& positives,
                               const std::vector<RowVector>& negatives, int k) {
  if (positives.empty() || negatives.empty()) return 0.0;
  std::vector<double> cn;
  for (const auto& q : negatives) cn.push_back(cosine(x, q));
  const double mx = *std::max_element(cn.begin(), cn.end());
  double acc = 0.0;
  for (double c : cn) acc += std::exp(c - mx);
  const double lse = mx + std::log(acc);
  double total = 0.0;
  for (const auto& p : positives) total += cosine(x, p) - lse;
  return -total / (2.0 * k);
}

namespace detail {
// d cos(x, p) / dx; zero when either vector is zero.
inline RowVector cosine_grad(const RowVector& x, const RowVector& p) {
  const double nx = x.norm(), np = p.norm();
  if (nx == 0.0 || np == 0.0) return RowVector::Zero(x.size());
  const double c = x.dot(p) / (nx * np);
  return p / (nx * np) - c * x / (nx * nx);
}
}  // namespace detail

// Differentiable with respect to x only; the bank rows are constants.
inline ag::Var contrastive_term(const ag::Var& x, const Matrix& positives, const Matrix& negatives, int k) {
  auto rows = [](const Matrix& m) {
    std::vector<RowVector> v;
    for (Eigen::Index i = 0; i < m.rows(); ++i) v.push_back(m.row(i));
    return v;
  };
  const RowVector xv = x.value().row(0);
  const double value = contrastive_loss(xv, rows(positives), rows(negatives), k);
  return ag::make_op(Matrix::Constant(1, 1, value), {x}, [positives, negatives, k](ag::Node& n) {
    if (positives.rows() == 0 || negatives.rows() == 0) return;
    const RowVector xv = n.inputs[0]->value.row(0);
    Eigen::VectorXd cn(negatives.rows());
    for (Eigen::Index q = 0; q < negatives.rows(); ++q) cn(q) = cosine(xv, negatives.row(q));
    const Eigen::VectorXd w = (cn.array() - cn.maxCoeff()).exp();
    const Eigen::VectorXd soft = w / w.sum();
    RowVector g = RowVector::Zero(xv.size());
    for (Eigen::Index p = 0; p < positives.rows(); ++p) g += detail::cosine_grad(xv, positives.row(p));
    RowVector gn = RowVector::Zero(xv.size());
    for (Eigen::Index q = 0; q < negatives.rows(); ++q) gn += soft(q) * detail::cosine_grad(xv, negatives.row(q));
    g -= static_cast<double>(positives.rows()) * gn;
    n.inputs[0]->accumulate(n.grad(0, 0) * (-1.0 / (2.0 * k)) * g);
  });
}

inline void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1], got " + std::to_string(alpha));
}

// L = (1 - alpha) L_c + alpha L_s
inline double combined_loss(double ce, double contrastive, double alpha = 0.2) {
  check_alpha(alpha);
  return (1.0 - alpha) * ce + alpha * contrastive;
}

inline ag::Var combined_loss(const ag::Var& ce, const ag::Var& contrastive, double alpha) {
  check_alpha(alpha);
  if (alpha == 0.0) return ce;
  if (alpha == 1.0) return contrastive;
  return ag::add(ag::scale(ce, 1.0 - alpha), ag::scale(contrastive, alpha));
}

}  // namespace btic
