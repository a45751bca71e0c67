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

#include <btic/common.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace btic {

using Timestamp = std::chrono::sys_seconds;

// Accepts "YYYY-MM-DD", "YYYY-MM-DD[T ]HH:MM[:SS[.fff]][Z|+HH:MM|-HH:MM]"
// and integer unix seconds. Returns nullopt for anything else.
inline std::optional<Timestamp> parse_timestamp(std::string_view s) {
  using namespace std::chrono;
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;

  if (std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    try {
      return Timestamp(seconds(std::stoll(std::string(s))));
    } catch (...) {
      return std::nullopt;
    }
  }

  std::size_t pos = 0;
  auto num = [&](std::size_t width) -> std::optional<int> {
    if (pos + width > s.size()) return std::nullopt;
    int v = 0;
    for (std::size_t i = 0; i < width; ++i) {
      const char c = s[pos + i];
      if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
      v = v * 10 + (c - '0');
    }
    pos += width;
    return v;
  };
  auto expect = [&](char c) {
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  };

  auto yy = num(4);
  if (!yy || !expect('-')) return std::nullopt;
  auto mo = num(2);
  if (!mo || !expect('-')) return std::nullopt;
  auto dd = num(2);
  if (!dd) return std::nullopt;
  const year_month_day ymd{year{*yy}, month{static_cast<unsigned>(*mo)}, day{static_cast<unsigned>(*dd)}};
  if (!ymd.ok()) return std::nullopt;
  auto t = sys_days(ymd) + seconds(0);
  if (pos == s.size()) return Timestamp(t);

  if (!expect('T') && !expect(' ')) return std::nullopt;
  auto hh = num(2);
  if (!hh || !expect(':')) return std::nullopt;
  auto mi = num(2);
  if (!mi) return std::nullopt;
  int sec = 0;
  if (expect(':')) {
    auto ss = num(2);
    if (!ss) return std::nullopt;
    sec = *ss;
    if (expect('.'))
      while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  if (*hh > 23 || *mi > 59 || sec > 60) return std::nullopt;
  t += hours(*hh) + minutes(*mi) + seconds(sec);
  if (pos == s.size()) return Timestamp(t);
  if (expect('Z')) return pos == s.size() ? std::optional<Timestamp>(t) : std::nullopt;
  const bool plus = s[pos] == '+';
  if (!expect('+') && !expect('-')) return std::nullopt;
  auto oh = num(2);
  if (!oh) return std::nullopt;
  expect(':');
  auto om = num(2);
  if (!om || pos != s.size()) return std::nullopt;
  const auto offset = hours(*oh) + minutes(*om);
  return Timestamp(plus ? t - offset : t + offset);
}

// Canonical form: "YYYY-MM-DDTHH:MM:SSZ".
inline std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto day_point = floor<days>(t);
  const year_month_day ymd{day_point};
  const hh_mm_ss hms{t - day_point};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

struct Article {
  std::string id;
  std::string headline;
  std::string body;
  std::string image_ref;  // URL or local path as imported
  Timestamp timestamp{};
  Label label = Label::Reliable;
  std::string image_path;  // local decodable file; empty until images are resolved

  bool operator==(const Article&) const = default;
};

struct SkippedRow {
  std::size_t row = 0;  // 1-based data row, header excluded
  std::string reason;
};

struct Provenance {
  std::string source;
  std::string adapter;
  std::size_t rows_read = 0;
  std::vector<SkippedRow> skipped;
};

struct Corpus {
  std::vector<Article> articles;
  Provenance provenance;

  std::size_t size() const { return articles.size(); }
  bool empty() const { return articles.empty(); }

  const Article& find(const std::string& id) const {
    auto it = std::find_if(articles.begin(), articles.end(), [&](const Article& a) { return a.id == id; });
    if (it == articles.end()) throw InputError("unknown article id " + id);
    return *it;
  }

  std::map<std::string, std::size_t> index() const {
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < articles.size(); ++i) idx.emplace(articles[i].id, i);
    return idx;
  }

  std::pair<std::size_t, std::size_t> class_counts() const {
    std::size_t reliable = 0;
    for (const auto& a : articles) reliable += a.label == Label::Reliable;
    return {reliable, articles.size() - reliable};
  }
};

// Maps source columns onto Article fields and source label strings onto Label.
struct ImportAdapter {
  std::string name = "custom";
  std::map<std::string, std::string> columns;  // field -> source column
  std::map<std::string, Label> labels;         // source value -> label
  std::string image_root;                      // resolves relative local image paths

  static inline const std::vector<std::string> kFields{"id", "headline", "body", "image", "timestamp", "label"};

  static ImportAdapter from_json(const nlohmann::json& j) {
    ImportAdapter a;
    a.name = j.value("name", "custom");
    if (!j.contains("columns") || !j["columns"].is_object()) throw InputError("adapter: missing 'columns' object");
    for (const auto& f : kFields) {
      if (!j["columns"].contains(f)) throw InputError("adapter: no source column mapped for field '" + f + "'");
      a.columns[f] = j["columns"][f].get<std::string>();
    }
    if (!j.contains("labels") || !j["labels"].is_object()) throw InputError("adapter: missing 'labels' object");
    for (const auto& [k, v] : j["labels"].items()) a.labels[k] = parse_label(v.get<std::string>());
    a.image_root = j.value("image_root", "");
    return a;
  }

  static ImportAdapter from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read adapter config " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw InputError("adapter config " + path.string() + ": " + e.what());
    }
  }

  // Column layout of the public ReCOVery release (reliability: 1 reliable, 0 unreliable).
  static ImportAdapter recovery() {
    return from_json({{"name", "recovery"},
                      {"columns",
                       {{"id", "news_id"},
                        {"headline", "title"},
                        {"body", "body_text"},
                        {"image", "image"},
                        {"timestamp", "publish_date"},
                        {"label", "reliability"}}},
                      {"labels", {{"1", "Reliable"}, {"0", "Unreliable"}}}});
  }

  // Identity mapping for files that already use the canonical field names.
  static ImportAdapter canonical() {
    return from_json({{"name", "canonical"},
                      {"columns",
                       {{"id", "id"},
                        {"headline", "headline"},
                        {"body", "body"},
                        {"image", "image"},
                        {"timestamp", "timestamp"},
                        {"label", "label"}}},
                      {"labels", {{"Reliable", "Reliable"}, {"Unreliable", "Unreliable"}}}});
  }
};

// RFC 4180 reader: quoted fields, doubled quotes, embedded newlines.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        any = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        any = true;
        break;
      case '\r':
        break;
      case '\n':
        if (any || !field.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        row.clear();
        field.clear();
        any = false;
        break;
      default:
        field += c;
        any = true;
    }
  }
  if (quoted) throw InputError("csv: unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline bool is_url(std::string_view ref) {
  return ref.rfind("http://", 0) == 0 || ref.rfind("https://", 0) == 0;
}

// One Article per data row. Rows with an empty required field, an
// unparseable timestamp, an unmapped label or a duplicate id are skipped and
// listed in provenance.skipped.
inline Corpus load_corpus(const std::filesystem::path& source, const ImportAdapter& adapter) {
  const auto rows = parse_csv(read_file(source));
  Corpus corpus;
  corpus.provenance.source = source.string();
  corpus.provenance.adapter = adapter.name;
  if (rows.empty()) return corpus;

  const auto& header = rows.front();
  std::map<std::string, std::size_t> col;
  for (const auto& f : ImportAdapter::kFields) {
    const auto& name = adapter.columns.at(f);
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InputError("source has no column '" + name + "' (mapped to field '" + f + "')");
    col[f] = static_cast<std::size_t>(it - header.begin());
  }

  std::set<std::string> ids;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    ++corpus.provenance.rows_read;
    auto skip = [&](std::string reason) { corpus.provenance.skipped.push_back({r, std::move(reason)}); };
    if (row.size() != header.size()) {
      skip("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(row.size()));
      continue;
    }
    std::string missing;
    for (const auto& f : ImportAdapter::kFields)
      if (row[col[f]].empty()) missing = f;
    if (!missing.empty()) {
      skip("missing " + missing);
      continue;
    }
    Article a;
    a.id = row[col["id"]];
    a.headline = row[col["headline"]];
    a.body = row[col["body"]];
    a.image_ref = row[col["image"]];
    const auto ts = parse_timestamp(row[col["timestamp"]]);
    if (!ts) {
      skip("unparseable timestamp '" + row[col["timestamp"]] + "'");
      continue;
    }
    a.timestamp = *ts;
    auto lab = adapter.labels.find(row[col["label"]]);
    if (lab == adapter.labels.end()) {
      skip("unmapped label '" + row[col["label"]] + "'");
      continue;
    }
    a.label = lab->second;
    if (!ids.insert(a.id).second) {
      skip("duplicate id " + a.id);
      continue;
    }
    if (!is_url(a.image_ref) && !adapter.image_root.empty() && std::filesystem::path(a.image_ref).is_relative())
      a.image_ref = (std::filesystem::path(adapter.image_root) / a.image_ref).string();
    corpus.articles.push_back(std::move(a));
  }
  return corpus;
}

inline nlohmann::ordered_json to_json(const Article& a) {
  nlohmann::ordered_json j;
  j["id"] = a.id;
  j["headline"] = a.headline;
  j["body"] = a.body;
  j["image_ref"] = a.image_ref;
  j["timestamp"] = format_timestamp(a.timestamp);
  j["label"] = std::string(to_string(a.label));
  if (!a.image_path.empty()) j["image_path"] = a.image_path;
  return j;
}

inline Article article_from_json(const nlohmann::json& j) {
  Article a;
  a.id = j.at("id").get<std::string>();
  a.headline = j.at("headline").get<std::string>();
  a.body = j.at("body").get<std::string>();
  a.image_ref = j.at("image_ref").get<std::string>();
  const auto ts = parse_timestamp(j.at("timestamp").get<std::string>());
  if (!ts) throw InputError("article " + a.id + ": bad timestamp");
  a.timestamp = *ts;
  a.label = parse_label(j.at("label").get<std::string>());
  a.image_path = j.value("image_path", "");
  return a;
}

// Canonical corpus format: one JSON object per line, fixed field order.
inline void write_corpus(const Corpus& corpus, std::ostream& out) {
  for (const auto& a : corpus.articles) out << to_json(a).dump() << '\n';
}

inline void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path.string());
  write_corpus(corpus, out);
}

inline Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read corpus " + path.string());
  Corpus corpus;
  corpus.provenance.source = path.string();
  corpus.provenance.adapter = "canonical-jsonl";
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      Article a = article_from_json(nlohmann::json::parse(line));
      if (!ids.insert(a.id).second) throw InputError("duplicate id " + a.id);
      corpus.articles.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    ++corpus.provenance.rows_read;
  }
  return corpus;
}

struct CleanReport {
  std::size_t kept = 0;
  std::size_t removed = 0;
  std::size_t reliable = 0;
  std::size_t unreliable = 0;
};

// Keeps only articles whose image resolved to a local file.
inline Corpus clean(const Corpus& corpus, CleanReport* report = nullptr) {
  Corpus out;
  out.provenance = corpus.provenance;
  for (const auto& a : corpus.articles)
    if (!a.image_path.empty()) out.articles.push_back(a);
  if (report) {
    report->kept = out.size();
    report->removed = corpus.size() - out.size();
    std::tie(report->reliable, report->unreliable) = out.class_counts();
  }
  return out;
}

enum class SplitMode { Random, Chronological };

inline std::string_view to_string(SplitMode m) { return m == SplitMode::Random ? "random" : "chronological"; }

inline SplitMode parse_split_mode(std::string_view s) {
  if (s == "random") return SplitMode::Random;
  if (s == "chronological") return SplitMode::Chronological;
  throw InputError("unknown split mode '" + std::string(s) + "'");
}

struct SplitResult {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  SplitMode mode = SplitMode::Random;
  std::optional<std::uint64_t> seed;

  bool operator==(const SplitResult&) const = default;
};

inline nlohmann::ordered_json to_json(const SplitResult& s) {
  nlohmann::ordered_json j;
  j["mode"] = std::string(to_string(s.mode));
  j["seed"] = s.seed ? nlohmann::ordered_json(*s.seed) : nlohmann::ordered_json(nullptr);
  j["train"] = s.train;
  j["validation"] = s.validation;
  j["test"] = s.test;
  return j;
}

inline SplitResult split_from_json(const nlohmann::json& j) {
  SplitResult s;
  s.mode = parse_split_mode(j.at("mode").get<std::string>());
  if (!j.at("seed").is_null()) s.seed = j.at("seed").get<std::uint64_t>();
  s.train = j.at("train").get<std::vector<std::string>>();
  s.validation = j.at("validation").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

// ceil/floor of ratio * n, tolerant of binary representation error in ratio.
inline std::size_t ceil_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
}
inline std::size_t floor_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

// Test = latest ceil(test_ratio N) articles, validation = latest
// floor(val_frac |pool|) of the rest, train = remainder. Ordered by
// (timestamp, id) so equal timestamps split reproducibly.
inline SplitResult chronological_split(const Corpus& corpus, double test_ratio = 0.2, double val_frac = 0.15) {
  if (test_ratio < 0 || test_ratio > 1 || val_frac < 0 || val_frac > 1)
    throw InputError("split ratios must lie in [0, 1]");
  std::vector<const Article*> order;
  for (const auto& a : corpus.articles) {
    if (a.timestamp == Timestamp{}) throw InputError("article " + a.id + " has no timestamp");
    order.push_back(&a);
  }
  std::sort(order.begin(), order.end(), [](const Article* a, const Article* b) {
    return a->timestamp != b->timestamp ? a->timestamp < b->timestamp : a->id < b->id;
  });
  const std::size_t n = order.size();
  const std::size_t n_test = std::min(n, ceil_count(test_ratio, n));
  const std::size_t pool = n - n_test;
  const std::size_t n_val = floor_count(val_frac, pool);
  const std::size_t n_train = pool - n_val;

  SplitResult s;
  s.mode = SplitMode::Chronological;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? s.train : (i < pool ? s.validation : s.test);
    dst.push_back(order[i]->id);
  }
  return s;
}

// Train = first floor(train_ratio N) ids of a seeded shuffle; no validation set.
inline SplitResult random_split(const Corpus& corpus, double train_ratio, std::uint64_t seed) {
  if (train_ratio < 0 || train_ratio > 1) throw InputError("train_ratio must lie in [0, 1]");
  std::vector<std::string> ids;
  for (const auto& a : corpus.articles) ids.push_back(a.id);
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  // Fisher-Yates with an explicit index draw; std::shuffle's draw sequence is unspecified.
  for (std::size_t i = ids.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(ids[i - 1], ids[j]);
  }
  const std::size_t n_train = floor_count(train_ratio, ids.size());
  SplitResult s;
  s.mode = SplitMode::Random;
  s.seed = seed;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return s;
}

// Throws unless the three id sets are pairwise disjoint and cover the corpus.
inline void check_partition(const SplitResult& s, const Corpus& corpus) {
  std::set<std::string> seen;
  for (const auto* part : {&s.train, &s.validation, &s.test})
    for (const auto& id : *part)
      if (!seen.insert(id).second) throw InputError("split: id " + id + " appears twice");
  std::set<std::string> all;
  for (const auto& a : corpus.articles) all.insert(a.id);
  if (seen != all) throw InputError("split does not cover the corpus exactly");
}

}  // namespace btic
