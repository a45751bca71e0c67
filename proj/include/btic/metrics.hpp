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

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace btic {

// Unreliable is the positive class.
struct Confusion {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  long total() const { return tp + fp + fn + tn; }
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
};

struct MetricsReport {
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  ClassMetrics reliable;
  ClassMetrics unreliable;
  Confusion confusion;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

namespace detail {
inline ClassMetrics class_metrics(long tp, long fp, long fn, const std::string& name, std::vector<std::string>& warn) {
  ClassMetrics m;
  m.support = tp + fn;
  if (tp + fp == 0) {
    warn.push_back(name + ": precision undefined (no predictions), reported as 0");
  } else {
    m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  if (tp + fn == 0) {
    warn.push_back(name + ": recall undefined (no true instances), reported as 0");
  } else {
    m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}
}  // namespace detail

inline MetricsReport metrics_from_confusion(const Confusion& c, std::uint64_t seed = 0) {
  if (c.total() == 0) throw InputError("cannot compute metrics on an empty set");
  MetricsReport r;
  r.confusion = c;
  r.seed = seed;
  r.unreliable = detail::class_metrics(c.tp, c.fp, c.fn, "Unreliable", r.warnings);
  // For the Reliable class the roles of the confusion cells swap.
  r.reliable = detail::class_metrics(c.tn, c.fn, c.fp, "Reliable", r.warnings);
  r.macro_f1 = 0.5 * (r.reliable.f1 + r.unreliable.f1);
  r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  return r;
}

inline MetricsReport compute_metrics(const std::vector<Label>& predicted, const std::vector<Label>& truth,
                                     std::uint64_t seed = 0) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("compute_metrics: length mismatch");
  Confusion c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == Label::Unreliable;
    const bool t = truth[i] == Label::Unreliable;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
    c.tn += !p && !t;
  }
  return metrics_from_confusion(c, seed);
}

inline nlohmann::ordered_json to_json(const ClassMetrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["macro_f1"] = r.macro_f1;
  j["accuracy"] = r.accuracy;
  j["reliable"] = to_json(r.reliable);
  j["unreliable"] = to_json(r.unreliable);
  j["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}, {"tn", r.confusion.tn}};
  j["seed"] = r.seed;
  j["warnings"] = r.warnings;
  return j;
}

// Flat metric name -> value view, in table column order.
inline std::vector<std::pair<std::string, double>> metric_values(const MetricsReport& r) {
  return {{"macro_f1", r.macro_f1},
          {"unreliable.precision", r.unreliable.precision},
          {"unreliable.recall", r.unreliable.recall},
          {"unreliable.f1", r.unreliable.f1},
          {"reliable.precision", r.reliable.precision},
          {"reliable.recall", r.reliable.recall},
          {"reliable.f1", r.reliable.f1},
          {"accuracy", r.accuracy}};
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for a single value
};

inline Summary summarize(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("summarize: no values");
  Summary s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

// Two-sided paired Student's t-test. Identical samples give p = 1; a
// constant nonzero difference gives p = 0.
inline double paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InputError("paired t-test: run counts differ (" + std::to_string(a.size()) +
                                             " vs " + std::to_string(b.size()) + ")");
  if (a.size() < 2) throw InputError("paired t-test needs at least 2 runs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const Summary s = summarize(d);
  if (s.std == 0.0) return s.mean == 0.0 ? 1.0 : 0.0;
  const double t = s.mean / (s.std / std::sqrt(static_cast<double>(d.size())));
  boost::math::students_t dist(static_cast<double>(d.size() - 1));
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

}  // namespace btic
