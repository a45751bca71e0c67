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

// Run directory layout:
//   manifest.json                 command, resolved config, paths, timestamps, config hash
//   config.json                   resolved configuration
//   metrics.md                    results table, one row per variant
//   <VARIANT>/aggregate.json      mean/std per metric over runs, seeds, p-value
//   <VARIANT>/run_<i>/            splits.json, epochs.jsonl, metrics.json,
//                                 candidates.json, model.ckpt, memory.bank

#include <btic/harness.hpp>

#include <nlohmann/json.hpp>
#include <openssl/sha.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace btic {

namespace fs = std::filesystem;

// SHA-1 of "blob <len>\0<content>", as `git hash-object` computes it.
inline std::string git_blob_hash(const std::string& content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob += content;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), digest);
  std::string hex;
  char buf[3];
  for (unsigned char c : digest) {
    std::snprintf(buf, sizeof(buf), "%02x", c);
    hex += buf;
  }
  return hex;
}

// Writes via a sibling temporary file and rename, so readers never see a partial file.
inline void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw RuntimeError("cannot write " + tmp.string());
    out << content;
    if (!out) throw RuntimeError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string now_utc() {
  return format_timestamp(std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()));
}

struct RunManifest {
  std::string command;
  nlohmann::ordered_json config;
  std::map<std::string, std::string> inputs;
  std::vector<std::string> outputs;
  std::string started_at;
  std::string finished_at;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config"] = config;
    j["config_hash"] = git_blob_hash(config.dump(2) + "\n");
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    for (const auto& [k, v] : extra.items()) j[k] = v;
    return j;
  }
};

inline fs::path run_path(const fs::path& root, Variant v, int run) {
  return root / std::string(to_string(v)) / ("run_" + std::to_string(run));
}

inline std::string epochs_jsonl(const std::vector<EpochLog>& log) {
  std::string s;
  for (const auto& e : log) s += to_json(e).dump() + "\n";
  return s;
}

// Writes one run's files and returns their paths.
inline std::vector<std::string> write_run(const fs::path& dir, const RunOutcome& run) {
  fs::create_directories(dir);
  std::vector<std::string> files;
  auto put = [&](const char* name, const std::string& content) {
    write_atomic(dir / name, content);
    files.push_back((dir / name).string());
  };
  put("splits.json", to_json(run.splits).dump(2) + "\n");
  put("epochs.jsonl", epochs_jsonl(run.trained.log));
  nlohmann::ordered_json metrics = to_json(run.metrics);
  metrics["selected_epoch"] = run.trained.selected_epoch;
  put("metrics.json", metrics.dump(2) + "\n");
  if (run.trained.pool) put("candidates.json", to_json(*run.trained.pool).dump(1) + "\n");
  run.trained.model->parameters().save(dir / "model.ckpt");
  run.trained.bank.save(dir / "memory.bank");
  files.push_back((dir / "model.ckpt").string());
  files.push_back((dir / "memory.bank").string());
  return files;
}

inline std::string variant_label(Variant v, double alpha) {
  std::string name(to_string(v));
  if (v == Variant::BTIC || v == Variant::BTICr) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_%g", alpha);
    name += buf;
  }
  return name;
}

// Markdown table: macro F1, then precision/recall/F1 for Reliable and
// Unreliable, as run means (with sample std when there are several runs).
inline std::string metrics_table(const std::vector<std::pair<std::string, AggregateReport>>& rows) {
  std::ostringstream out;
  out << "| Method | Runs | Mac. F1 | Reliable Pre. | Reliable Rec. | Reliable F1 | Unreliable Pre. | Unreliable Rec. "
         "| Unreliable F1 | p-value |\n";
  out << "|---|---|---|---|---|---|---|---|---|---|\n";
  static const char* cols[] = {"macro_f1",         "reliable.precision",   "reliable.recall", "reliable.f1",
                               "unreliable.precision", "unreliable.recall", "unreliable.f1"};
  for (const auto& [label, agg] : rows) {
    out << "| " << label << " | " << agg.runs.size();
    for (const char* c : cols) {
      const Summary* s = nullptr;
      for (const auto& [name, sm] : agg.summary)
        if (name == c) s = &sm;
      char buf[64];
      if (agg.runs.size() > 1)
        std::snprintf(buf, sizeof(buf), "%.3f ± %.3f", s->mean, s->std);
      else
        std::snprintf(buf, sizeof(buf), "%.3f", s->mean);
      out << " | " << buf;
    }
    if (agg.p_value) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.4f vs %s", *agg.p_value, std::string(to_string(*agg.compared_to)).c_str());
      out << " | " << buf;
    } else {
      out << " | -";
    }
    out << " |\n";
  }
  return out.str();
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("missing " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

// A trained run restored from its directory.
struct LoadedRun {
  TrainConfig config;
  std::unique_ptr<Model> model;
  SplitResult splits;
  fs::path corpus_path;
  fs::path dir;
};

inline LoadedRun load_run(const fs::path& root, std::optional<Variant> variant, int run,
                          std::shared_ptr<const Encoders> encoders = nullptr) {
  const auto manifest = read_json(root / "manifest.json");
  LoadedRun out;
  out.config = config_from_json(read_json(root / "config.json"));
  if (variant) out.config.variant = *variant;
  out.config.seed += static_cast<std::uint64_t>(run);
  out.config = out.config.forced();
  out.dir = run_path(root, out.config.variant, run);
  if (!fs::exists(out.dir / "model.ckpt")) throw InputError("no checkpoint at " + (out.dir / "model.ckpt").string());
  out.corpus_path = manifest.at("inputs").at("corpus").get<std::string>();
  out.splits = split_from_json(read_json(out.dir / "splits.json"));
  if (!encoders) encoders = std::make_shared<Encoders>(out.config.encoder);
  out.model = std::make_unique<Model>(out.config, encoders);
  out.model->parameters().load(out.dir / "model.ckpt");
  return out;
}

}  // namespace btic
