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

// Command implementations behind the `btic` executable. Each command is a
// function of (inputs, config, seed) to files under its output directory and
// writes exactly one manifest.json describing them.

#include <btic/export.hpp>
#include <btic/fetch.hpp>
#include <btic/projection.hpp>
#include <btic/rundir.hpp>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace btic {

inline fs::path default_cache_dir(const fs::path& out) {
  if (const char* env = std::getenv("BTIC_CACHE_DIR"); env && *env) return env;
  return out / "images";
}

inline nlohmann::ordered_json to_json(const CleanReport& r, const Provenance& p) {
  nlohmann::ordered_json j;
  j["source"] = p.source;
  j["adapter"] = p.adapter;
  j["rows_read"] = p.rows_read;
  auto& skipped = j["skipped_rows"] = nlohmann::ordered_json::array();
  for (const auto& s : p.skipped) skipped.push_back({{"row", s.row}, {"reason", s.reason}});
  j["kept"] = r.kept;
  j["removed_without_image"] = r.removed;
  j["reliable"] = r.reliable;
  j["unreliable"] = r.unreliable;
  return j;
}

struct IngestOptions {
  fs::path source;
  std::string adapter = "recovery";  // preset name or adapter JSON path
  std::optional<fs::path> cache_dir;
  fs::path out;
  int parallel = 4;
  Downloader downloader = curl_download;
  std::string command = "btic ingest";
};

inline ImportAdapter resolve_adapter(const std::string& name) {
  if (name == "recovery") return ImportAdapter::recovery();
  if (name == "canonical") return ImportAdapter::canonical();
  return ImportAdapter::from_file(name);
}

// Writes corpus.jsonl (cleaned), fetch_report.json, clean_report.json and
// manifest.json. Nothing is written when the source is malformed.
inline void cmd_ingest(const IngestOptions& opt) {
  const auto started = now_utc();
  const ImportAdapter adapter = resolve_adapter(opt.adapter);
  Corpus corpus = load_corpus(opt.source, adapter);
  const fs::path cache = opt.cache_dir ? *opt.cache_dir : default_cache_dir(opt.out);
  const FetchReport fetched = fetch_images(corpus, cache, opt.parallel, opt.downloader);
  CleanReport report;
  const Corpus cleaned = clean(corpus, &report);
  spdlog::info("kept {} of {} articles ({} Reliable / {} Unreliable); {} rows skipped", report.kept, corpus.size(),
               report.reliable, report.unreliable, corpus.provenance.skipped.size());

  std::ostringstream lines;
  write_corpus(cleaned, lines);
  write_atomic(opt.out / "corpus.jsonl", lines.str());
  write_atomic(opt.out / "fetch_report.json", to_json(fetched).dump(2) + "\n");
  write_atomic(opt.out / "clean_report.json", to_json(report, corpus.provenance).dump(2) + "\n");

  RunManifest m;
  m.command = opt.command;
  m.config = {{"adapter", adapter.name}, {"parallel", opt.parallel}};
  m.inputs = {{"source", opt.source.string()}, {"cache_dir", cache.string()}};
  m.outputs = {(opt.out / "corpus.jsonl").string(), (opt.out / "fetch_report.json").string(),
               (opt.out / "clean_report.json").string()};
  m.started_at = started;
  m.finished_at = now_utc();
  write_atomic(opt.out / "manifest.json", m.to_json().dump(2) + "\n");
}

struct TrainEvalOptions {
  std::optional<fs::path> config;
  fs::path corpus;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<Variant> variant;
  std::optional<int> runs;
  std::optional<std::string> profile;
  std::string command = "btic train-eval";
};

// Config file, then flag overrides. A profile flag swaps the encoder
// dimensions but keeps the encoder seed and any feature-store paths.
inline TrainConfig resolve_config(const TrainEvalOptions& opt) {
  TrainConfig cfg;
  if (opt.config) cfg = config_from_json(read_json(*opt.config));
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.variant) cfg.variant = *opt.variant;
  if (opt.runs) cfg.runs = *opt.runs;
  if (opt.profile) {
    EncoderConfig e = EncoderConfig::for_profile(*opt.profile);
    e.seed = cfg.encoder.seed;
    e.vocab_file = cfg.encoder.vocab_file;
    e.text_features = cfg.encoder.text_features;
    e.patch_features = cfg.encoder.patch_features;
    cfg.encoder = e;
  }
  cfg.validate();
  return cfg;
}

struct TrainEvalResult {
  std::vector<std::pair<Variant, AggregateReport>> variants;
};

inline TrainEvalResult cmd_train_eval(const TrainEvalOptions& opt) {
  const auto started = now_utc();
  const TrainConfig cfg = resolve_config(opt);
  const Corpus corpus = read_corpus(opt.corpus);
  if (corpus.empty()) throw InputError("corpus " + opt.corpus.string() + " has no articles");
  auto encoders = std::make_shared<const Encoders>(cfg.encoder);
  InputCache cache(encoders, true);

  std::vector<Variant> order{cfg.variant};
  if (cfg.compare_variant && *cfg.compare_variant != cfg.variant) order.push_back(*cfg.compare_variant);

  RunManifest m;
  m.command = opt.command;
  m.config = to_json(cfg);
  m.inputs = {{"corpus", fs::absolute(opt.corpus).string()}};
  if (opt.config) m.inputs["config"] = opt.config->string();
  m.started_at = started;

  TrainEvalResult result;
  for (Variant v : order) {
    TrainConfig c = cfg;
    c.variant = v;
    const auto runs = repeat_runs(c, corpus, encoders, cfg.runs, &cache);
    std::vector<MetricsReport> reports;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      for (auto& f : write_run(run_path(opt.out, v, static_cast<int>(i)), runs[i])) m.outputs.push_back(f);
      reports.push_back(runs[i].metrics);
    }
    result.variants.emplace_back(v, aggregate(v, reports));
  }
  if (result.variants.size() == 2) compare(result.variants[0].second, result.variants[1].second);

  std::vector<std::pair<std::string, AggregateReport>> rows;
  for (const auto& [v, agg] : result.variants) {
    const fs::path path = opt.out / std::string(to_string(v)) / "aggregate.json";
    write_atomic(path, to_json(agg).dump(2) + "\n");
    m.outputs.push_back(path.string());
    rows.emplace_back(variant_label(v, cfg.alpha), agg);
  }
  write_atomic(opt.out / "config.json", to_json(cfg).dump(2) + "\n");
  write_atomic(opt.out / "metrics.md", metrics_table(rows));
  m.outputs.push_back((opt.out / "config.json").string());
  m.outputs.push_back((opt.out / "metrics.md").string());
  m.finished_at = now_utc();
  write_atomic(opt.out / "manifest.json", m.to_json().dump(2) + "\n");
  return result;
}

inline const std::vector<std::string>& split_ids(const SplitResult& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "validation") return s.validation;
  if (name == "test") return s.test;
  throw InputError("unknown split '" + name + "' (expected train, validation or test)");
}

struct ExportEmbeddingsOptions {
  fs::path run_dir;
  std::string split = "test";
  std::vector<Variant> variants;  // empty: every variant present in the run directory
  int run = 0;
  std::optional<fs::path> out;
  TsneOptions tsne;
  std::string command = "btic export-embeddings";
};

inline std::vector<Variant> variants_in(const fs::path& run_dir) {
  std::vector<Variant> out;
  for (Variant v : {Variant::BT, Variant::BTI, Variant::BTICr, Variant::BTIC})
    if (fs::exists(run_dir / std::string(to_string(v)))) out.push_back(v);
  return out;
}

// Per variant: <V>.tsv (id, label, x_d), <V>_projection.tsv (id, label, x, y) and <V>.png.
inline fs::path cmd_export_embeddings(const ExportEmbeddingsOptions& opt) {
  const auto started = now_utc();
  const fs::path out = opt.out ? *opt.out : opt.run_dir / ("embeddings_" + opt.split);
  auto variants = opt.variants.empty() ? variants_in(opt.run_dir) : opt.variants;
  if (variants.empty()) throw InputError("no trained variants under " + opt.run_dir.string());

  RunManifest m;
  m.command = opt.command;
  m.config = {{"split", opt.split}, {"run", opt.run}, {"projection", opt.tsne.to_json()}};
  m.inputs = {{"run_dir", opt.run_dir.string()}};
  m.started_at = started;

  std::shared_ptr<const Encoders> encoders;
  std::optional<Corpus> corpus;
  for (Variant v : variants) {
    auto loaded = load_run(opt.run_dir, v, opt.run, encoders);
    encoders = loaded.model->shared_encoders();
    if (!corpus) corpus = read_corpus(loaded.corpus_path);
    const auto set = select_articles(*corpus, split_ids(loaded.splits, opt.split));
    if (set.empty()) throw InputError("split '" + opt.split + "' is empty");
    InputCache cache(encoders, loaded.config.uses_image());

    Matrix xd(static_cast<Eigen::Index>(set.size()), 2 * encoders->config().width);
    std::vector<Label> labels;
    std::string table;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto o = loaded.model->forward(cache.get(*set[i]), false);
      xd.row(static_cast<Eigen::Index>(i)) = o.pooled.x_d.value().row(0);
      labels.push_back(set[i]->label);
      table += set[i]->id + "\t" + std::string(to_string(set[i]->label));
      for (Eigen::Index c = 0; c < xd.cols(); ++c) table += "\t" + fmt_double(xd(static_cast<Eigen::Index>(i), c));
      table += "\n";
    }
    const Matrix proj = tsne_2d(xd, opt.tsne);
    std::string ptable;
    for (std::size_t i = 0; i < set.size(); ++i)
      ptable += set[i]->id + "\t" + std::string(to_string(labels[i])) + "\t" +
                fmt_double(proj(static_cast<Eigen::Index>(i), 0)) + "\t" +
                fmt_double(proj(static_cast<Eigen::Index>(i), 1)) + "\n";

    const std::string name(to_string(v));
    write_atomic(out / (name + ".tsv"), table);
    write_atomic(out / (name + "_projection.tsv"), ptable);
    fs::create_directories(out);
    write_png(out / (name + ".png"), scatter_plot(proj, labels, name + " (" + opt.split + ")"));
    for (const char* suffix : {".tsv", "_projection.tsv", ".png"}) m.outputs.push_back((out / (name + suffix)).string());
  }
  m.finished_at = now_utc();
  write_atomic(out / "manifest.json", m.to_json().dump(2) + "\n");
  return out;
}

struct ExportAttentionOptions {
  fs::path run_dir;
  std::string article_id;
  std::optional<Variant> variant;
  int run = 0;
  std::optional<fs::path> out;
  std::string command = "btic export-attention";
};

// Writes text_weights.tsv (n rows), attention_heads.npy (R x l x l),
// occlusion.tsv (l rows) and, when the image path is active,
// patch_weights.tsv (grid x grid), heatmap.png and class_heatmap.png at image_size.
inline fs::path cmd_export_attention(const ExportAttentionOptions& opt) {
  const auto started = now_utc();
  auto loaded = load_run(opt.run_dir, opt.variant, opt.run);
  const Corpus corpus = read_corpus(loaded.corpus_path);
  const Article& article = corpus.find(opt.article_id);
  const Model& model = *loaded.model;
  const EncoderConfig& ec = model.encoders().config();
  const fs::path out = opt.out ? *opt.out : opt.run_dir / ("attention_" + opt.article_id);

  InputCache cache(model.shared_encoders(), loaded.config.uses_image());
  const ag::Var e = model.sequence(cache.get(article));
  const auto o = model.forward_sequence(e, false);
  const auto summary = summarize_attention(o.fused.attention, ec.max_len, ec.grid);
  const RowVector occlusion = occlusion_contributions(model, e);

  auto tokens = model.encoders().text_encoder().tokenizer().display(article.headline, article.body, ec.max_len, true);
  tokens.resize(static_cast<std::size_t>(ec.max_len), "[PAD]");
  std::string text = "position\ttoken\tweight\n";
  for (int j = 0; j < ec.max_len; ++j)
    text += std::to_string(j) + "\t" + tokens[static_cast<std::size_t>(j)] + "\t" + fmt_double(summary.text(j)) + "\n";
  write_atomic(out / "text_weights.tsv", text);

  std::string occ = "position\tkind\tlogit_change\n";
  for (Eigen::Index j = 0; j < occlusion.size(); ++j)
    occ += std::to_string(j) + "\t" + (j < ec.max_len ? "text" : "patch") + "\t" + fmt_double(occlusion(j)) + "\n";
  write_atomic(out / "occlusion.tsv", occ);

  const auto l = static_cast<std::size_t>(e.rows());
  std::vector<double> flat;
  flat.reserve(summary.heads.size() * l * l);
  for (const auto& h : summary.heads)
    for (std::size_t r = 0; r < l; ++r)
      for (std::size_t c = 0; c < l; ++c) flat.push_back(h(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
  fs::create_directories(out);
  write_npy(out / "attention_heads.npy", {summary.heads.size(), l, l}, flat);

  RunManifest m;
  m.command = opt.command;
  m.config = {{"variant", std::string(to_string(loaded.config.variant))},
              {"run", opt.run},
              {"aggregation", "head mean, column sums"},
              {"upscale", "bilinear"}};
  m.inputs = {{"run_dir", opt.run_dir.string()}, {"article_id", opt.article_id}};
  m.outputs = {(out / "text_weights.tsv").string(), (out / "occlusion.tsv").string(),
               (out / "attention_heads.npy").string()};

  if (summary.patch_grid.size() > 0) {
    std::string grid;
    for (Eigen::Index r = 0; r < summary.patch_grid.rows(); ++r) {
      for (Eigen::Index c = 0; c < summary.patch_grid.cols(); ++c)
        grid += (c ? "\t" : "") + fmt_double(summary.patch_grid(r, c));
      grid += "\n";
    }
    write_atomic(out / "patch_weights.tsv", grid);

    Matrix signed_grid(ec.grid, ec.grid);
    for (int j = 0; j < ec.patches(); ++j) {
      const double delta = occlusion(ec.max_len + j);
      signed_grid(j / ec.grid, j % ec.grid) = summary.patch_grid(j / ec.grid, j % ec.grid) * ((delta > 0) - (delta < 0));
    }
    cv::Mat image;
    if (!article.image_path.empty()) {
      try {
        image = load_image(article.image_path);
      } catch (const InputError& err) {
        spdlog::warn("{}; drawing heatmap without the image", err.what());
      }
    }
    if (image.empty()) image = cv::Mat(ec.image_size, ec.image_size, CV_8UC3, cv::Scalar(128, 128, 128));
    write_png(out / "heatmap.png", attention_overlay(image, upscale_grid(summary.patch_grid, ec.image_size)));
    write_png(out / "class_heatmap.png", class_overlay(image, upscale_grid(signed_grid, ec.image_size)));
    for (const char* f : {"patch_weights.tsv", "heatmap.png", "class_heatmap.png"}) m.outputs.push_back((out / f).string());
  }
  m.started_at = started;
  m.finished_at = now_utc();
  write_atomic(out / "manifest.json", m.to_json().dump(2) + "\n");
  return out;
}

}  // namespace btic
