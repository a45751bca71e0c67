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


// btic: ingest, train-eval, export-embeddings, export-attention.
// Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.

#include <btic/commands.hpp>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

namespace {

std::string joined_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

int run(int argc, char** argv) {
  CLI::App app{"Multimodal unreliable-news detection with contrastive learning"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  const std::string command = joined_args(argc, argv);

  btic::IngestOptions ingest;
  std::string ingest_cache;
  auto* ing = app.add_subcommand("ingest", "Import a CSV corpus, resolve images and write the cleaned corpus");
  ing->add_option("--source", ingest.source, "CSV file")->required();
  ing->add_option("--adapter", ingest.adapter, "Column mapping: 'recovery', 'canonical' or a JSON file");
  ing->add_option("--cache-dir", ingest_cache, "Image cache (default: $BTIC_CACHE_DIR or <out>/images)");
  ing->add_option("--out", ingest.out, "Output directory")->required();
  ing->add_option("--parallel", ingest.parallel, "Concurrent downloads")->check(CLI::PositiveNumber);

  btic::TrainEvalOptions te;
  std::string te_config, te_variant, te_profile;
  std::uint64_t te_seed = 0;
  int te_runs = 0;
  auto* tr = app.add_subcommand("train-eval", "Split, train, evaluate and write a run directory");
  auto* cfg_opt = tr->add_option("--config", te_config, "JSON config with train/split/encoder sections");
  tr->add_option("--corpus", te.corpus, "Canonical corpus (corpus.jsonl)")->required();
  tr->add_option("--out", te.out, "Run directory")->required();
  auto* seed_opt = tr->add_option("--seed", te_seed, "Base seed");
  auto* var_opt = tr->add_option("--variant", te_variant, "BT, BTI, BTICr or BTIC");
  auto* runs_opt = tr->add_option("--runs", te_runs, "Repeats with seeds seed + i")->check(CLI::PositiveNumber);
  auto* prof_opt = tr->add_option("--profile", te_profile, "Encoder profile")->check(CLI::IsMember({"full", "tiny"}));

  btic::ExportEmbeddingsOptions emb;
  std::vector<std::string> emb_variants;
  std::string emb_out;
  auto* ex = app.add_subcommand("export-embeddings", "Write x_d tables, 2D projections and scatter plots");
  ex->add_option("--run-dir", emb.run_dir, "Run directory")->required();
  ex->add_option("--split", emb.split, "train, validation or test")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  ex->add_option("--variant", emb_variants, "Variants to export (default: all trained)");
  ex->add_option("--run", emb.run, "Run index")->check(CLI::NonNegativeNumber);
  ex->add_option("--out", emb_out, "Output directory (default: <run-dir>/embeddings_<split>)");

  btic::ExportAttentionOptions att;
  std::string att_variant, att_out;
  auto* at = app.add_subcommand("export-attention", "Write attention weights and heatmaps for one article");
  at->add_option("--run-dir", att.run_dir, "Run directory")->required();
  at->add_option("--article-id", att.article_id, "Article id")->required();
  at->add_option("--variant", att_variant, "Variant (default: the configured one)");
  at->add_option("--run", att.run, "Run index")->check(CLI::NonNegativeNumber);
  at->add_option("--out", att_out, "Output directory (default: <run-dir>/attention_<id>)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  if (*ing) {
    if (!ingest_cache.empty()) ingest.cache_dir = ingest_cache;
    ingest.command = command;
    btic::cmd_ingest(ingest);
  } else if (*tr) {
    if (*cfg_opt) te.config = te_config;
    if (*seed_opt) te.seed = te_seed;
    if (*var_opt) te.variant = btic::parse_variant(te_variant);
    if (*runs_opt) te.runs = te_runs;
    if (*prof_opt) te.profile = te_profile;
    te.command = command;
    const auto result = btic::cmd_train_eval(te);
    for (const auto& [v, agg] : result.variants)
      std::cout << btic::to_string(v) << " macro F1 " << agg.summary.front().second.mean << "\n";
  } else if (*ex) {
    for (const auto& v : emb_variants) emb.variants.push_back(btic::parse_variant(v));
    if (!emb_out.empty()) emb.out = emb_out;
    emb.command = command;
    std::cout << btic::cmd_export_embeddings(emb).string() << "\n";
  } else if (*at) {
    if (!att_variant.empty()) att.variant = btic::parse_variant(att_variant);
    if (!att_out.empty()) att.out = att_out;
    att.command = command;
    std::cout << btic::cmd_export_attention(att).string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const btic::InputError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
