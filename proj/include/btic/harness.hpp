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

#include <btic/contrastive.hpp>
#include <btic/corpus.hpp>
#include <btic/encoders.hpp>
#include <btic/fusion.hpp>
#include <btic/metrics.hpp>
#include <btic/nn.hpp>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace btic {

// BT: text only, no contrastive term. BTI: text + image, no contrastive term.
// BTICr: contrastive with random negatives. BTIC: the full model.
enum class Variant { BT, BTI, BTICr, BTIC };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::BT: return "BT";
    case Variant::BTI: return "BTI";
    case Variant::BTICr: return "BTICr";
    case Variant::BTIC: return "BTIC";
  }
  return "BTIC";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::BT, Variant::BTI, Variant::BTICr, Variant::BTIC})
    if (s == to_string(v)) return v;
  throw InputError("unknown variant '" + std::string(s) + "' (expected BT, BTI, BTICr or BTIC)");
}

struct TrainConfig {
  Variant variant = Variant::BTIC;
  double alpha = 0.2;
  int k = 5;
  double learning_rate = 1e-6;
  int epochs = 100;
  int batch_size = 16;
  std::uint64_t seed = 42;
  double dropout = 0.5;
  int heads = 8;
  int runs = 1;
  std::optional<Variant> compare_variant;
  bool log_train_accuracy = false;

  SplitMode split_mode = SplitMode::Chronological;
  double test_ratio = 0.2;
  double val_frac = 0.15;
  double train_ratio = 0.8;

  EncoderConfig encoder = EncoderConfig::full();

  bool uses_image() const { return variant != Variant::BT; }
  bool uses_contrastive() const { return (variant == Variant::BTIC || variant == Variant::BTICr) && alpha > 0.0; }

  // Applies the variant's fixed settings: BT and BTI train without L_s.
  TrainConfig forced() const {
    TrainConfig c = *this;
    if (variant == Variant::BT || variant == Variant::BTI) c.alpha = 0.0;
    return c;
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (!(alpha >= 0.0 && alpha <= 1.0)) out.push_back("train.alpha: must lie in [0, 1]");
    if (k <= 0) out.push_back("train.k: must be positive");
    if (!(learning_rate > 0.0)) out.push_back("train.learning_rate: must be positive");
    if (epochs <= 0) out.push_back("train.epochs: must be positive");
    if (batch_size <= 0) out.push_back("train.batch_size: must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) out.push_back("train.dropout: must lie in [0, 1)");
    if (heads <= 0) out.push_back("train.heads: must be positive");
    else if (encoder.width % heads != 0) out.push_back("train.heads: must divide encoder.width");
    if (runs <= 0) out.push_back("train.runs: must be positive");
    if (compare_variant && runs < 2) out.push_back("train.compare_variant: needs runs >= 2 for a t-test");
    if (!(test_ratio >= 0.0 && test_ratio < 1.0)) out.push_back("split.test_ratio: must lie in [0, 1)");
    if (!(val_frac >= 0.0 && val_frac < 1.0)) out.push_back("split.val_frac: must lie in [0, 1)");
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) out.push_back("split.train_ratio: must lie in (0, 1)");
    for (auto& p : encoder.problems()) out.push_back(p);
    return out;
  }

  void validate() const {
    auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& s : p) msg += "\n  " + s;
    throw InputError(msg);
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["train"] = {{"variant", std::string(to_string(c.variant))},
                {"alpha", c.alpha},
                {"k", c.k},
                {"learning_rate", c.learning_rate},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"dropout", c.dropout},
                {"heads", c.heads},
                {"runs", c.runs},
                {"compare_variant", c.compare_variant ? nlohmann::ordered_json(std::string(to_string(*c.compare_variant)))
                                                      : nlohmann::ordered_json(nullptr)},
                {"log_train_accuracy", c.log_train_accuracy},
                {"optimizer", "adam"}};
  j["split"] = {{"mode", std::string(to_string(c.split_mode))},
                {"test_ratio", c.test_ratio},
                {"val_frac", c.val_frac},
                {"train_ratio", c.train_ratio}};
  nlohmann::json enc = c.encoder;
  j["encoder"] = nlohmann::ordered_json::parse(enc.dump());
  return j;
}

// Every malformed field is reported, one per line.
inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  std::vector<std::string> errors;
  auto field = [&](const char* section, const char* key, auto& dst) {
    if (!j.contains(section) || !j[section].contains(key)) return;
    try {
      j[section][key].get_to(dst);
    } catch (const nlohmann::json::exception&) {
      errors.push_back(std::string(section) + "." + key + ": wrong type");
    }
  };
  auto named = [&](const char* section, const char* key, auto parse) {
    if (!j.contains(section) || !j[section].contains(key) || j[section][key].is_null()) return;
    try {
      parse(j[section][key].template get<std::string>());
    } catch (const std::exception& e) {
      errors.push_back(std::string(section) + "." + key + ": " + e.what());
    }
  };
  static const std::map<std::string, std::set<std::string>> known{
      {"train",
       {"variant", "alpha", "k", "learning_rate", "epochs", "batch_size", "seed", "dropout", "heads", "runs",
        "compare_variant", "log_train_accuracy", "optimizer"}},
      {"split", {"mode", "test_ratio", "val_frac", "train_ratio"}},
      {"encoder", {}}};
  for (const auto& [section, value] : j.items()) {
    if (!known.count(section)) {
      errors.push_back(section + ": unknown section");
      continue;
    }
    if (section == "encoder") continue;
    for (const auto& [key, _] : value.items())
      if (!known.at(section).count(key)) errors.push_back(section + "." + key + ": unknown field");
  }

  named("train", "variant", [&](const std::string& s) { c.variant = parse_variant(s); });
  named("train", "compare_variant", [&](const std::string& s) { c.compare_variant = parse_variant(s); });
  field("train", "alpha", c.alpha);
  field("train", "k", c.k);
  field("train", "learning_rate", c.learning_rate);
  field("train", "epochs", c.epochs);
  field("train", "batch_size", c.batch_size);
  field("train", "seed", c.seed);
  field("train", "dropout", c.dropout);
  field("train", "heads", c.heads);
  field("train", "runs", c.runs);
  field("train", "log_train_accuracy", c.log_train_accuracy);
  named("train", "optimizer", [&](const std::string& s) {
    if (s != "adam") throw InputError("only 'adam' is supported");
  });
  named("split", "mode", [&](const std::string& s) { c.split_mode = parse_split_mode(s); });
  field("split", "test_ratio", c.test_ratio);
  field("split", "val_frac", c.val_frac);
  field("split", "train_ratio", c.train_ratio);
  if (j.contains("encoder")) {
    try {
      c.encoder = j["encoder"].get<EncoderConfig>();
    } catch (const std::exception& e) {
      errors.push_back(std::string("encoder: ") + e.what());
    }
  }
  for (auto& p : c.problems()) errors.push_back(p);
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& s : errors) msg += "\n  " + s;
    throw InputError(msg);
  }
  return c;
}

// Frozen-encoder outputs for one article. `patches` is empty on the text-only path.
struct ArticleInputs {
  Matrix text;  // n x d
  int valid_len = 0;
  Matrix patches;  // m x d^I
};

// Lazily encodes articles once; the encoders are frozen so outputs never change.
class InputCache {
 public:
  InputCache(std::shared_ptr<const Encoders> encoders, bool with_image)
      : encoders_(std::move(encoders)), with_image_(with_image) {}

  const ArticleInputs& get(const Article& a) {
    auto it = cache_.find(a.id);
    if (it != cache_.end()) return it->second;
    ArticleInputs in;
    TextEmbedding t = encoders_->encode_text(a);
    in.text = std::move(t.matrix);
    in.valid_len = t.valid_len;
    if (with_image_) in.patches = encoders_->image_features(a);
    return cache_.emplace(a.id, std::move(in)).first->second;
  }

  bool with_image() const { return with_image_; }

 private:
  std::shared_ptr<const Encoders> encoders_;
  bool with_image_;
  std::map<std::string, ArticleInputs> cache_;
};

// Trainable part of the network: image contextualizer (unless BT), fusion
// attention and the pooled sigmoid classifier.
class Model {
 public:
  Model(const TrainConfig& cfg, std::shared_ptr<const Encoders> encoders)
      : cfg_(cfg), encoders_(std::move(encoders)), params_(true) {
    Rng rng(cfg.seed);
    if (cfg.uses_image()) image_ = ImageContextualizer(params_, encoders_->config(), rng);
    head_ = FusionHead(params_, encoders_->config().width, cfg.heads, rng);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;

  struct Output {
    ag::Var sequence;
    FusedRepresentation fused;
    PooledVector pooled;
    Prediction prediction;
  };

  // e = text rows, followed by the contextualized patch rows unless BT.
  ag::Var sequence(const ArticleInputs& in) const {
    ag::Var text = ag::constant(in.text);
    if (!image_) return text;
    if (in.patches.size() == 0) throw std::logic_error("model expects image features");
    return fuse(text, (*image_)(ag::constant(in.patches)));
  }

  Output forward_sequence(const ag::Var& e, bool training, Rng* rng = nullptr) const {
    Output out;
    out.sequence = e;
    out.fused = head_.attend(e);
    out.pooled = pool(out.fused.x, cfg_.dropout, training, rng);
    out.prediction = head_.classify(out.pooled.x_d);
    return out;
  }

  Output forward(const ArticleInputs& in, bool training, Rng* rng = nullptr) const {
    return forward_sequence(sequence(in), training, rng);
  }

  const TrainConfig& config() const { return cfg_; }
  const Encoders& encoders() const { return *encoders_; }
  std::shared_ptr<const Encoders> shared_encoders() const { return encoders_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }
  FusionHead& head() { return head_; }
  const std::optional<ImageContextualizer>& image_path() const { return image_; }
  long contextualizer_calls() const { return image_ ? image_->calls() : 0; }

 private:
  TrainConfig cfg_;
  std::shared_ptr<const Encoders> encoders_;
  nn::ParameterSet params_;
  std::optional<ImageContextualizer> image_;
  FusionHead head_;
};

struct EpochLog {
  int epoch = 0;
  double ce = 0.0;
  double contrastive = 0.0;
  double loss = 0.0;
  std::optional<double> val_macro_f1;
  std::optional<double> train_accuracy;
};

inline nlohmann::ordered_json to_json(const EpochLog& e) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  return {{"epoch", e.epoch},
          {"ce", e.ce},
          {"contrastive", e.contrastive},
          {"loss", e.loss},
          {"val_macro_f1", opt(e.val_macro_f1)},
          {"train_accuracy", opt(e.train_accuracy)}};
}

struct TrainCounters {
  long image_encoder_calls = 0;
  long contextualizer_calls = 0;
  long contrastive_terms = 0;
  long bank_reads = 0;
};

// Observes every memory-bank read: (current pass, id, pass that wrote the value).
using BankReadObserver = std::function<void(long, const std::string&, long)>;

struct TrainResult {
  std::unique_ptr<Model> model;
  std::vector<EpochLog> log;
  MemoryBank bank;
  std::optional<CandidatePool> pool;
  TrainCounters counters;
  int selected_epoch = 0;
};

inline std::vector<const Article*> select_articles(const Corpus& corpus, const std::vector<std::string>& ids) {
  const auto idx = corpus.index();
  std::vector<const Article*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = idx.find(id);
    if (it == idx.end()) throw InputError("split references unknown article " + id);
    out.push_back(&corpus.articles[it->second]);
  }
  return out;
}

struct Predictions {
  std::vector<Label> predicted;
  std::vector<Label> truth;
  std::vector<double> scores;
};

inline Predictions predict(const Model& model, const std::vector<const Article*>& set, InputCache& cache) {
  Predictions p;
  for (const Article* a : set) {
    auto out = model.forward(cache.get(*a), false);
    p.predicted.push_back(out.prediction.label);
    p.truth.push_back(a->label);
    p.scores.push_back(out.prediction.score);
  }
  return p;
}

// Metrics at threshold 0.5 in evaluation mode. Zero-division warnings are
// always kept in the report and logged unless `quiet`.
inline MetricsReport evaluate(const Model& model, const std::vector<const Article*>& set, InputCache& cache,
                              bool quiet = false) {
  if (set.empty()) throw InputError("evaluate: empty test set");
  auto p = predict(model, set, cache);
  auto report = compute_metrics(p.predicted, p.truth, model.config().seed);
  if (!quiet)
    for (const auto& w : report.warnings) spdlog::warn("{}", w);
  return report;
}

// Per batch: forward to x_d and the score, read positive and negative
// representations from the bank, form L = (1 - alpha) L_c + alpha L_s, take
// one Adam step, then stage each article's detached pooled vector into its
// slot. Staged writes become readable when the pass ends.
inline TrainResult train(const TrainConfig& raw_cfg, const SplitResult& splits, const Corpus& corpus,
                         std::shared_ptr<const Encoders> encoders, InputCache* shared_cache = nullptr,
                         const BankReadObserver& on_read = {}) {
  const TrainConfig cfg = raw_cfg.forced();
  cfg.validate();
  const auto train_set = select_articles(corpus, splits.train);
  const auto val_set = select_articles(corpus, splits.validation);
  if (train_set.empty()) throw InputError("train: empty training set");

  TrainResult result;
  const long image_calls_before = encoders->image_calls();
  std::optional<InputCache> own_cache;
  if (!shared_cache || shared_cache->with_image() != cfg.uses_image()) own_cache.emplace(encoders, cfg.uses_image());
  InputCache& cache = own_cache ? *own_cache : *shared_cache;

  result.model = std::make_unique<Model>(cfg, encoders);
  Model& model = *result.model;
  const Eigen::Index rep_width = 2 * encoders->config().width;

  std::vector<std::string> train_ids;
  std::vector<Article> train_articles;
  for (const Article* a : train_set) {
    train_ids.push_back(a->id);
    train_articles.push_back(*a);
  }
  result.bank = MemoryBank(train_ids, rep_width);

  if (cfg.uses_contrastive()) {
    std::vector<HeadlineVector> hv;
    for (const auto& a : train_articles) hv.push_back(encoders->encode_headline(a.id, a.headline));
    const auto index = build_index(hv, train_articles);
    const auto source = cfg.variant == Variant::BTICr ? NegativeSource::Random : NegativeSource::Similar;
    result.pool = build_candidate_pool(index, train_articles, cfg.k, source, cfg.seed + 1);
  }

  nn::Adam adam(model.parameters(), {cfg.learning_rate});
  Rng rng(cfg.seed ^ 0x5bd1e995ULL);
  std::vector<std::size_t> order(train_set.size());
  std::vector<Matrix> best;
  double best_f1 = -1.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    result.bank.begin_pass();
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);

    double ce_sum = 0.0, cs_sum = 0.0;
    int batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      ++batch_no;
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      model.parameters().zero_grad();
      std::vector<ag::Var> ce_terms, cs_terms;
      std::vector<std::pair<std::string, RowVector>> staged;
      for (std::size_t b = start; b < stop; ++b) {
        const Article& a = *train_set[order[b]];
        auto out = model.forward(cache.get(a), true, &rng);
        ce_terms.push_back(ag::bce_with_logits(out.prediction.logit, target_of(a.label)));
        if (cfg.uses_contrastive()) {
          const auto& cand = result.pool->at(a.id);
          for (const auto* ids : {&cand.positives, &cand.negatives})
            for (const auto& id : *ids) {
              ++result.counters.bank_reads;
              if (on_read) on_read(result.bank.pass(), id, result.bank.written_in(id));
            }
          cs_terms.push_back(contrastive_term(out.pooled.x_d, result.bank.read_matrix(cand.positives),
                                              result.bank.read_matrix(cand.negatives), cfg.k));
          ++result.counters.contrastive_terms;
        }
        staged.emplace_back(a.id, out.pooled.pooled.value().row(0));
      }
      ag::Var ce = ag::mean_of(ce_terms);
      ag::Var loss = ce;
      if (cfg.uses_contrastive()) {
        ag::Var cs = ag::mean_of(cs_terms);
        cs_sum += cs.scalar() * static_cast<double>(cs_terms.size());
        loss = combined_loss(ce, cs, cfg.alpha);
      }
      ce_sum += ce.scalar() * static_cast<double>(ce_terms.size());
      if (!std::isfinite(loss.scalar()))
        throw RuntimeError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no));
      ag::backward(loss);
      adam.step();
      for (auto& [id, v] : staged) result.bank.write(id, v);
    }
    result.bank.end_pass();

    EpochLog log;
    log.epoch = epoch;
    const double n = static_cast<double>(train_set.size());
    log.ce = ce_sum / n;
    log.contrastive = cs_sum / n;
    log.loss = combined_loss(log.ce, log.contrastive, cfg.alpha);
    if (!val_set.empty()) {
      log.val_macro_f1 = evaluate(model, val_set, cache, true).macro_f1;
      if (*log.val_macro_f1 > best_f1) {
        best_f1 = *log.val_macro_f1;
        best = model.parameters().snapshot();
        result.selected_epoch = epoch;
      }
    }
    if (cfg.log_train_accuracy) log.train_accuracy = evaluate(model, train_set, cache, true).accuracy;
    spdlog::debug("epoch {} loss {:.6f} ce {:.6f} contrastive {:.6f}", epoch, log.loss, log.ce, log.contrastive);
    result.log.push_back(log);
  }

  // Validation macro-F1 picks the checkpoint when a validation set exists.
  if (!best.empty() && cfg.split_mode == SplitMode::Chronological) {
    model.parameters().restore(best);
  } else {
    result.selected_epoch = cfg.epochs;
  }
  result.counters.image_encoder_calls = encoders->image_calls() - image_calls_before;
  result.counters.contextualizer_calls = model.contextualizer_calls();
  return result;
}

struct RunOutcome {
  MetricsReport metrics;
  TrainResult trained;
  SplitResult splits;
};

inline SplitResult make_split(const TrainConfig& cfg, const Corpus& corpus, std::uint64_t seed) {
  return cfg.split_mode == SplitMode::Chronological ? chronological_split(corpus, cfg.test_ratio, cfg.val_frac)
                                                    : random_split(corpus, cfg.train_ratio, seed);
}

// Applies the variant's forced settings, trains, and evaluates on the test set.
inline RunOutcome run_ablation(Variant variant, const TrainConfig& base, const SplitResult& splits, const Corpus& corpus,
                               std::shared_ptr<const Encoders> encoders, InputCache* cache = nullptr) {
  TrainConfig cfg = base;
  cfg.variant = variant;
  cfg = cfg.forced();
  RunOutcome out;
  out.splits = splits;
  out.trained = train(cfg, splits, corpus, encoders, cache);
  const auto test_set = select_articles(corpus, splits.test);
  std::optional<InputCache> own;
  if (!cache || cache->with_image() != cfg.uses_image()) own.emplace(encoders, cfg.uses_image());
  out.metrics = evaluate(*out.trained.model, test_set, own ? *own : *cache);
  return out;
}

struct AggregateReport {
  Variant variant = Variant::BTIC;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsReport> runs;
  std::vector<std::pair<std::string, Summary>> summary;  // metric_values order
  std::optional<Variant> compared_to;
  std::optional<double> p_value;  // paired t-test on macro F1

  std::vector<double> values(const std::string& metric) const {
    std::vector<double> v;
    for (const auto& r : runs)
      for (const auto& [name, x] : metric_values(r))
        if (name == metric) v.push_back(x);
    return v;
  }
};

inline AggregateReport aggregate(Variant variant, const std::vector<MetricsReport>& runs) {
  if (runs.empty()) throw InputError("aggregate: no runs");
  AggregateReport agg;
  agg.variant = variant;
  agg.runs = runs;
  for (const auto& r : runs) agg.seeds.push_back(r.seed);
  for (const auto& [name, _] : metric_values(runs.front())) agg.summary.emplace_back(name, summarize(agg.values(name)));
  return agg;
}

// Compares macro F1 of two run sets with a paired t-test.
inline void compare(AggregateReport& agg, const AggregateReport& other) {
  agg.compared_to = other.variant;
  agg.p_value = paired_t_test(agg.values("macro_f1"), other.values("macro_f1"));
}

// Repeats train + evaluate with seeds base_seed + i. Random splits are
// re-drawn with the same derived seed; chronological splits are fixed.
inline std::vector<RunOutcome> repeat_runs(const TrainConfig& cfg, const Corpus& corpus,
                                           std::shared_ptr<const Encoders> encoders, int runs,
                                           InputCache* cache = nullptr) {
  std::vector<RunOutcome> out;
  for (int i = 0; i < runs; ++i) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(i);
    spdlog::info("{} run {} / {} (seed {})", to_string(c.variant), i + 1, runs, c.seed);
    out.push_back(run_ablation(c.variant, c, make_split(c, corpus, c.seed), corpus, encoders, cache));
  }
  return out;
}

inline AggregateReport repeat_and_average(const TrainConfig& cfg, const Corpus& corpus,
                                          std::shared_ptr<const Encoders> encoders, int runs = 5,
                                          InputCache* cache = nullptr) {
  std::vector<MetricsReport> reports;
  for (auto& r : repeat_runs(cfg, corpus, encoders, runs, cache)) reports.push_back(r.metrics);
  return aggregate(cfg.variant, reports);
}

inline nlohmann::ordered_json to_json(const AggregateReport& a) {
  nlohmann::ordered_json j;
  j["variant"] = std::string(to_string(a.variant));
  j["runs"] = a.runs.size();
  j["seeds"] = a.seeds;
  auto& s = j["summary"] = nlohmann::ordered_json::object();
  for (const auto& [name, sm] : a.summary) s[name] = {{"mean", sm.mean}, {"std", sm.std}};
  j["compared_to"] = a.compared_to ? nlohmann::ordered_json(std::string(to_string(*a.compared_to)))
                                   : nlohmann::ordered_json(nullptr);
  j["p_value"] = a.p_value ? nlohmann::ordered_json(*a.p_value) : nlohmann::ordered_json(nullptr);
  return j;
}

}  // namespace btic
