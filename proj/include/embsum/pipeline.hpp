// Copyright 2026 The EmbSum Authors.
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

// Run configuration and the corpus → dataset → trained model path shared by
// the command line tool and the end-to-end tests.

#ifndef EMBSUM_PIPELINE_HPP_
#define EMBSUM_PIPELINE_HPP_

#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "embsum/corpus.hpp"
#include "embsum/metrics.hpp"
#include "embsum/model.hpp"
#include "embsum/trainer.hpp"
#include "json.hpp"

namespace embsum {

struct RunConfig {
  std::string data_dir;
  std::string out_dir;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  double train_fraction = 1.0;  // share of users kept (sweep)
};

// Train and data fields sit at the top level; the model has its own object.
inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = c.train;
  const nlohmann::json data = c.data;
  for (const auto& [k, v] : data.items()) j[k] = v;
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["train_fraction"] = c.train_fraction;
  j["model"] = c.model;
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  static const std::set<std::string> known = {
      "lr",        "batch_size", "epochs",      "lambda",          "neg_ratio",
      "seed",      "clip_norm",  "optimizer",   "template",        "custom_template",
      "k_history", "p_items",    "session_token_cap", "vocab_size", "data_dir",
      "out_dir",   "train_fraction", "model",      "command"};
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
  }
  RunConfig def;
  c.train = j.get<TrainConfig>();
  c.data = j.get<DataConfig>();
  c.data_dir = j.value("data_dir", def.data_dir);
  c.out_dir = j.value("out_dir", def.out_dir);
  c.train_fraction = j.value("train_fraction", def.train_fraction);
  c.model = j.value("model", def.model);
}

inline void validate(const RunConfig& c) {
  c.train.validate();
  if (!(c.train_fraction > 0.0 && c.train_fraction <= 1.0)) {
    throw std::invalid_argument("train_fraction must be in (0, 1]");
  }
  if (c.data.k_history == 0 || c.data.p_items == 0) {
    throw std::invalid_argument("k_history and p_items must be >= 1");
  }
  if (c.model.m == 0 || c.model.n == 0 || c.model.c_dim == 0) {
    throw std::invalid_argument("m, n and c_dim must be >= 1");
  }
  c.data.content_template();
  c.model.transformer.validate();
}

/// Dataset for an existing vocabulary; the no_sessions ablation puts every
/// history item in its own session.
inline Dataset make_dataset(const Corpus& corpus, const DataConfig& data, const ModelConfig& model,
                            const Vocab& vocab) {
  return prepare_dataset(corpus, data, vocab, model.transformer.max_positions,
                         model.ablations.no_sessions);
}

inline Vocab build_vocab(const Corpus& corpus, const DataConfig& data) {
  return Vocab::build(vocab_corpus(corpus, data), data.vocab_size);
}

struct TrainedRun {
  EmbSumModel model;
  Dataset dataset;
  TrainResult result;
};

/// Builds the vocabulary, initializes the model from train.seed and trains.
inline TrainedRun train_run(const RunConfig& cfg, const Corpus& corpus, std::ostream* log = nullptr) {
  validate(cfg);
  Vocab vocab = build_vocab(corpus, cfg.data);
  Dataset ds = make_dataset(corpus, cfg.data, cfg.model, vocab);
  if (ds.train.empty()) throw std::invalid_argument("no training impressions");
  EmbSumModel model(cfg.model, std::move(vocab), cfg.train.seed);
  TrainResult r = train(model, ds, cfg.train, log);
  return {std::move(model), std::move(ds), std::move(r)};
}

/// Data settings stored with a checkpoint.
inline DataConfig checkpoint_data_config(const Checkpoint& ck) {
  if (!ck.config.contains("data")) return DataConfig{};
  return ck.config.at("data").get<DataConfig>();
}

// ---------------------------------------------------------------------------
// Summary quality

struct SummaryReport {
  RougeScores mean;
  std::size_t n_users = 0;  // users with a reference summary
};

inline void to_json(nlohmann::json& j, const SummaryReport& r) {
  j = r.mean;
  j["n_users"] = r.n_users;
}

/// Mean ROUGE of generated summaries against references; users without a
/// reference are ignored.
inline std::optional<SummaryReport> summary_report(
    const Dataset& ds, const std::map<std::string, std::vector<std::size_t>>& generated) {
  SummaryReport rep;
  for (const auto& [user, ids] : generated) {
    const auto& u = ds.users.at(user);
    if (!u.summary || split_words(*u.summary).empty()) continue;
    RougeScores s = rouge(ds.vocab.detokenize(ids), *u.summary);
    rep.mean.rouge1_f += s.rouge1_f;
    rep.mean.rouge2_f += s.rouge2_f;
    rep.mean.rougeL_f += s.rougeL_f;
    ++rep.n_users;
  }
  if (rep.n_users == 0) return std::nullopt;
  const double n = static_cast<double>(rep.n_users);
  rep.mean.rouge1_f /= n;
  rep.mean.rouge2_f /= n;
  rep.mean.rougeL_f /= n;
  return rep;
}

// ---------------------------------------------------------------------------
// Hyperparameter grid

struct SweepPoint {
  double lambda;
  std::size_t n, m;
};

inline std::vector<SweepPoint> sweep_grid() {
  std::vector<SweepPoint> g;
  for (double lambda : {0.05, 0.1, 0.3})
    for (std::size_t n : {2, 4, 8})
      for (std::size_t m : {16, 32, 48}) g.push_back({lambda, n, m});
  return g;
}

struct SweepRow {
  SweepPoint point;
  MetricsReport dev;
  std::size_t best_epoch = 0;
  double seconds = 0.0;
};

}  // namespace embsum

#endif  // EMBSUM_PIPELINE_HPP_
