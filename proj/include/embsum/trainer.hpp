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

// Training loop (NCE + λ·summarization loss) and impression evaluation.

#ifndef EMBSUM_TRAINER_HPP_
#define EMBSUM_TRAINER_HPP_

#include <algorithm>
#include <chrono>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "embsum/metrics.hpp"
#include "embsum/model.hpp"
#include "embsum/optim.hpp"
#include "json.hpp"

namespace embsum {

struct TrainConfig {
  double lr = 5e-4;
  // Unset: 128, or 32 when the epoch has fewer than 5000 instances.
  std::optional<std::size_t> batch_size;
  std::size_t epochs = 10;
  double lambda = 0.05;
  std::size_t neg_ratio = 4;
  std::uint64_t seed = 1;
  double clip_norm = 1.0;
  std::string optimizer = "adam";  // adam | sgd

  void validate() const {
    if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    if (neg_ratio == 0) throw std::invalid_argument("negative ratio must be >= 1");
    if (batch_size && *batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (optimizer != "adam" && optimizer != "sgd") throw std::invalid_argument("unknown optimizer " + optimizer);
  }

  std::size_t resolved_batch_size(std::size_t instances) const {
    if (batch_size) return *batch_size;
    return instances < 5000 ? 32 : 128;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},         {"batch_size", nullptr},      {"epochs", c.epochs},
       {"lambda", c.lambda}, {"neg_ratio", c.neg_ratio},   {"seed", c.seed},
       {"clip_norm", c.clip_norm}, {"optimizer", c.optimizer}};
  if (c.batch_size) j["batch_size"] = *c.batch_size;
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig def;
  c.lr = j.value("lr", def.lr);
  c.batch_size.reset();
  if (j.contains("batch_size") && !j.at("batch_size").is_null()) {
    c.batch_size = j.at("batch_size").get<std::size_t>();
  }
  c.epochs = j.value("epochs", def.epochs);
  c.lambda = j.value("lambda", def.lambda);
  c.neg_ratio = j.value("neg_ratio", def.neg_ratio);
  c.seed = j.value("seed", def.seed);
  c.clip_norm = j.value("clip_norm", def.clip_norm);
  c.optimizer = j.value("optimizer", def.optimizer);
}

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Loss on a group of instances

struct BatchLoss {
  Tensor loss;  // mean over instances of nce + λ·sum
  double nce = 0.0;
  double sum = 0.0;  // mean L_sum over users that have one
  std::size_t instances = 0;
};

/// Total loss of the given instances, sharing each user's tower and each
/// candidate's encoding across the group. Mathematically identical to
/// averaging the per-instance losses.
inline BatchLoss batch_loss(const EmbSumModel& model, const Dataset& ds,
                            const std::vector<TrainInstance>& instances, double lambda) {
  std::map<std::string, std::vector<const TrainInstance*>> by_user;
  for (const auto& inst : instances) by_user[inst.user_id].push_back(&inst);
  std::unordered_map<std::string, Tensor> cand_cache;
  auto candidate = [&](const std::string& id) -> const Tensor& {
    auto it = cand_cache.find(id);
    if (it != cand_cache.end()) return it->second;
    return cand_cache.emplace(id, model.encode_candidate(ds.item_tokens.at(id))).first->second;
  };
  const bool use_sum = !model.config().ablations.no_sum_loss;
  std::vector<Tensor> terms;
  BatchLoss out;
  std::size_t sum_users = 0;
  for (const auto& [user_id, insts] : by_user) {
    const UserData& u = ds.users.at(user_id);
    UserEncoding enc = model.encode_user(u, model.train_mode());
    for (const TrainInstance* inst : insts) {
      std::vector<Tensor> scores;
      scores.push_back(reshape(model.score(enc.upe, candidate(inst->positive)).s, {1, 1}));
      for (const auto& neg : inst->negatives)
        scores.push_back(reshape(model.score(enc.upe, candidate(neg)).s, {1, 1}));
      Tensor nce = nce_loss(concat_rows(scores), 0);
      out.nce += nce.item();
      terms.push_back(nce);
    }
    if (use_sum && enc.sum_loss.defined()) {
      out.sum += enc.sum_loss.item();
      ++sum_users;
      // Each instance carries λ·L_sum of its user.
      terms.push_back(scale(enc.sum_loss, lambda * static_cast<double>(insts.size())));
    }
  }
  out.instances = instances.size();
  const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(1, out.instances));
  out.loss = scale(add_all(terms), inv);
  out.nce *= inv;
  if (sum_users) out.sum /= static_cast<double>(sum_users);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  MetricsReport metrics;
  std::vector<ImpressionResult> per_impression;
  std::map<std::string, std::vector<std::size_t>> generated;  // user → greedy summary ids
};

/// Scores every candidate of every impression with frozen parameters.
inline EvalResult evaluate(const EmbSumModel& model, const Dataset& ds,
                           const std::vector<Impression>& impressions,
                           std::optional<GlobalMode> mode = std::nullopt) {
  NoGradGuard ng;
  const GlobalMode gm = mode.value_or(model.eval_mode());
  std::map<std::string, Tensor> upe;
  std::unordered_map<std::string, Tensor> cpe;
  EvalResult res;
  for (const auto& imp : impressions) {
    auto uit = upe.find(imp.user_id);
    if (uit == upe.end()) {
      UserEncoding enc = model.encode_user(ds.users.at(imp.user_id), gm);
      res.generated[imp.user_id] = enc.generated;
      uit = upe.emplace(imp.user_id, enc.upe).first;
    }
    ImpressionResult r;
    for (const auto& [id, label] : imp.candidates) {
      auto cit = cpe.find(id);
      if (cit == cpe.end()) cit = cpe.emplace(id, model.encode_candidate(ds.item_tokens.at(id))).first;
      r.scores.push_back(model.score(uit->second, cit->second).s.item());
      r.labels.push_back(label);
    }
    res.per_impression.push_back(std::move(r));
  }
  res.metrics = aggregate(res.per_impression);
  return res;
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0, train_nce = 0.0, train_sum = 0.0;
  std::optional<MetricsReport> dev;
  double seconds = 0.0;
};

inline nlohmann::json epoch_json(const EpochLog& e) {
  nlohmann::json j = {{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_nce", e.train_nce},
                      {"train_sum", e.train_sum},
                      {"seconds", e.seconds}};
  if (e.dev) {
    j["dev_auc"] = e.dev->auc;
    j["dev_mrr"] = e.dev->mrr;
    j["dev_ndcg5"] = e.dev->ndcg5;
    j["dev_ndcg10"] = e.dev->ndcg10;
  } else {
    j["dev_auc"] = nullptr;
    j["dev_mrr"] = nullptr;
    j["dev_ndcg5"] = nullptr;
    j["dev_ndcg10"] = nullptr;
  }
  return j;
}

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_dev_auc = -1.0;
  std::vector<double> step_losses;
};

/// Batches are formed from whole users (all of a user's sampled instances
/// land in the same batch) so each user tower is built once per step.
/// Parameters with the best dev AUC are restored at the end; with no dev
/// impressions the final parameters are kept.
inline TrainResult train(EmbSumModel& model, const Dataset& ds, const TrainConfig& cfg,
                         std::ostream* log = nullptr) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  Adam adam(AdamOptions{cfg.lr});
  Sgd sgd(cfg.lr);
  ParamStore& params = model.params();
  TrainResult result;
  std::map<std::string, std::vector<double>> best;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::map<std::string, std::vector<TrainInstance>> per_user;
    SamplingStats stats;
    for (const auto& imp : ds.train) {
      for (auto& inst : sample_negatives(imp, cfg.neg_ratio, rng, &stats)) {
        per_user[inst.user_id].push_back(std::move(inst));
      }
    }
    std::vector<std::string> users;
    for (const auto& [u, _] : per_user) users.push_back(u);
    std::shuffle(users.begin(), users.end(), rng);
    const std::size_t batch_size = cfg.resolved_batch_size(stats.instances);

    EpochLog log_entry;
    log_entry.epoch = epoch;
    std::size_t seen = 0;
    model.transformer().set_training(true);
    for (std::size_t i = 0; i < users.size();) {
      std::vector<TrainInstance> batch;
      while (i < users.size() && batch.size() < batch_size) {
        const auto& v = per_user[users[i++]];
        batch.insert(batch.end(), v.begin(), v.end());
      }
      params.zero_grad();
      BatchLoss bl;
      try {
        bl = batch_loss(model, ds, batch, cfg.lambda);
        bl.loss.backward();
      } catch (const NumericError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " batch " +
                              std::to_string(step) + ": " + e.what());
      }
      clip_grad_norm(params, cfg.clip_norm);
      if (cfg.optimizer == "sgd") {
        sgd.step(params);
      } else {
        adam.step(params);
      }
      ++step;
      const double w = static_cast<double>(bl.instances);
      log_entry.train_loss += bl.loss.item() * w;
      log_entry.train_nce += bl.nce * w;
      log_entry.train_sum += bl.sum * w;
      seen += bl.instances;
      result.step_losses.push_back(bl.loss.item());
    }
    model.transformer().set_training(false);
    if (seen) {
      log_entry.train_loss /= static_cast<double>(seen);
      log_entry.train_nce /= static_cast<double>(seen);
      log_entry.train_sum /= static_cast<double>(seen);
    }
    if (!ds.dev.empty()) {
      log_entry.dev = evaluate(model, ds, ds.dev).metrics;
      if (log_entry.dev->auc > result.best_dev_auc) {
        result.best_dev_auc = log_entry.dev->auc;
        result.best_epoch = epoch;
        best = params.snapshot();
      }
    }
    log_entry.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log) *log << epoch_json(log_entry).dump() << '\n' << std::flush;
    result.epochs.push_back(log_entry);
  }
  if (!best.empty()) params.restore(best);
  return result;
}

}  // namespace embsum

#endif  // EMBSUM_TRAINER_HPP_
