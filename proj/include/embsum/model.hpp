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

// The assembled recommender: one shared encoder-decoder, a user
// poly-attention layer, a candidate poly-attention layer, and the gate
// projection of the scoring head.

#ifndef EMBSUM_MODEL_HPP_
#define EMBSUM_MODEL_HPP_

#include <memory>
#include <string>

#include "embsum/cand_model.hpp"
#include "embsum/checkpoint.hpp"
#include "embsum/corpus.hpp"
#include "embsum/ctr.hpp"
#include "embsum/poly_attention.hpp"
#include "embsum/text.hpp"
#include "embsum/transformer.hpp"
#include "embsum/user_model.hpp"
#include "json.hpp"

namespace embsum {

struct Ablations {
  bool no_cpe = false;       // candidate = encoder state at [SOS]
  bool no_sessions = false;  // every history item is its own session
  bool upe_size_1 = false;   // single user code
  bool no_sum_loss = false;  // no summarization loss; [SOS]-only global vector

  bool any() const { return no_cpe || no_sessions || upe_size_1 || no_sum_loss; }
};

inline void to_json(nlohmann::json& j, const Ablations& a) {
  j = {{"no_cpe", a.no_cpe}, {"no_sessions", a.no_sessions},
       {"upe_size_1", a.upe_size_1}, {"no_sum_loss", a.no_sum_loss}};
}
inline void from_json(const nlohmann::json& j, Ablations& a) {
  a.no_cpe = j.value("no_cpe", false);
  a.no_sessions = j.value("no_sessions", false);
  a.upe_size_1 = j.value("upe_size_1", false);
  a.no_sum_loss = j.value("no_sum_loss", false);
}

struct ModelConfig {
  TransformerConfig transformer;
  std::size_t m = 32;  // user codes
  std::size_t n = 4;   // candidate codes
  std::size_t c_dim = 64;
  std::size_t max_summary_len = 64;
  GlobalMode eval_global_mode = GlobalMode::kGenerate;
  Ablations ablations;

  std::size_t user_codes() const { return ablations.upe_size_1 ? 1 : m; }
  std::size_t candidate_codes() const { return ablations.no_cpe ? 1 : n; }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"transformer", c.transformer},
       {"m", c.m},
       {"n", c.n},
       {"c_dim", c.c_dim},
       {"max_summary_len", c.max_summary_len},
       {"eval_global_mode", global_mode_name(c.eval_global_mode)},
       {"ablations", c.ablations}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig def;
  c.transformer = j.value("transformer", def.transformer);
  c.m = j.value("m", def.m);
  c.n = j.value("n", def.n);
  c.c_dim = j.value("c_dim", def.c_dim);
  c.max_summary_len = j.value("max_summary_len", def.max_summary_len);
  c.eval_global_mode = global_mode_from_name(
      j.value("eval_global_mode", std::string(global_mode_name(def.eval_global_mode))));
  c.ablations = j.value("ablations", def.ablations);
}

class EmbSumModel {
 public:
  EmbSumModel(ModelConfig cfg, Vocab vocab, std::uint64_t seed)
      : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
    cfg_.transformer.vocab_size = vocab_.size();
    const std::size_t d = cfg_.transformer.d_model;
    tf_ = std::make_unique<Transformer>(cfg_.transformer, params_, seed);
    user_poly_ = PolyAttention::create(params_, "user_poly", cfg_.user_codes(), d, cfg_.c_dim,
                                       seed + 101);
    if (!cfg_.ablations.no_cpe) {
      cand_poly_ = PolyAttention::create(params_, "cand_poly", cfg_.n, d, cfg_.c_dim, seed + 202);
    }
    std::mt19937_64 rng(seed + 303);
    w_s_ = params_.add("head.w_s", Tensor::randn({d, d}, 0.02, rng, true));
  }

  EmbSumModel(const EmbSumModel&) = delete;
  EmbSumModel& operator=(const EmbSumModel&) = delete;
  EmbSumModel(EmbSumModel&&) = default;
  EmbSumModel& operator=(EmbSumModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Transformer& transformer() const { return *tf_; }
  Transformer& transformer() { return *tf_; }
  const PolyAttention& user_poly() const { return user_poly_; }
  const PolyAttention& cand_poly() const { return cand_poly_; }
  const Tensor& w_s() const { return w_s_; }

  /// Global-vector mode used while training.
  GlobalMode train_mode() const {
    return cfg_.ablations.no_sum_loss ? GlobalMode::kSosOnly : GlobalMode::kTeacherForced;
  }
  /// Global-vector mode used for evaluation and pre-computation.
  GlobalMode eval_mode() const {
    return cfg_.ablations.no_sum_loss ? GlobalMode::kSosOnly : cfg_.eval_global_mode;
  }

  UserEncoding encode_user(const UserData& u, GlobalMode mode) const {
    if (mode == GlobalMode::kTeacherForced && u.summary_ids.empty()) mode = GlobalMode::kSosOnly;
    return user_poly_embedding(*tf_, user_poly_, u.sessions, u.summary_ids, mode,
                               cfg_.max_summary_len);
  }

  /// CPE (n×d), or the [SOS] state (1×d) under the no_cpe ablation.
  Tensor encode_candidate(std::span<const std::size_t> ids) const {
    if (cfg_.ablations.no_cpe) return sos_embedding(*tf_, ids);
    return content_poly_embedding(*tf_, cand_poly_, ids).cpe;
  }

  ScoreBreakdown score(const Tensor& upe, const Tensor& cand) const {
    return gated_score(upe, cand, w_s_);
  }

  /// extra is stored verbatim under "data" (tokenization settings, etc).
  nlohmann::json checkpoint_config(const nlohmann::json& extra = nullptr) const {
    nlohmann::json j = {{"format", "embsum-model"}, {"model", cfg_}, {"vocab", vocab_.tokens()}};
    if (!extra.is_null()) j["data"] = extra;
    return j;
  }

  void save(const std::string& path, const nlohmann::json& extra = nullptr) const {
    save_checkpoint(path, checkpoint_config(extra), params_);
  }

  static EmbSumModel from_checkpoint(const Checkpoint& ck) {
    if (ck.config.value("format", "") != "embsum-model") {
      throw FormatError("checkpoint is not an embsum model");
    }
    ModelConfig cfg = ck.config.at("model").get<ModelConfig>();
    Vocab vocab = Vocab::from_tokens(ck.config.at("vocab").get<std::vector<std::string>>());
    EmbSumModel model(cfg, std::move(vocab), 0);
    load_params(ck, model.params_);
    return model;
  }

  static EmbSumModel load(const std::string& path) { return from_checkpoint(load_checkpoint(path)); }

 private:
  ModelConfig cfg_;
  Vocab vocab_;
  ParamStore params_;
  std::unique_ptr<Transformer> tf_;
  PolyAttention user_poly_, cand_poly_;
  Tensor w_s_;
};

}  // namespace embsum

#endif  // EMBSUM_MODEL_HPP_
