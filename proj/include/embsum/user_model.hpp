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

// User tower: independent session encoding, a decoder that cross-attends to
// the concatenated session states (trained to produce the interest summary),
// and poly-attention over per-item vectors plus the decoder's global vector.

#ifndef EMBSUM_USER_MODEL_HPP_
#define EMBSUM_USER_MODEL_HPP_

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "embsum/poly_attention.hpp"
#include "embsum/transformer.hpp"

namespace embsum {

/// sessions[s][i] = token ids of item i of session s; each item starts with
/// [SOS].
using Sessions = std::vector<std::vector<std::vector<std::size_t>>>;

class ColdStartError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SessionEncoding {
  Tensor content_vecs;      // k × d, encoder state at each item's [SOS]
  Tensor all_token_states;  // S × d, every session's states in order
};

/// Encodes each session on its own; no attention crosses sessions.
inline SessionEncoding encode_sessions(const Transformer& tf, const Sessions& sessions) {
  std::vector<Tensor> item_vecs, states;
  for (const auto& session : sessions) {
    if (session.empty()) continue;
    std::vector<std::size_t> ids, sos_pos;
    for (const auto& item : session) {
      if (item.empty() || item.front() != kSos) {
        throw std::invalid_argument("encode_sessions: every item must start with [SOS]");
      }
      sos_pos.push_back(ids.size());
      ids.insert(ids.end(), item.begin(), item.end());
    }
    EncoderOutput enc = tf.encode(ids);
    item_vecs.push_back(select_rows(enc.states, sos_pos));
    states.push_back(enc.states);
  }
  if (states.empty()) throw ColdStartError("encode_sessions: no non-empty session (cold-start user)");
  return {concat_rows(item_vecs), concat_rows(states)};
}

enum class GlobalMode { kTeacherForced, kGenerate, kSosOnly };

inline const char* global_mode_name(GlobalMode m) {
  switch (m) {
    case GlobalMode::kTeacherForced: return "train_teacher_forced";
    case GlobalMode::kGenerate: return "infer_generate";
    case GlobalMode::kSosOnly: return "ablation_sos_only";
  }
  return "?";
}

inline GlobalMode global_mode_from_name(const std::string& s) {
  if (s == "train_teacher_forced") return GlobalMode::kTeacherForced;
  if (s == "infer_generate") return GlobalMode::kGenerate;
  if (s == "ablation_sos_only") return GlobalMode::kSosOnly;
  throw std::invalid_argument("unknown global mode '" + s + "'");
}

struct GlobalRepresentation {
  Tensor vec;                          // 1 × d
  Tensor sum_loss;                     // scalar; only in teacher-forced mode
  std::vector<std::size_t> generated;  // greedy output (without [SOS]/[EOS])
  std::size_t position = 0;            // decoder row the vector was taken from
};

/// Mean token negative log-likelihood of y under teacher forcing: decoder
/// input [SOS]+y, targets y+[EOS]. Also returns the final decoder row.
inline std::pair<Tensor, Tensor> teacher_forced(const Transformer& tf, const Tensor& states,
                                                std::span<const std::size_t> summary) {
  if (summary.empty()) throw std::invalid_argument("summarization loss needs a non-empty summary");
  std::vector<std::size_t> input{kSos};
  input.insert(input.end(), summary.begin(), summary.end());
  std::vector<std::size_t> targets(summary.begin(), summary.end());
  targets.push_back(kEos);
  DecoderOutput out = tf.decode(input, states);
  Tensor loss = cross_entropy(out.logits, targets);
  return {loss, slice_rows(out.hidden, summary.size(), 1)};
}

inline Tensor summarization_loss(const Transformer& tf, const Tensor& all_token_states,
                                 std::span<const std::size_t> summary) {
  return teacher_forced(tf, all_token_states, summary).first;
}

/// Greedy decoding from [SOS]. [PAD] and [SOS] are never emitted. Returns
/// the hidden row of the step that emitted [EOS] or, failing that, the last
/// step.
inline GlobalRepresentation greedy_generate(const Transformer& tf, const Tensor& states,
                                            std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("greedy_generate: max_len must be >= 1");
  max_len = std::min(max_len, tf.config().max_positions);
  std::vector<std::size_t> ids{kSos};
  GlobalRepresentation g;
  const CrossCache cache = tf.cross_cache(states);
  for (std::size_t step = 0; step < max_len; ++step) {
    DecoderOutput out = tf.decode(ids, states, {}, &cache);
    const std::size_t V = out.logits.cols();
    const auto row = out.logits.data().subspan(step * V, V);
    std::size_t best = kEos;
    for (std::size_t j = 0; j < V; ++j) {
      if (j == kPad || j == kSos) continue;
      if (row[j] > row[best]) best = j;
    }
    g.vec = slice_rows(out.hidden, step, 1);
    g.position = step;
    if (best == kEos) break;
    g.generated.push_back(best);
    ids.push_back(best);
  }
  return g;
}

inline GlobalRepresentation global_representation(const Transformer& tf, const Tensor& states,
                                                  std::span<const std::size_t> summary,
                                                  GlobalMode mode, std::size_t max_summary_len = 64) {
  switch (mode) {
    case GlobalMode::kTeacherForced: {
      if (summary.empty()) throw std::invalid_argument("teacher-forced global representation needs a summary");
      auto [loss, vec] = teacher_forced(tf, states, summary);
      GlobalRepresentation g;
      g.vec = vec;
      g.sum_loss = loss;
      g.position = summary.size();
      return g;
    }
    case GlobalMode::kGenerate:
      return greedy_generate(tf, states, max_summary_len);
    case GlobalMode::kSosOnly: {
      const std::size_t sos[] = {kSos};
      GlobalRepresentation g;
      g.vec = tf.decode(sos, states).hidden;
      return g;
    }
  }
  throw std::logic_error("unreachable");
}

struct UserEncoding {
  Tensor content_vecs;
  Tensor all_token_states;
  Tensor global_vec;
  Tensor z;        // (k+1) × d
  Tensor upe;      // m × d
  Tensor weights;  // m × (k+1)
  Tensor sum_loss;
  std::vector<std::size_t> generated;
  bool cold_start = false;
};

/// Full user tower. Cold-start users (no sessions) are encoded from an empty
/// item [SOS][EOS] and use the [SOS]-only global vector as Z.
inline UserEncoding user_poly_embedding(const Transformer& tf, const PolyAttention& layer,
                                        const Sessions& sessions,
                                        std::span<const std::size_t> summary, GlobalMode mode,
                                        std::size_t max_summary_len = 64) {
  UserEncoding u;
  bool any = false;
  for (const auto& s : sessions) any = any || !s.empty();
  if (!any) {
    u.cold_start = true;
    const std::size_t empty_item[] = {kSos, kEos};
    u.all_token_states = tf.encode(empty_item).states;
    u.global_vec = global_representation(tf, u.all_token_states, {}, GlobalMode::kSosOnly).vec;
    u.z = u.global_vec;
  } else {
    SessionEncoding enc = encode_sessions(tf, sessions);
    u.content_vecs = enc.content_vecs;
    u.all_token_states = enc.all_token_states;
    GlobalRepresentation g =
        global_representation(tf, u.all_token_states, summary, mode, max_summary_len);
    u.global_vec = g.vec;
    u.sum_loss = g.sum_loss;
    u.generated = std::move(g.generated);
    u.z = concat_rows({u.content_vecs, u.global_vec});
  }
  PolyOutput p = poly_attention(u.z, layer);
  u.upe = p.out;
  u.weights = p.weights;
  return u;
}

}  // namespace embsum

#endif  // EMBSUM_USER_MODEL_HPP_
