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

// Small pre-LayerNorm encoder-decoder transformer trained from scratch.
//
// Learned absolute positions (separate tables for encoder and decoder), biased
// projections, GELU feed-forward blocks, a final LayerNorm on each stack, and
// an output projection tied to the token embedding.

#ifndef EMBSUM_TRANSFORMER_HPP_
#define EMBSUM_TRANSFORMER_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "embsum/optim.hpp"
#include "embsum/tensor.hpp"
#include "json.hpp"

namespace embsum {

// Reserved token ids.
inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kSos = 1;
inline constexpr std::size_t kEos = 2;
inline constexpr std::size_t kUnk = 3;
inline constexpr std::size_t kNumSpecial = 4;

struct TransformerConfig {
  std::size_t vocab_size = 512;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t d_ff = 64;
  std::size_t max_positions = 128;
  double dropout = 0.0;

  void validate() const {
    if (vocab_size <= kNumSpecial) throw std::invalid_argument("vocab_size must exceed the special tokens");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw std::invalid_argument("d_model must be a positive multiple of n_heads");
    }
    if (d_ff == 0 || max_positions == 0) throw std::invalid_argument("d_ff and max_positions must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
  }

  /// Closed-form trainable parameter count.
  std::size_t parameter_count() const {
    const std::size_t d = d_model;
    const std::size_t attn = 4 * d * d + 4 * d;
    const std::size_t ffn = 2 * d * d_ff + d_ff + d;
    const std::size_t ln = 2 * d;
    return vocab_size * d + 2 * max_positions * d +
           n_enc_layers * (attn + ffn + 2 * ln) +
           n_dec_layers * (2 * attn + ffn + 3 * ln) + 2 * ln;
  }
};

inline void to_json(nlohmann::json& j, const TransformerConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
       {"n_heads", c.n_heads},       {"n_enc_layers", c.n_enc_layers},
       {"n_dec_layers", c.n_dec_layers}, {"d_ff", c.d_ff},
       {"max_positions", c.max_positions}, {"dropout", c.dropout}};
}
inline void from_json(const nlohmann::json& j, TransformerConfig& c) {
  TransformerConfig def;
  c.vocab_size = j.value("vocab_size", def.vocab_size);
  c.d_model = j.value("d_model", def.d_model);
  c.n_heads = j.value("n_heads", def.n_heads);
  c.n_enc_layers = j.value("n_enc_layers", def.n_enc_layers);
  c.n_dec_layers = j.value("n_dec_layers", def.n_dec_layers);
  c.d_ff = j.value("d_ff", def.d_ff);
  c.max_positions = j.value("max_positions", def.max_positions);
  c.dropout = j.value("dropout", def.dropout);
}

struct EncoderOutput {
  Tensor states;                    // seq × d
  std::vector<std::uint8_t> valid;  // 1 for real tokens
};

struct DecoderOutput {
  Tensor hidden;  // t × d
  Tensor logits;  // t × vocab
};

struct CrossCache {
  std::vector<std::pair<Tensor, Tensor>> kv;
};

class Transformer {
 public:
  Transformer(const TransformerConfig& cfg, ParamStore& store, std::uint64_t seed,
              const std::string& prefix = "transformer.")
      : cfg_(cfg), dropout_rng_(seed ^ 0x9E3779B97F4A7C15ull) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg_.d_model;
    auto normal = [&](const std::string& name, Shape s) -> Tensor {
      return store.add(prefix + name, Tensor::randn(std::move(s), 0.02, rng, true));
    };
    auto constant = [&](const std::string& name, std::size_t n, double v) -> Tensor {
      return store.add(prefix + name, Tensor::full({n}, v, true));
    };
    auto ln = [&](const std::string& name) {
      return Norm{constant(name + ".gain", d, 1.0), constant(name + ".bias", d, 0.0)};
    };
    auto attn = [&](const std::string& name) {
      Attention a;
      a.wq = normal(name + ".wq", {d, d});
      a.bq = constant(name + ".bq", d, 0.0);
      a.wk = normal(name + ".wk", {d, d});
      a.bk = constant(name + ".bk", d, 0.0);
      a.wv = normal(name + ".wv", {d, d});
      a.bv = constant(name + ".bv", d, 0.0);
      a.wo = normal(name + ".wo", {d, d});
      a.bo = constant(name + ".bo", d, 0.0);
      return a;
    };
    auto ffn = [&](const std::string& name) {
      return FeedForward{normal(name + ".w1", {d, cfg_.d_ff}),
                         constant(name + ".b1", cfg_.d_ff, 0.0),
                         normal(name + ".w2", {cfg_.d_ff, d}),
                         constant(name + ".b2", d, 0.0)};
    };
    tok_emb_ = normal("tok_emb", {cfg_.vocab_size, d});
    enc_pos_ = normal("enc_pos", {cfg_.max_positions, d});
    dec_pos_ = normal("dec_pos", {cfg_.max_positions, d});
    for (std::size_t i = 0; i < cfg_.n_enc_layers; ++i) {
      const std::string p = "enc" + std::to_string(i);
      enc_.push_back({ln(p + ".ln1"), attn(p + ".self"), ln(p + ".ln2"), ffn(p + ".ffn")});
    }
    for (std::size_t i = 0; i < cfg_.n_dec_layers; ++i) {
      const std::string p = "dec" + std::to_string(i);
      dec_.push_back({ln(p + ".ln1"), attn(p + ".self"), ln(p + ".ln2"),
                      attn(p + ".cross"), ln(p + ".ln3"), ffn(p + ".ffn")});
    }
    enc_final_ = ln("enc_final");
    dec_final_ = ln("dec_final");
  }

  const TransformerConfig& config() const { return cfg_; }

  /// Dropout is active only in training mode (and only when rate > 0).
  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  /// Bidirectional encoding; positions with valid == 0 are never attended to.
  EncoderOutput encode(std::span<const std::size_t> ids,
                       std::span<const std::uint8_t> valid = {}) const {
    const std::size_t n = ids.size();
    if (n == 0) throw DimensionError("encode: empty sequence");
    if (n > cfg_.max_positions) {
      throw DimensionError("encode: sequence length " + std::to_string(n) +
                           " exceeds max_positions " + std::to_string(cfg_.max_positions));
    }
    check_ids(ids, "encode");
    std::vector<std::uint8_t> keep_tok(valid.begin(), valid.end());
    if (keep_tok.empty()) keep_tok.assign(n, 1);
    if (keep_tok.size() != n) throw DimensionError("encode: mask length differs from ids");

    std::vector<std::uint8_t> mask(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) mask[i * n + j] = keep_tok[j];

    Tensor x = add(embedding(tok_emb_, ids), slice_rows(enc_pos_, 0, n));
    x = drop(x);
    for (const auto& layer : enc_) {
      Tensor h = norm(x, layer.ln1);
      x = add(x, drop(attention(h, h, mask, layer.self)));
      h = norm(x, layer.ln2);
      x = add(x, drop(feed_forward(h, layer.ffn)));
    }
    return {norm(x, enc_final_), std::move(keep_tok)};
  }

  /// Cross-attention keys and values per decoder layer, for repeated decoding
  /// against the same encoder states.
  CrossCache cross_cache(const Tensor& cross_states) const {
    CrossCache c;
    for (const auto& layer : dec_) {
      c.kv.emplace_back(add_bias(matmul(cross_states, layer.cross.wk), layer.cross.bk),
                        add_bias(matmul(cross_states, layer.cross.wv), layer.cross.bv));
    }
    return c;
  }

  /// Causal decoder over dec_ids with cross-attention to cross_states.
  DecoderOutput decode(std::span<const std::size_t> dec_ids, const Tensor& cross_states,
                       std::span<const std::uint8_t> cross_valid = {},
                       const CrossCache* cache = nullptr) const {
    const std::size_t t = dec_ids.size();
    if (t == 0) throw DimensionError("decode: empty decoder input");
    if (t > cfg_.max_positions) throw DimensionError("decode: decoder input exceeds max_positions");
    if (!cross_states.defined() || cross_states.ndim() != 2 || cross_states.rows() == 0) {
      throw DimensionError("decode: cross_states must be a non-empty matrix");
    }
    if (cross_states.cols() != cfg_.d_model) throw DimensionError("decode: cross_states width mismatch");
    check_ids(dec_ids, "decode");
    const std::size_t S = cross_states.rows();
    if (cache && cache->kv.size() != dec_.size()) throw DimensionError("decode: cache layer count differs");
    std::vector<std::uint8_t> keep_cross(cross_valid.begin(), cross_valid.end());
    if (keep_cross.empty()) keep_cross.assign(S, 1);
    if (keep_cross.size() != S) throw DimensionError("decode: cross mask length differs");

    std::vector<std::uint8_t> causal(t * t), cross(t * S);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < t; ++j) causal[i * t + j] = j <= i;
      for (std::size_t j = 0; j < S; ++j) cross[i * S + j] = keep_cross[j];
    }

    Tensor x = add(embedding(tok_emb_, dec_ids), slice_rows(dec_pos_, 0, t));
    x = drop(x);
    for (const auto& layer : dec_) {
      Tensor h = norm(x, layer.ln1);
      x = add(x, drop(attention(h, h, causal, layer.self)));
      h = norm(x, layer.ln2);
      if (cache) {
        const auto& [k, v] = cache->kv[static_cast<std::size_t>(&layer - dec_.data())];
        x = add(x, drop(attend(h, k, v, cross, layer.cross)));
      } else {
        x = add(x, drop(attention(h, cross_states, cross, layer.cross)));
      }
      h = norm(x, layer.ln3);
      x = add(x, drop(feed_forward(h, layer.ffn)));
    }
    Tensor hidden = norm(x, dec_final_);
    Tensor logits = matmul_nt(hidden, tok_emb_);
    return {hidden, logits};
  }

 private:
  struct Norm {
    Tensor gain, bias;
  };
  struct Attention {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct FeedForward {
    Tensor w1, b1, w2, b2;
  };
  struct EncLayer {
    Norm ln1;
    Attention self;
    Norm ln2;
    FeedForward ffn;
  };
  struct DecLayer {
    Norm ln1;
    Attention self;
    Norm ln2;
    Attention cross;
    Norm ln3;
    FeedForward ffn;
  };

  void check_ids(std::span<const std::size_t> ids, const char* where) const {
    for (std::size_t id : ids) {
      if (id >= cfg_.vocab_size) {
        throw DimensionError(std::string(where) + ": token id " + std::to_string(id) +
                             " out of range for vocab " + std::to_string(cfg_.vocab_size));
      }
    }
  }

  static Tensor norm(const Tensor& x, const Norm& n) { return layer_norm(x, n.gain, n.bias); }

  Tensor drop(const Tensor& x) const {
    if (!training_ || cfg_.dropout <= 0.0) return x;
    return dropout(x, cfg_.dropout, dropout_rng_);
  }

  Tensor feed_forward(const Tensor& x, const FeedForward& f) const {
    Tensor h = gelu(add_bias(matmul(x, f.w1), f.b1));
    return add_bias(matmul(drop(h), f.w2), f.b2);
  }

  // keep is tq × tk, row-major.
  Tensor attention(const Tensor& q_in, const Tensor& kv_in,
                   const std::vector<std::uint8_t>& keep, const Attention& a) const {
    Tensor k = add_bias(matmul(kv_in, a.wk), a.bk);
    Tensor v = add_bias(matmul(kv_in, a.wv), a.bv);
    return attend(q_in, k, v, keep, a);
  }

  Tensor attend(const Tensor& q_in, const Tensor& k, const Tensor& v,
                const std::vector<std::uint8_t>& keep, const Attention& a) const {
    Tensor q = add_bias(matmul(q_in, a.wq), a.bq);
    return add_bias(matmul(multi_head_attention(q, k, v, cfg_.n_heads, keep), a.wo), a.bo);
  }

  TransformerConfig cfg_;
  bool training_ = false;
  mutable std::mt19937_64 dropout_rng_;
  Tensor tok_emb_, enc_pos_, dec_pos_;
  std::vector<EncLayer> enc_;
  std::vector<DecLayer> dec_;
  Norm enc_final_, dec_final_;
};

}  // namespace embsum

#endif  // EMBSUM_TRANSFORMER_HPP_
