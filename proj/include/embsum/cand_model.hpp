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

#ifndef EMBSUM_CAND_MODEL_HPP_
#define EMBSUM_CAND_MODEL_HPP_

#include <span>
#include <stdexcept>

#include "embsum/poly_attention.hpp"
#include "embsum/transformer.hpp"

namespace embsum {

struct CandidateEncoding {
  Tensor token_states;  // t × d
  Tensor cpe;           // n × d
  Tensor weights;       // n × t
};

/// Poly-attention over the item's encoder states; pad positions (valid == 0)
/// are excluded from both the encoder and the code attention.
inline CandidateEncoding content_poly_embedding(const Transformer& tf, const PolyAttention& layer,
                                                std::span<const std::size_t> ids,
                                                std::span<const std::uint8_t> valid = {}) {
  if (ids.empty()) throw std::invalid_argument("content_poly_embedding: empty item");
  EncoderOutput enc = tf.encode(ids, valid);
  PolyOutput p = poly_attention(enc.states, layer, enc.valid);
  return {enc.states, p.out, p.weights};
}

/// Encoder state at position 0, which must be [SOS].
inline Tensor sos_embedding(const Transformer& tf, std::span<const std::size_t> ids,
                            std::span<const std::uint8_t> valid = {}) {
  if (ids.empty() || ids.front() != kSos) {
    throw std::invalid_argument("sos_embedding: item must start with [SOS]");
  }
  return slice_rows(tf.encode(ids, valid).states, 0, 1);
}

}  // namespace embsum

#endif  // EMBSUM_CAND_MODEL_HPP_
