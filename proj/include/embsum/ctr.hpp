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

// Relevance scoring between a user poly-embedding A (m×d) and a candidate
// poly-embedding B (n×d), and the training objectives.

#ifndef EMBSUM_CTR_HPP_
#define EMBSUM_CTR_HPP_

#include <stdexcept>
#include <vector>

#include "embsum/tensor.hpp"

namespace embsum {

/// Row-major flattening of A·Bᵀ: entry a*n + b is <A_a, B_b>.
inline Tensor match_scores(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols()) {
    throw DimensionError("match_scores: embedding widths differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  return flatten(matmul_nt(a, b));
}

struct ScoreBreakdown {
  Tensor k;        // m·n matching scores
  Tensor weights;  // m·n gate distribution
  Tensor s;        // scalar relevance score
};

/// weights = softmax(flatten(A · gelu(B·W_s)ᵀ)), s = weights · K.
inline ScoreBreakdown gated_score(const Tensor& a, const Tensor& b, const Tensor& w_s) {
  Tensor k = match_scores(a, b);
  if (w_s.ndim() != 2 || w_s.rows() != b.cols() || w_s.cols() != b.cols()) {
    throw DimensionError("gated_score: W_s must be d×d, got " + shape_str(w_s.shape()));
  }
  Tensor gate_logits = flatten(matmul_nt(a, gelu(matmul(b, w_s))));
  Tensor w = softmax(gate_logits);
  return {k, w, sum(mul(w, k))};
}

/// −log softmax(scores)[pos_index]; needs at least one negative.
inline Tensor nce_loss(const Tensor& scores, std::size_t pos_index) {
  if (scores.numel() < 2) {
    throw std::invalid_argument("nce_loss: need at least one negative (R >= 1)");
  }
  if (pos_index >= scores.numel()) throw std::out_of_range("nce_loss: positive index out of range");
  const std::size_t target[] = {pos_index};
  return cross_entropy(reshape(scores, {1, scores.numel()}), target);
}

/// nce + λ·sum_loss; sum_loss may be undefined (summarization disabled).
inline Tensor total_loss(const Tensor& nce, const Tensor& sum_loss, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("total_loss: lambda must be >= 0");
  if (!sum_loss.defined()) return nce;
  return add(nce, scale(sum_loss, lambda));
}

}  // namespace embsum

#endif  // EMBSUM_CTR_HPP_
