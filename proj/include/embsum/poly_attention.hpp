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

#ifndef EMBSUM_POLY_ATTENTION_HPP_
#define EMBSUM_POLY_ATTENTION_HPP_

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "embsum/optim.hpp"
#include "embsum/tensor.hpp"

namespace embsum {

/// Learned context codes attending over the rows of an input matrix.
struct PolyAttention {
  Tensor codes;  // num_codes × c_dim
  Tensor proj;   // d × c_dim

  std::size_t num_codes() const { return codes.rows(); }

  static PolyAttention create(ParamStore& store, const std::string& prefix, std::size_t num_codes,
                              std::size_t d, std::size_t c_dim, std::uint64_t seed) {
    if (num_codes == 0 || c_dim == 0 || d == 0) {
      throw std::invalid_argument("poly attention needs num_codes, c_dim and d >= 1");
    }
    std::mt19937_64 rng(seed);
    PolyAttention p;
    p.codes = store.add(prefix + ".codes", Tensor::randn({num_codes, c_dim}, 0.02, rng, true));
    p.proj = store.add(prefix + ".proj", Tensor::randn({d, c_dim}, 0.02, rng, true));
    return p;
  }
};

struct PolyOutput {
  Tensor out;      // num_codes × d
  Tensor weights;  // num_codes × r, rows are convex weights over Z rows
};

/// For each code a: weights_a = softmax(code_a · tanh(Z·proj)ᵀ) restricted to
/// valid rows, out_a = weights_a · Z.
inline PolyOutput poly_attention(const Tensor& z, const PolyAttention& layer,
                                 std::span<const std::uint8_t> valid = {}) {
  if (z.ndim() != 2 || z.rows() == 0) throw DimensionError("poly_attention: Z must have at least one row");
  const std::size_t r = z.rows(), codes = layer.num_codes();
  Tensor keys = tanh(matmul(z, layer.proj));
  Tensor logits = matmul_nt(layer.codes, keys);
  Tensor weights;
  if (valid.empty()) {
    weights = softmax(logits);
  } else {
    if (valid.size() != r) throw DimensionError("poly_attention: mask length differs from rows");
    std::vector<std::uint8_t> keep(codes * r);
    for (std::size_t a = 0; a < codes; ++a)
      for (std::size_t i = 0; i < r; ++i) keep[a * r + i] = valid[i];
    weights = masked_softmax(logits, keep);
  }
  return {matmul(weights, z), weights};
}

}  // namespace embsum

#endif  // EMBSUM_POLY_ATTENTION_HPP_
