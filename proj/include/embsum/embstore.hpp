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

// Stored user and item poly-embeddings, and ranking from them without the
// encoder.
//
// File layout (little-endian):
//   "EMBS" | u32 version | u8 kind (0 = CPE, 1 = UPE) | u32 num_codes | u32 d
//   | u64 count | count × (u32 id length, id bytes, num_codes·d f64)

#ifndef EMBSUM_EMBSTORE_HPP_
#define EMBSUM_EMBSTORE_HPP_

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "embsum/binary_io.hpp"
#include "embsum/checkpoint.hpp"
#include "embsum/corpus.hpp"
#include "embsum/ctr.hpp"
#include "embsum/model.hpp"

namespace embsum {

inline constexpr std::uint32_t kEmbeddingFileVersion = 1;

enum class EmbeddingKind : std::uint8_t { kCpe = 0, kUpe = 1 };

class UnknownIdError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class EmbeddingFile {
 public:
  EmbeddingFile(EmbeddingKind kind, std::size_t num_codes, std::size_t d)
      : kind_(kind), num_codes_(num_codes), d_(d) {
    if (num_codes == 0 || d == 0) throw DimensionError("embedding file: zero dimension");
  }

  EmbeddingKind kind() const { return kind_; }
  std::size_t num_codes() const { return num_codes_; }
  std::size_t d() const { return d_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  void add(const std::string& id, std::vector<double> values) {
    if (values.size() != num_codes_ * d_) {
      throw DimensionError("embedding file: record " + id + " has " +
                           std::to_string(values.size()) + " values, expected " +
                           std::to_string(num_codes_ * d_));
    }
    if (!index_.emplace(id, ids_.size()).second) {
      throw std::invalid_argument("embedding file: duplicate id " + id);
    }
    ids_.push_back(id);
    data_.push_back(std::move(values));
  }

  void add(const std::string& id, const Tensor& t) {
    if (t.ndim() != 2 || t.rows() != num_codes_ || t.cols() != d_) {
      throw DimensionError("embedding file: record " + id + " has shape " + shape_str(t.shape()));
    }
    add(id, std::vector<double>(t.data().begin(), t.data().end()));
  }

  bool contains(const std::string& id) const { return index_.count(id) > 0; }

  const std::vector<double>& values(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw UnknownIdError("embedding file: unknown id " + id);
    return data_[it->second];
  }

  Tensor tensor(const std::string& id) const {
    return Tensor::matrix(num_codes_, d_, values(id));
  }

  void write(std::ostream& os) const {
    binio::put_magic(os, "EMBS");
    binio::put_u32(os, kEmbeddingFileVersion);
    binio::put_u8(os, static_cast<std::uint8_t>(kind_));
    binio::put_u32(os, static_cast<std::uint32_t>(num_codes_));
    binio::put_u32(os, static_cast<std::uint32_t>(d_));
    binio::put_u64(os, ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      binio::put_string(os, ids_[i]);
      for (double v : data_[i]) binio::put_f64(os, v);
    }
    if (!os) throw FormatError("embedding file write failed");
  }

  static EmbeddingFile read(std::istream& is) {
    binio::expect_magic(is, "EMBS");
    const std::uint32_t version = binio::get_u32(is);
    if (version != kEmbeddingFileVersion) {
      throw FormatError("unsupported embedding file version " + std::to_string(version));
    }
    const std::uint8_t kind = binio::get_u8(is);
    if (kind > 1) throw FormatError("embedding file: bad kind " + std::to_string(kind));
    const std::uint32_t codes = binio::get_u32(is);
    const std::uint32_t d = binio::get_u32(is);
    if (codes == 0 || d == 0) throw FormatError("embedding file: zero dimension in header");
    EmbeddingFile f(static_cast<EmbeddingKind>(kind), codes, d);
    const std::uint64_t count = binio::get_u64(is);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::string id = binio::get_string(is, 1u << 16);
      std::vector<double> v(static_cast<std::size_t>(codes) * d);
      for (auto& x : v) x = binio::get_f64(is);
      if (f.contains(id)) throw FormatError("embedding file: duplicate id " + id);
      f.add(id, std::move(v));
    }
    if (is.peek() != std::char_traits<char>::eof()) {
      throw FormatError("embedding file: trailing bytes after " + std::to_string(count) + " records");
    }
    return f;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    write(os);
  }

  static EmbeddingFile load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open embedding file " + path);
    return read(is);
  }

 private:
  EmbeddingKind kind_;
  std::size_t num_codes_, d_;
  std::vector<std::string> ids_;
  std::vector<std::vector<double>> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// CPEs of the given items (all items of the dataset when ids is empty), in
/// sorted id order.
inline EmbeddingFile precompute_cpe(const EmbSumModel& model, const Dataset& ds,
                                    std::vector<std::string> ids = {}) {
  NoGradGuard ng;
  if (ids.empty()) {
    for (const auto& [id, _] : ds.item_tokens) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
  }
  EmbeddingFile f(EmbeddingKind::kCpe, model.config().candidate_codes(),
                  model.config().transformer.d_model);
  for (const auto& id : ids) {
    auto it = ds.item_tokens.find(id);
    if (it == ds.item_tokens.end()) throw UnknownIdError("precompute_cpe: unknown item " + id);
    f.add(id, model.encode_candidate(it->second));
  }
  return f;
}

/// UPEs in the model's evaluation mode (greedy-generated global vector unless
/// summarization is ablated).
inline EmbeddingFile precompute_upe(const EmbSumModel& model, const Dataset& ds,
                                    std::vector<std::string> ids = {}) {
  NoGradGuard ng;
  if (ids.empty()) {
    for (const auto& [id, _] : ds.users) ids.push_back(id);
  }
  EmbeddingFile f(EmbeddingKind::kUpe, model.config().user_codes(),
                  model.config().transformer.d_model);
  for (const auto& id : ids) {
    auto it = ds.users.find(id);
    if (it == ds.users.end()) throw UnknownIdError("precompute_upe: unknown user " + id);
    f.add(id, model.encode_user(it->second, model.eval_mode()).upe);
  }
  return f;
}

/// Reads only the scoring head from a checkpoint.
inline Tensor load_head(const Checkpoint& ck) {
  auto it = ck.tensors.find("head.w_s");
  if (it == ck.tensors.end()) throw FormatError("checkpoint has no head.w_s");
  const auto& t = it->second;
  if (t.shape.size() != 2 || t.shape[0] != t.shape[1]) throw FormatError("head.w_s is not square");
  return Tensor::matrix(t.shape[0], t.shape[1], t.data);
}

struct RankedItem {
  std::string id;
  double score = 0.0;
};

/// Ranks candidates for one user from stored embeddings: descending score,
/// ties by id. top_k = 0 keeps everything.
inline std::vector<RankedItem> score_offline(const EmbeddingFile& upe, const EmbeddingFile& cpe,
                                             const Tensor& w_s, const std::string& user_id,
                                             const std::vector<std::string>& candidate_ids,
                                             std::size_t top_k = 0) {
  if (upe.kind() != EmbeddingKind::kUpe) throw std::invalid_argument("score_offline: first file is not UPE");
  if (cpe.kind() != EmbeddingKind::kCpe) throw std::invalid_argument("score_offline: second file is not CPE");
  if (upe.d() != cpe.d() || w_s.rows() != upe.d()) {
    throw DimensionError("score_offline: embedding width mismatch (UPE " + std::to_string(upe.d()) +
                         ", CPE " + std::to_string(cpe.d()) + ", W_s " + std::to_string(w_s.rows()) + ")");
  }
  NoGradGuard ng;
  const Tensor a = upe.tensor(user_id);
  std::vector<RankedItem> out;
  out.reserve(candidate_ids.size());
  for (const auto& id : candidate_ids) {
    out.push_back({id, gated_score(a, cpe.tensor(id), w_s).s.item()});
  }
  std::sort(out.begin(), out.end(), [](const RankedItem& x, const RankedItem& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.id < y.id;
  });
  if (top_k && out.size() > top_k) out.resize(top_k);
  return out;
}

}  // namespace embsum

#endif  // EMBSUM_EMBSTORE_HPP_
