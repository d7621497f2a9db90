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

// Checkpoint layout (little-endian):
//   "EMBM" | u32 version | config: u32 length + UTF-8 JSON |
//   u64 tensor count | per tensor: u32 name length + UTF-8 name,
//   u32 ndim, ndim × u64 dims, numel × f64.

#ifndef EMBSUM_CHECKPOINT_HPP_
#define EMBSUM_CHECKPOINT_HPP_

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "embsum/binary_io.hpp"
#include "embsum/optim.hpp"
#include "json.hpp"

namespace embsum {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::json config;
  std::map<std::string, CheckpointTensor> tensors;
};

inline void write_checkpoint(std::ostream& os, const nlohmann::json& config,
                             const ParamStore& params) {
  binio::put_magic(os, "EMBM");
  binio::put_u32(os, kCheckpointVersion);
  binio::put_string(os, config.dump());
  binio::put_u64(os, params.items().size());
  for (const auto& [name, t] : params.items()) {
    binio::put_string(os, name);
    binio::put_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t dim : t.shape()) binio::put_u64(os, dim);
    for (double v : t.data()) binio::put_f64(os, v);
  }
  if (!os) throw FormatError("checkpoint write failed");
}

inline void save_checkpoint(const std::string& path, const nlohmann::json& config,
                            const ParamStore& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_checkpoint(os, config, params);
}

inline Checkpoint read_checkpoint(std::istream& is) {
  binio::expect_magic(is, "EMBM");
  const std::uint32_t version = binio::get_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config = nlohmann::json::parse(binio::get_string(is));
  const std::uint64_t count = binio::get_u64(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = binio::get_string(is, 4096);
    CheckpointTensor t;
    const std::uint32_t ndim = binio::get_u32(is);
    if (ndim > 8) throw FormatError("tensor " + name + " has implausible rank");
    for (std::uint32_t k = 0; k < ndim; ++k) t.shape.push_back(binio::get_u64(is));
    const std::size_t n = shape_numel(t.shape);
    if (n > (std::size_t{1} << 32)) throw FormatError("tensor " + name + " too large");
    t.data.resize(n);
    for (auto& v : t.data) v = binio::get_f64(is);
    if (!ck.tensors.emplace(std::move(name), std::move(t)).second) {
      throw FormatError("duplicate tensor in checkpoint");
    }
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

/// Copies checkpoint tensors into an already-constructed parameter set.
/// Every parameter must be present with a matching shape.
inline void load_params(const Checkpoint& ck, ParamStore& params) {
  for (auto& [name, t] : params.items()) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw FormatError("checkpoint missing tensor " + name);
    if (it->second.shape != t.shape()) {
      throw FormatError("checkpoint tensor " + name + " has shape " +
                        shape_str(it->second.shape) + ", model expects " +
                        shape_str(t.shape()));
    }
    std::copy(it->second.data.begin(), it->second.data.end(), t.mutable_data().begin());
  }
  if (ck.tensors.size() != params.items().size()) {
    throw FormatError("checkpoint has tensors the model does not define");
  }
}

}  // namespace embsum

#endif  // EMBSUM_CHECKPOINT_HPP_
