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

// Little-endian primitive encoding shared by checkpoints and embedding files.

#ifndef EMBSUM_BINARY_IO_HPP_
#define EMBSUM_BINARY_IO_HPP_

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace embsum {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace binio {

template <class U>
void put_uint(std::ostream& os, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  os.write(buf, sizeof(U));
}

template <class U>
U get_uint(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw FormatError("unexpected end of file");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

inline void put_u8(std::ostream& os, std::uint8_t v) { put_uint<std::uint8_t>(os, v); }
inline void put_u32(std::ostream& os, std::uint32_t v) { put_uint(os, v); }
inline void put_u64(std::ostream& os, std::uint64_t v) { put_uint(os, v); }
inline void put_f64(std::ostream& os, double v) {
  put_uint(os, std::bit_cast<std::uint64_t>(v));
}

inline std::uint8_t get_u8(std::istream& is) { return get_uint<std::uint8_t>(is); }
inline std::uint32_t get_u32(std::istream& is) { return get_uint<std::uint32_t>(is); }
inline std::uint64_t get_u64(std::istream& is) { return get_uint<std::uint64_t>(is); }
inline double get_f64(std::istream& is) {
  return std::bit_cast<double>(get_uint<std::uint64_t>(is));
}

/// u32 byte length followed by the UTF-8 bytes.
inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, std::size_t max_len = 1u << 30) {
  const std::uint32_t n = get_u32(is);
  if (n > max_len) throw FormatError("string length " + std::to_string(n) + " too large");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw FormatError("unexpected end of file in string");
  return s;
}

inline void put_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4];
  if (!is.read(buf, 4) || std::string(buf, 4) != std::string(magic, 4)) {
    throw FormatError(std::string("bad magic, expected ") + magic);
  }
}

}  // namespace binio
}  // namespace embsum

#endif  // EMBSUM_BINARY_IO_HPP_
