/* Copyright 2026 The melvec Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Little-endian binary primitives shared by the WAV, feature-record and
// checkpoint formats. Byte-wise encoding keeps the formats portable across
// host endianness.

#ifndef MELVEC_BINIO_HPP_
#define MELVEC_BINIO_HPP_

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "melvec/common.hpp"

namespace melvec::binio {

inline void write_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!os) throw IoError("binio: write failed");
}

inline void read_bytes(std::istream& is, void* data, std::size_t n) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw IntegrityError("binio: unexpected end of stream");
  }
}

template <typename U>
void write_le(std::ostream& os, U v) {
  std::array<unsigned char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  }
  write_bytes(os, buf.data(), buf.size());
}

template <typename U>
U read_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf;
  read_bytes(is, buf.data(), buf.size());
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(buf[i]) << (8 * i);
  }
  return v;
}

inline void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  write_le<std::uint32_t>(os, bits);
}

inline float read_f32(std::istream& is) {
  const std::uint32_t bits = read_le<std::uint32_t>(is);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

inline void write_i16(std::ostream& os, std::int16_t v) {
  write_le<std::uint16_t>(os, static_cast<std::uint16_t>(v));
}

inline std::int16_t read_i16(std::istream& is) {
  return static_cast<std::int16_t>(read_le<std::uint16_t>(is));
}

// CRC-32 (IEEE 802.3 polynomial), used to detect checkpoint corruption.
class Crc32 {
 public:
  void update(const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint32_t crc = ~value_;
    for (std::size_t i = 0; i < n; ++i) {
      crc ^= bytes[i];
      for (int b = 0; b < 8; ++b) {
        crc = (crc >> 1) ^ (0xEDB88320u & (~(crc & 1u) + 1u));
      }
    }
    value_ = ~crc;
  }

  std::uint32_t value() const { return value_; }

 private:
  std::uint32_t value_ = 0;
};

inline std::uint32_t crc32_of(const std::string& data) {
  Crc32 crc;
  crc.update(data.data(), data.size());
  return crc.value();
}

}  // namespace melvec::binio

#endif  // MELVEC_BINIO_HPP_
