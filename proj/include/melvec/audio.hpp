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

// Mono PCM audio buffers and 16-bit WAV file I/O.

#ifndef MELVEC_AUDIO_HPP_
#define MELVEC_AUDIO_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "melvec/binio.hpp"
#include "melvec/common.hpp"

namespace melvec {

struct AudioBuffer {
  std::vector<float> samples;  // in [-1, 1]
  int sample_rate = 0;

  double duration_seconds() const {
    return sample_rate > 0
               ? static_cast<double>(samples.size()) / sample_rate
               : 0.0;
  }
};

/// Reads a 16-bit PCM mono WAV file. Anything else is rejected; there is no
/// implicit resampling or channel mixing.
inline AudioBuffer read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(str_cat("read_wav: cannot open ", path));

  char tag[4];
  binio::read_bytes(is, tag, 4);
  if (std::string(tag, 4) != "RIFF") {
    throw IoError(str_cat("read_wav: not a RIFF file: ", path));
  }
  binio::read_le<std::uint32_t>(is);  // overall size, unused
  binio::read_bytes(is, tag, 4);
  if (std::string(tag, 4) != "WAVE") {
    throw IoError(str_cat("read_wav: not a WAVE file: ", path));
  }

  int sample_rate = 0;
  int channels = 0;
  int bits = 0;
  bool got_fmt = false;
  AudioBuffer out;
  while (is.peek() != EOF) {
    binio::read_bytes(is, tag, 4);
    const std::uint32_t chunk_size = binio::read_le<std::uint32_t>(is);
    const std::string id(tag, 4);
    if (id == "fmt ") {
      const std::uint16_t format = binio::read_le<std::uint16_t>(is);
      channels = binio::read_le<std::uint16_t>(is);
      sample_rate = static_cast<int>(binio::read_le<std::uint32_t>(is));
      binio::read_le<std::uint32_t>(is);  // byte rate
      binio::read_le<std::uint16_t>(is);  // block align
      bits = binio::read_le<std::uint16_t>(is);
      if (chunk_size > 16) is.seekg(chunk_size - 16, std::ios::cur);
      if (format != 1) {
        throw IoError(str_cat("read_wav: only PCM supported (format ", format,
                              "): ", path));
      }
      got_fmt = true;
    } else if (id == "data") {
      if (!got_fmt) throw IoError(str_cat("read_wav: data before fmt: ", path));
      if (channels != 1) {
        throw IoError(str_cat("read_wav: expected mono, got ", channels,
                              " channels: ", path));
      }
      if (bits != 16) {
        throw IoError(str_cat("read_wav: expected 16-bit PCM, got ", bits,
                              " bits: ", path));
      }
      const std::size_t n = chunk_size / 2;
      out.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        out.samples[i] =
            static_cast<float>(binio::read_i16(is)) * (1.0f / 32768.0f);
      }
      out.sample_rate = sample_rate;
      return out;
    } else {
      // Skip unknown chunks (LIST, fact, ...), honoring word alignment.
      is.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  throw IoError(str_cat("read_wav: no data chunk in ", path));
}

/// Writes samples as 16-bit PCM mono WAV, clamping to [-1, 1].
inline void write_wav(const std::string& path, const std::vector<float>& samples,
                      int sample_rate) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(str_cat("write_wav: cannot open ", path));
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  binio::write_bytes(os, "RIFF", 4);
  binio::write_le<std::uint32_t>(os, 36 + data_bytes);
  binio::write_bytes(os, "WAVE", 4);
  binio::write_bytes(os, "fmt ", 4);
  binio::write_le<std::uint32_t>(os, 16);
  binio::write_le<std::uint16_t>(os, 1);  // PCM
  binio::write_le<std::uint16_t>(os, 1);  // mono
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(sample_rate));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(sample_rate * 2));
  binio::write_le<std::uint16_t>(os, 2);
  binio::write_le<std::uint16_t>(os, 16);
  binio::write_bytes(os, "data", 4);
  binio::write_le<std::uint32_t>(os, data_bytes);
  for (float s : samples) {
    const float clamped = std::clamp(s, -1.0f, 1.0f);
    const int v = static_cast<int>(std::lrint(clamped * 32767.0f));
    binio::write_i16(os, static_cast<std::int16_t>(std::clamp(v, -32768, 32767)));
  }
  if (!os) throw IoError(str_cat("write_wav: write failed: ", path));
}

}  // namespace melvec

#endif  // MELVEC_AUDIO_HPP_
