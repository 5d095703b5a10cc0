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

// Log-mel spectrogram front end: Hann-windowed power spectra through a
// triangular mel filterbank, with corpus-level mean/variance normalization.

#ifndef MELVEC_FEATURES_HPP_
#define MELVEC_FEATURES_HPP_

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "melvec/audio.hpp"
#include "melvec/binio.hpp"
#include "melvec/common.hpp"

namespace melvec {

struct FeatureConfig {
  int sample_rate = 16000;
  int num_mel_bins = 80;
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  double log_floor = 1e-10;  // applied to power before the log

  std::size_t window_samples() const {
    return static_cast<std::size_t>(
        std::lround(sample_rate * frame_length_ms / 1000.0));
  }
  std::size_t hop_samples() const {
    return static_cast<std::size_t>(
        std::lround(sample_rate * frame_shift_ms / 1000.0));
  }
};

/// Per-utterance T x F feature matrix, row-major.
struct LogMelFrames {
  std::vector<float> values;
  std::size_t num_frames = 0;
  std::size_t num_bins = 0;
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;

  float at(std::size_t t, std::size_t f) const {
    return values[t * num_bins + f];
  }
  float& at(std::size_t t, std::size_t f) { return values[t * num_bins + f]; }
  const float* row(std::size_t t) const { return values.data() + t * num_bins; }
};

struct FeatureStats {
  std::vector<float> mean;
  std::vector<float> std_dev;  // floored strictly positive
  std::size_t num_frames_used = 0;
};

namespace detail {

// In-place iterative radix-2 FFT; n must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline double hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

}  // namespace detail

/// Triangular mel filterbank over FFT power-spectrum bins, spanning
/// 0..Nyquist with peak weight 1 per filter.
struct MelFilterbank {
  std::size_t num_filters = 0;
  std::size_t num_fft_bins = 0;          // n_fft/2 + 1
  std::vector<double> center_hz;         // per filter
  std::vector<double> weights;           // [num_filters x num_fft_bins]

  double weight(std::size_t filter, std::size_t bin) const {
    return weights[filter * num_fft_bins + bin];
  }
};

inline MelFilterbank make_mel_filterbank(const FeatureConfig& cfg,
                                         std::size_t n_fft) {
  const std::size_t bins = n_fft / 2 + 1;
  const std::size_t f = static_cast<std::size_t>(cfg.num_mel_bins);
  const double nyquist = cfg.sample_rate / 2.0;
  const double mel_lo = detail::hz_to_mel(0.0);
  const double mel_hi = detail::hz_to_mel(nyquist);
  std::vector<double> edges_hz(f + 2);
  for (std::size_t i = 0; i < f + 2; ++i) {
    edges_hz[i] = detail::mel_to_hz(
        mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                     static_cast<double>(f + 1));
  }
  MelFilterbank bank;
  bank.num_filters = f;
  bank.num_fft_bins = bins;
  bank.center_hz.assign(edges_hz.begin() + 1, edges_hz.end() - 1);
  bank.weights.assign(f * bins, 0.0);
  const double hz_per_bin = static_cast<double>(cfg.sample_rate) /
                            static_cast<double>(n_fft);
  for (std::size_t m = 0; m < f; ++m) {
    const double left = edges_hz[m], center = edges_hz[m + 1],
                 right = edges_hz[m + 2];
    for (std::size_t b = 0; b < bins; ++b) {
      const double hz = b * hz_per_bin;
      double w = 0.0;
      if (hz > left && hz < center) {
        w = (hz - left) / (center - left);
      } else if (hz >= center && hz < right) {
        w = (right - hz) / (right - center);
      }
      bank.weights[m * bins + b] = w;
    }
  }
  return bank;
}

/// Closed-form frame count for num_samples >= window.
inline std::size_t frame_count(std::size_t num_samples, std::size_t window,
                               std::size_t hop) {
  return (num_samples - window) / hop + 1;
}

/// Converts mono PCM audio to T x F log-mel frames. The log is floored, so
/// digital silence maps to log(log_floor) rather than -inf.
inline LogMelFrames extract_logmel(const AudioBuffer& audio,
                                   const FeatureConfig& cfg = {}) {
  if (audio.sample_rate != cfg.sample_rate) {
    throw ConfigError(str_cat("extract_logmel: audio sample rate ",
                              audio.sample_rate, " Hz does not match the ",
                              cfg.sample_rate,
                              " Hz configuration (no implicit resampling)"));
  }
  const std::size_t window = cfg.window_samples();
  const std::size_t hop = cfg.hop_samples();
  if (audio.samples.size() < window) {
    throw ConfigError(str_cat(
        "extract_logmel: audio too short (", audio.samples.size(),
        " samples); minimum duration is one window of ", window, " samples (",
        cfg.frame_length_ms, " ms)"));
  }
  for (float s : audio.samples) {
    if (!std::isfinite(s)) {
      throw ConfigError("extract_logmel: non-finite sample in input audio");
    }
  }

  const std::size_t n_fft = detail::next_pow2(window);
  const MelFilterbank bank = make_mel_filterbank(cfg, n_fft);
  const std::size_t frames = frame_count(audio.samples.size(), window, hop);
  const std::size_t f = static_cast<std::size_t>(cfg.num_mel_bins);

  std::vector<double> hann(window);
  for (std::size_t i = 0; i < window; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 *
                                   static_cast<double>(i) /
                                   static_cast<double>(window));
  }

  LogMelFrames out;
  out.num_frames = frames;
  out.num_bins = f;
  out.frame_length_ms = cfg.frame_length_ms;
  out.frame_shift_ms = cfg.frame_shift_ms;
  out.values.resize(frames * f);

  std::vector<std::complex<double>> buf(n_fft);
  std::vector<double> power(bank.num_fft_bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const float* src = audio.samples.data() + t * hop;
    for (std::size_t i = 0; i < window; ++i) {
      buf[i] = std::complex<double>(static_cast<double>(src[i]) * hann[i], 0.0);
    }
    std::fill(buf.begin() + window, buf.end(), std::complex<double>(0.0, 0.0));
    detail::fft_inplace(buf);
    for (std::size_t b = 0; b < bank.num_fft_bins; ++b) {
      power[b] = std::norm(buf[b]);
    }
    for (std::size_t m = 0; m < f; ++m) {
      const double* w = bank.weights.data() + m * bank.num_fft_bins;
      double acc = 0.0;
      for (std::size_t b = 0; b < bank.num_fft_bins; ++b) acc += w[b] * power[b];
      out.values[t * f + m] =
          static_cast<float>(std::log(std::max(acc, cfg.log_floor)));
    }
  }
  return out;
}

/// Per-dimension mean and standard deviation (population convention) over a
/// corpus sample; std is floored at 1e-5 so normalization never divides by
/// zero. Computed once per run and then frozen.
inline FeatureStats compute_feature_stats(
    const std::vector<const LogMelFrames*>& corpus_sample) {
  std::size_t total = 0;
  std::size_t bins = 0;
  for (const auto* frames : corpus_sample) {
    if (!frames) continue;
    total += frames->num_frames;
    if (frames->num_frames > 0) bins = frames->num_bins;
  }
  if (total == 0) {
    throw ConfigError("compute_feature_stats: no frames in corpus sample");
  }
  std::vector<double> sum(bins, 0.0), sum_sq(bins, 0.0);
  for (const auto* frames : corpus_sample) {
    if (!frames) continue;
    if (frames->num_frames > 0 && frames->num_bins != bins) {
      throw ShapeError("compute_feature_stats: inconsistent feature widths");
    }
    for (std::size_t t = 0; t < frames->num_frames; ++t) {
      const float* row = frames->row(t);
      for (std::size_t j = 0; j < bins; ++j) {
        sum[j] += row[j];
        sum_sq[j] += static_cast<double>(row[j]) * row[j];
      }
    }
  }
  FeatureStats stats;
  stats.num_frames_used = total;
  stats.mean.resize(bins);
  stats.std_dev.resize(bins);
  for (std::size_t j = 0; j < bins; ++j) {
    const double mu = sum[j] / static_cast<double>(total);
    const double var =
        std::max(0.0, sum_sq[j] / static_cast<double>(total) - mu * mu);
    stats.mean[j] = static_cast<float>(mu);
    stats.std_dev[j] = static_cast<float>(std::max(std::sqrt(var), 1e-5));
  }
  return stats;
}

/// (x - mean) / std per dimension.
inline LogMelFrames normalize(const LogMelFrames& frames,
                              const FeatureStats& stats) {
  if (frames.num_bins != stats.mean.size()) {
    throw ShapeError(str_cat("normalize: feature width ", frames.num_bins,
                             " does not match stats width ",
                             stats.mean.size()));
  }
  LogMelFrames out = frames;
  for (std::size_t t = 0; t < frames.num_frames; ++t) {
    for (std::size_t j = 0; j < frames.num_bins; ++j) {
      out.at(t, j) = (frames.at(t, j) - stats.mean[j]) / stats.std_dev[j];
    }
  }
  return out;
}

/// Inverse of normalize (used for round-trip verification).
inline LogMelFrames denormalize(const LogMelFrames& frames,
                                const FeatureStats& stats) {
  if (frames.num_bins != stats.mean.size()) {
    throw ShapeError(str_cat("denormalize: feature width ", frames.num_bins,
                             " does not match stats width ",
                             stats.mean.size()));
  }
  LogMelFrames out = frames;
  for (std::size_t t = 0; t < frames.num_frames; ++t) {
    for (std::size_t j = 0; j < frames.num_bins; ++j) {
      out.at(t, j) = frames.at(t, j) * stats.std_dev[j] + stats.mean[j];
    }
  }
  return out;
}

// Flat binary feature record for caching: header T, F as little-endian
// 32-bit ints, payload row-major 32-bit floats.

inline void write_feature_record(const std::string& path,
                                 const LogMelFrames& frames) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(str_cat("write_feature_record: cannot open ", path));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(frames.num_frames));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(frames.num_bins));
  for (float v : frames.values) binio::write_f32(os, v);
  if (!os) throw IoError(str_cat("write_feature_record: write failed: ", path));
}

inline LogMelFrames read_feature_record(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(str_cat("read_feature_record: cannot open ", path));
  LogMelFrames frames;
  frames.num_frames = binio::read_le<std::uint32_t>(is);
  frames.num_bins = binio::read_le<std::uint32_t>(is);
  frames.values.resize(frames.num_frames * frames.num_bins);
  for (auto& v : frames.values) v = binio::read_f32(is);
  return frames;
}

}  // namespace melvec

#endif  // MELVEC_FEATURES_HPP_
