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

// Multilingual corpus handling: tab-separated manifests, alpha-smoothed
// multinomial language sampling, crop/pad batching, and a deterministic
// synthetic corpus generator whose languages are separable in mel space.

#ifndef MELVEC_DATA_HPP_
#define MELVEC_DATA_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "melvec/audio.hpp"
#include "melvec/common.hpp"
#include "melvec/features.hpp"

namespace melvec {

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string path;
  std::string language;
  double duration_seconds = 0.0;
};

/// Corpus manifest. Language ids are indices into `languages`, which is the
/// lexicographically sorted list of distinct codes, so id assignment is
/// stable across runs and manifest orderings.
struct Manifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> languages;
  std::vector<std::vector<std::size_t>> by_language;  // entry indices per id

  std::size_t language_id(const std::string& code) const {
    const auto it = std::lower_bound(languages.begin(), languages.end(), code);
    if (it == languages.end() || *it != code) {
      throw ConfigError(str_cat("manifest: unknown language code '", code, "'"));
    }
    return static_cast<std::size_t>(it - languages.begin());
  }

  /// Total audio hours per language id.
  std::vector<double> hours_per_language() const {
    std::vector<double> hours(languages.size(), 0.0);
    for (const auto& e : entries) {
      hours[language_id(e.language)] += e.duration_seconds / 3600.0;
    }
    return hours;
  }

  void rebuild_index() {
    std::set<std::string> codes;
    for (const auto& e : entries) codes.insert(e.language);
    languages.assign(codes.begin(), codes.end());
    by_language.assign(languages.size(), {});
    for (std::size_t i = 0; i < entries.size(); ++i) {
      by_language[language_id(entries[i].language)].push_back(i);
    }
  }

  /// Rejects unusable manifests up front so sampling never fails mid-run.
  void validate(bool check_paths = true) const {
    if (entries.empty()) {
      throw ConfigError("manifest: no entries (empty corpus)");
    }
    for (const auto& e : entries) {
      if (e.duration_seconds <= 0.0) {
        throw ConfigError(str_cat("manifest: nonpositive duration for ",
                                  e.path));
      }
      if (e.language.empty()) {
        throw ConfigError(str_cat("manifest: missing language code for ",
                                  e.path));
      }
      if (check_paths && !std::filesystem::exists(e.path)) {
        throw ConfigError(str_cat("manifest: unresolvable path ", e.path));
      }
    }
    for (std::size_t l = 0; l < languages.size(); ++l) {
      if (by_language[l].empty()) {
        throw ConfigError(str_cat("manifest: language '", languages[l],
                                  "' has no utterances"));
      }
    }
  }
};

/// Reads a `path<TAB>language<TAB>duration_seconds` manifest.
inline Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str_cat("load_manifest: cannot open ", path));
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? std::string::npos
                                                : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos) {
      throw IoError(str_cat("load_manifest: malformed line ", line_no, " in ",
                            path));
    }
    ManifestEntry e;
    e.path = line.substr(0, tab1);
    e.language = line.substr(tab1 + 1, tab2 - tab1 - 1);
    try {
      e.duration_seconds = std::stod(line.substr(tab2 + 1));
    } catch (const std::exception&) {
      throw IoError(str_cat("load_manifest: bad duration on line ", line_no,
                            " in ", path));
    }
    m.entries.push_back(std::move(e));
  }
  m.rebuild_index();
  return m;
}

inline void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError(str_cat("save_manifest: cannot open ", path));
  for (const auto& e : m.entries) {
    os << e.path << '\t' << e.language << '\t' << e.duration_seconds << '\n';
  }
  if (!os) throw IoError(str_cat("save_manifest: write failed: ", path));
}

// ---------------------------------------------------------------------------
// Alpha-smoothed multinomial language sampling
// ---------------------------------------------------------------------------

struct SamplingDistribution {
  std::vector<double> probs;
  double alpha = 1.0;
};

/// p_l = (n_l / N)^alpha, renormalized. alpha = 1 keeps exact hour
/// proportions; smaller alpha flattens toward uniform, upweighting
/// low-resource languages.
inline SamplingDistribution build_sampling_distribution(
    const std::vector<double>& hours, double alpha) {
  if (hours.empty()) {
    throw ConfigError("build_sampling_distribution: no languages");
  }
  if (!(alpha > 0.0) || alpha > 1.0) {
    throw ConfigError(str_cat("build_sampling_distribution: alpha ", alpha,
                              " outside (0, 1]"));
  }
  double total = 0.0;
  for (double h : hours) {
    if (!(h > 0.0)) {
      throw ConfigError(str_cat("build_sampling_distribution: nonpositive "
                                "hours value ", h));
    }
    total += h;
  }
  SamplingDistribution dist;
  dist.alpha = alpha;
  dist.probs.resize(hours.size());
  double norm = 0.0;
  for (std::size_t l = 0; l < hours.size(); ++l) {
    dist.probs[l] = std::pow(hours[l] / total, alpha);
    norm += dist.probs[l];
  }
  for (auto& p : dist.probs) p /= norm;
  return dist;
}

/// One categorical draw from the distribution.
inline std::size_t sample_language(const SamplingDistribution& dist, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t l = 0; l < dist.probs.size(); ++l) {
    acc += dist.probs[l];
    if (u < acc) return l;
  }
  return dist.probs.size() - 1;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

/// A batch of cropped utterances. Every slot is exactly `crop_frames` rows;
/// utterances shorter than the crop are zero-padded past `valid_frames`.
struct Batch {
  std::size_t crop_frames = 0;
  std::vector<LogMelFrames> features;     // each crop_frames x F
  std::vector<std::size_t> valid_frames;  // real rows per slot
  std::vector<std::size_t> language_ids;
  std::vector<std::string> utterance_ids;

  std::size_t size() const { return features.size(); }
};

/// Source of per-utterance features, so training can cache extraction.
using FeatureProvider = std::function<const LogMelFrames&(const std::string&)>;

/// Loads WAV and extracts features on every call (no caching).
inline FeatureProvider direct_feature_provider(const FeatureConfig& cfg) {
  auto holder = std::make_shared<LogMelFrames>();
  return [cfg, holder](const std::string& path) -> const LogMelFrames& {
    *holder = extract_logmel(read_wav(path), cfg);
    return *holder;
  };
}

/// Crops a uniformly positioned window of `crop_frames` rows, normalizing
/// with `stats` when given. Shorter utterances keep all rows and are
/// zero-padded; padded rows stay exactly zero.
inline LogMelFrames crop_utterance(const LogMelFrames& frames,
                                   std::size_t crop_frames, Rng& rng,
                                   const FeatureStats* stats,
                                   std::size_t* valid_out) {
  LogMelFrames out;
  out.num_frames = crop_frames;
  out.num_bins = frames.num_bins;
  out.frame_length_ms = frames.frame_length_ms;
  out.frame_shift_ms = frames.frame_shift_ms;
  out.values.assign(crop_frames * frames.num_bins, 0.0f);
  const std::size_t valid = std::min(frames.num_frames, crop_frames);
  std::size_t start = 0;
  if (frames.num_frames > crop_frames) {
    start = static_cast<std::size_t>(
        rng.uniform_int(frames.num_frames - crop_frames + 1));
  }
  for (std::size_t t = 0; t < valid; ++t) {
    const float* src = frames.row(start + t);
    float* dst = out.values.data() + t * out.num_bins;
    if (stats) {
      for (std::size_t j = 0; j < out.num_bins; ++j) {
        dst[j] = (src[j] - stats->mean[j]) / stats->std_dev[j];
      }
    } else {
      std::copy_n(src, out.num_bins, dst);
    }
  }
  if (valid_out) *valid_out = valid;
  return out;
}

/// Fills each slot independently: language ~ dist, utterance uniform within
/// the language, crop position uniform over valid starts.
inline Batch sample_batch(const Manifest& manifest,
                          const SamplingDistribution& dist,
                          std::size_t batch_size, std::size_t crop_frames,
                          Rng& rng, const FeatureProvider& features,
                          const FeatureStats* stats = nullptr) {
  if (crop_frames == 0) throw ConfigError("sample_batch: crop_frames must be >= 1");
  if (dist.probs.size() != manifest.languages.size()) {
    throw ConfigError(str_cat("sample_batch: distribution over ",
                              dist.probs.size(), " languages vs manifest with ",
                              manifest.languages.size()));
  }
  Batch batch;
  batch.crop_frames = crop_frames;
  for (std::size_t slot = 0; slot < batch_size; ++slot) {
    const std::size_t lang = sample_language(dist, rng);
    const auto& bucket = manifest.by_language[lang];
    const std::size_t pick = rng.uniform_int(bucket.size());
    const auto& entry = manifest.entries[bucket[pick]];
    std::size_t valid = 0;
    batch.features.push_back(
        crop_utterance(features(entry.path), crop_frames, rng, stats, &valid));
    batch.valid_frames.push_back(valid);
    batch.language_ids.push_back(lang);
    batch.utterance_ids.push_back(entry.path);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

/// Recipe for a deterministic synthetic multilingual corpus. Each language
/// owns a disjoint set of tone frequencies plus a distinct spectral tilt on
/// the noise bed, which makes the languages separable in mel space while
/// per-utterance tone gating keeps within-language variance realistic.
struct SyntheticCorpusSpec {
  std::size_t num_languages = 5;
  std::size_t utterances_per_language = 50;
  double duration_seconds = 8.0;
  std::uint64_t seed = 1;
  int sample_rate = 16000;
  std::size_t tones_per_language = 3;
  double tone_gain = 0.06;
  double noise_gain = 0.12;
  double gate_prob = 0.55;        // chance a tone sounds in a 250 ms block
  double distractor_gain = 0.25;  // random per-utterance tones, no label info
  std::size_t distractor_tones = 6;
  double band_lo_hz = 300.0;
  double band_hi_hz = 4000.0;

  void validate() const {
    if (num_languages == 0) {
      throw ConfigError("synthetic corpus: num_languages must be >= 1");
    }
    if (num_languages > 40) {
      throw ConfigError("synthetic corpus: at most 40 languages supported");
    }
    if (!(duration_seconds > 0.0)) {
      throw ConfigError("synthetic corpus: duration must be positive");
    }
    if (tones_per_language == 0) {
      throw ConfigError("synthetic corpus: tones_per_language must be >= 1");
    }
    if (sample_rate <= 0) {
      throw ConfigError("synthetic corpus: sample rate must be positive");
    }
    if (!(gate_prob > 0.0) || gate_prob > 1.0) {
      throw ConfigError("synthetic corpus: gate_prob outside (0, 1]");
    }
    if (!(band_lo_hz > 0.0) || band_hi_hz <= band_lo_hz ||
        band_hi_hz >= sample_rate / 2.0) {
      throw ConfigError("synthetic corpus: tone band must sit below Nyquist");
    }
  }

  /// Tone frequency k of language l. Languages are interleaved across the
  /// tone band; all frequencies are distinct and below Nyquist.
  double tone_hz(std::size_t language, std::size_t tone) const {
    const std::size_t total = num_languages * tones_per_language;
    const double step = (band_hi_hz - band_lo_hz) / static_cast<double>(total);
    return band_lo_hz +
           step * (static_cast<double>(tone * num_languages + language) + 0.5);
  }

  /// One-pole lowpass coefficient of the language's noise bed. The range is
  /// deliberately narrow: the tilt is a secondary cue next to the tone sets.
  double noise_tilt(std::size_t language) const {
    return 0.45 + 0.2 * static_cast<double>(language) /
                      static_cast<double>(std::max<std::size_t>(1, num_languages - 1));
  }

  std::string language_code(std::size_t language) const {
    std::string idx = std::to_string(language);
    if (idx.size() < 2) idx.insert(0, "0");
    return "syn" + idx;
  }
};

/// Synthesizes one utterance. Language tones and per-utterance distractor
/// tones gate on and off per 250 ms block with random per-block amplitude;
/// the noise bed is white noise through the language's one-pole tilt filter.
inline std::vector<float> synthesize_utterance(const SyntheticCorpusSpec& spec,
                                               std::size_t language, Rng& rng) {
  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
  const std::size_t n = static_cast<std::size_t>(
      std::lround(spec.duration_seconds * spec.sample_rate));
  const std::size_t block = static_cast<std::size_t>(spec.sample_rate / 4);
  const std::size_t num_blocks = (n + block - 1) / block;
  std::vector<double> mix(n, 0.0);

  const auto add_tone = [&](double hz, double gain) {
    const double phase = rng.uniform(0.0, kTwoPi);
    std::vector<double> block_amp(num_blocks);
    for (auto& a : block_amp) {
      a = rng.uniform() < spec.gate_prob ? rng.uniform(0.6, 1.0) : 0.0;
    }
    const double w = kTwoPi * hz / spec.sample_rate;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t b = i / block;
      if (block_amp[b] == 0.0) continue;
      // Raised-cosine envelope inside each block avoids gating clicks.
      const double pos =
          static_cast<double>(i - b * block) / static_cast<double>(block);
      const double env = 0.5 - 0.5 * std::cos(kTwoPi * pos);
      mix[i] += gain * block_amp[b] * env * std::sin(w * double(i) + phase);
    }
  };

  for (std::size_t k = 0; k < spec.tones_per_language; ++k) {
    add_tone(spec.tone_hz(language, k), spec.tone_gain);
  }
  // Distractor tones carry no language information. Their frequency is
  // redrawn every block, so they never form structure that persists across
  // an utterance; they only pollute the spectrum.
  for (std::size_t k = 0; k < spec.distractor_tones; ++k) {
    for (std::size_t b = 0; b < num_blocks; ++b) {
      const double hz = rng.uniform(spec.band_lo_hz, spec.band_hi_hz);
      const double phase = rng.uniform(0.0, kTwoPi);
      if (rng.uniform() >= spec.gate_prob) continue;
      const double amp = rng.uniform(0.6, 1.0) * spec.distractor_gain;
      const double w = kTwoPi * hz / spec.sample_rate;
      const std::size_t begin = b * block;
      const std::size_t end = std::min(n, begin + block);
      for (std::size_t i = begin; i < end; ++i) {
        const double pos =
            static_cast<double>(i - begin) / static_cast<double>(block);
        const double env = 0.5 - 0.5 * std::cos(kTwoPi * pos);
        mix[i] += amp * env * std::sin(w * double(i) + phase);
      }
    }
  }

  const double tilt = spec.noise_tilt(language);
  double lp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    lp = tilt * lp + (1.0 - tilt) * rng.normal();
    mix[i] += spec.noise_gain * lp;
  }

  const double gain = rng.uniform(0.8, 1.0);
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(std::clamp(gain * mix[i], -0.999, 0.999));
  }
  return out;
}

/// Writes WAV files plus `manifest.tsv` under out_dir and returns the
/// manifest. Identical specs (including seed) produce bitwise-identical
/// files.
inline Manifest generate_synthetic_corpus(const SyntheticCorpusSpec& spec,
                                          const std::string& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError(str_cat("generate_synthetic_corpus: cannot create output "
                          "directory ", out_dir));
  }
  Rng rng(spec.seed);
  Manifest manifest;
  for (std::size_t l = 0; l < spec.num_languages; ++l) {
    const std::string code = spec.language_code(l);
    const std::filesystem::path lang_dir =
        std::filesystem::path(out_dir) / code;
    std::filesystem::create_directories(lang_dir, ec);
    if (ec) {
      throw IoError(str_cat("generate_synthetic_corpus: cannot create ",
                            lang_dir.string()));
    }
    for (std::size_t u = 0; u < spec.utterances_per_language; ++u) {
      std::string name = std::to_string(u);
      while (name.size() < 4) name.insert(0, "0");
      const std::string path = (lang_dir / ("utt" + name + ".wav")).string();
      write_wav(path, synthesize_utterance(spec, l, rng), spec.sample_rate);
      manifest.entries.push_back({path, code, spec.duration_seconds});
    }
  }
  manifest.rebuild_index();
  save_manifest(manifest,
                (std::filesystem::path(out_dir) / "manifest.tsv").string());
  return manifest;
}

// ---------------------------------------------------------------------------
// Label-budget subsampling and held-out splits
// ---------------------------------------------------------------------------

struct SubsampleResult {
  Manifest manifest;
  std::vector<std::string> exhausted_languages;  // budget exceeded supply
};

/// Keeps utterances per language (seeded shuffle order) until the cumulative
/// duration reaches `minutes`; languages with less material keep everything
/// and are reported in `exhausted_languages`.
inline SubsampleResult subsample_minutes_per_language(const Manifest& manifest,
                                                      double minutes,
                                                      std::uint64_t seed) {
  if (!(minutes > 0.0)) {
    throw ConfigError("subsample: minutes per language must be positive");
  }
  Rng rng(seed);
  SubsampleResult result;
  for (std::size_t l = 0; l < manifest.languages.size(); ++l) {
    std::vector<std::size_t> order = manifest.by_language[l];
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    }
    const double budget_seconds = minutes * 60.0;
    double used = 0.0;
    bool exhausted = true;
    for (const auto idx : order) {
      if (used >= budget_seconds) {
        exhausted = false;
        break;
      }
      result.manifest.entries.push_back(manifest.entries[idx]);
      used += manifest.entries[idx].duration_seconds;
    }
    if (exhausted) {
      result.exhausted_languages.push_back(manifest.languages[l]);
    }
  }
  result.manifest.rebuild_index();
  return result;
}

struct ManifestSplit {
  Manifest train;
  Manifest heldout;
};

/// Deterministic per-language split; ceil(fraction * n) utterances (never
/// all of them) go to the held-out side.
inline ManifestSplit split_manifest(const Manifest& manifest, double fraction,
                                    std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction >= 1.0) {
    throw ConfigError(str_cat("split_manifest: fraction ", fraction,
                              " outside (0, 1)"));
  }
  Rng rng(seed);
  ManifestSplit split;
  for (std::size_t l = 0; l < manifest.languages.size(); ++l) {
    std::vector<std::size_t> order = manifest.by_language[l];
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    }
    std::size_t heldout_count = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(order.size())));
    heldout_count = std::min(heldout_count, order.size() > 1 ? order.size() - 1
                                                             : std::size_t(0));
    for (std::size_t i = 0; i < order.size(); ++i) {
      auto& dst = i < heldout_count ? split.heldout : split.train;
      dst.entries.push_back(manifest.entries[order[i]]);
    }
  }
  split.train.rebuild_index();
  split.heldout.rebuild_index();
  return split;
}

}  // namespace melvec

#endif  // MELVEC_DATA_HPP_
