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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "melvec/audio.hpp"
#include "melvec/features.hpp"

using namespace melvec;

namespace {

AudioBuffer sine(double hz, double seconds, int rate, float amp = 0.5f) {
  AudioBuffer a;
  a.sample_rate = rate;
  const std::size_t n = static_cast<std::size_t>(seconds * rate);
  a.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    a.samples[i] = amp * static_cast<float>(
                             std::sin(2.0 * 3.14159265358979 * hz * i / rate));
  }
  return a;
}

LogMelFrames make_frames(std::size_t t, std::size_t f,
                         const std::vector<float>& values) {
  LogMelFrames frames;
  frames.num_frames = t;
  frames.num_bins = f;
  frames.values = values;
  return frames;
}

}  // namespace

TEST_CASE("one second at 16 kHz yields 98 frames") {
  AudioBuffer a;
  a.sample_rate = 16000;
  a.samples.assign(16000, 0.0f);
  const auto frames = extract_logmel(a);
  // window 400, hop 160: (16000 - 400) / 160 + 1
  CHECK(frames.num_frames == 98);
  CHECK(frames.num_bins == 80);
}

TEST_CASE("digital silence maps every cell to the log floor") {
  AudioBuffer a;
  a.sample_rate = 16000;
  a.samples.assign(8000, 0.0f);
  FeatureConfig cfg;
  const auto frames = extract_logmel(a, cfg);
  const float floor_log = static_cast<float>(std::log(cfg.log_floor));
  for (float v : frames.values) CHECK(v == floor_log);
}

TEST_CASE("pure 1 kHz tone peaks in the bracketing mel bin on every frame") {
  FeatureConfig cfg;
  const auto frames = extract_logmel(sine(1000.0, 0.5, 16000), cfg);
  const auto bank = make_mel_filterbank(cfg, 512);
  for (std::size_t t = 0; t < frames.num_frames; ++t) {
    std::size_t argmax = 0;
    for (std::size_t m = 1; m < frames.num_bins; ++m) {
      if (frames.at(t, m) > frames.at(t, argmax)) argmax = m;
    }
    const double left = argmax == 0 ? 0.0 : bank.center_hz[argmax - 1];
    const double right = argmax + 1 < bank.center_hz.size()
                             ? bank.center_hz[argmax + 1]
                             : cfg.sample_rate / 2.0;
    CHECK(left <= 1000.0);
    CHECK(1000.0 <= right);
  }
}

TEST_CASE("too-short audio reports the minimum duration") {
  AudioBuffer a;
  a.sample_rate = 16000;
  a.samples.assign(100, 0.0f);
  try {
    extract_logmel(a);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("400") != std::string::npos);
  }
}

TEST_CASE("sample-rate mismatch is rejected without resampling") {
  AudioBuffer a;
  a.sample_rate = 8000;
  a.samples.assign(8000, 0.0f);
  CHECK_THROWS_AS(extract_logmel(a), ConfigError);
}

TEST_CASE("frame count follows the closed form") {
  for (std::size_t n :
       {std::size_t(400), std::size_t(401), std::size_t(559), std::size_t(560),
        std::size_t(561), std::size_t(4000), std::size_t(16000)}) {
    AudioBuffer a;
    a.sample_rate = 16000;
    a.samples.assign(n, 0.1f);
    CHECK(extract_logmel(a).num_frames == frame_count(n, 400, 160));
  }
}

TEST_CASE("no NaN or Inf for any finite input") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    AudioBuffer a;
    a.sample_rate = 16000;
    a.samples.resize(3200);
    for (auto& s : a.samples) {
      s = trial == 0 ? 0.0f : static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    const auto frames = extract_logmel(a);
    for (float v : frames.values) CHECK(std::isfinite(v));
  }
}

TEST_CASE("feature stats of a repeated constant frame") {
  const auto frames = make_frames(3, 2, {1.5f, -2.0f, 1.5f, -2.0f, 1.5f, -2.0f});
  const auto stats = compute_feature_stats({&frames});
  CHECK(stats.mean[0] == doctest::Approx(1.5f));
  CHECK(stats.mean[1] == doctest::Approx(-2.0f));
  CHECK(stats.std_dev[0] == doctest::Approx(1e-5f));  // floored
  CHECK(stats.std_dev[1] == doctest::Approx(1e-5f));
  CHECK(stats.num_frames_used == 3);
}

TEST_CASE("feature stats use the population convention") {
  const auto f0 = make_frames(1, 1, {0.0f});
  const auto f2 = make_frames(1, 1, {2.0f});
  const auto stats = compute_feature_stats({&f0, &f2});
  CHECK(stats.mean[0] == doctest::Approx(1.0f));
  CHECK(stats.std_dev[0] == doctest::Approx(1.0f));
}

TEST_CASE("feature stats reject an empty corpus sample") {
  CHECK_THROWS_AS(compute_feature_stats({}), ConfigError);
  const auto empty = make_frames(0, 0, {});
  CHECK_THROWS_AS(compute_feature_stats({&empty}), ConfigError);
}

TEST_CASE("normalize then recompute gives zero mean unit std") {
  Rng rng(6);
  std::vector<LogMelFrames> corpus;
  for (int u = 0; u < 4; ++u) {
    LogMelFrames f;
    f.num_frames = 50;
    f.num_bins = 8;
    f.values.resize(50 * 8);
    for (auto& v : f.values) {
      v = static_cast<float>(rng.normal() * 3.0 + 1.0);
    }
    corpus.push_back(std::move(f));
  }
  std::vector<const LogMelFrames*> ptrs;
  for (const auto& f : corpus) ptrs.push_back(&f);
  const auto stats = compute_feature_stats(ptrs);

  std::vector<LogMelFrames> normalized;
  for (const auto& f : corpus) normalized.push_back(normalize(f, stats));
  std::vector<const LogMelFrames*> nptrs;
  for (const auto& f : normalized) nptrs.push_back(&f);
  const auto renorm = compute_feature_stats(nptrs);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(std::abs(renorm.mean[j]) < 1e-5);
    CHECK(std::abs(renorm.std_dev[j] - 1.0f) < 1e-4);
  }
}

TEST_CASE("normalize fixed points and round trip") {
  const auto frames = make_frames(2, 2, {1.0f, 2.0f, 3.0f, 4.0f});

  FeatureStats identity;
  identity.mean = {0.0f, 0.0f};
  identity.std_dev = {1.0f, 1.0f};
  const auto same = normalize(frames, identity);
  CHECK(same.values == frames.values);

  FeatureStats stats;
  stats.mean = {2.0f, 3.0f};
  stats.std_dev = {0.5f, 2.0f};
  const auto mean_frames = make_frames(1, 2, {2.0f, 3.0f});
  const auto zeros = normalize(mean_frames, stats);
  CHECK(zeros.values[0] == 0.0f);
  CHECK(zeros.values[1] == 0.0f);

  const auto round = denormalize(normalize(frames, stats), stats);
  for (std::size_t i = 0; i < frames.values.size(); ++i) {
    CHECK(std::abs(round.values[i] - frames.values[i]) < 1e-5f);
  }

  FeatureStats wrong;
  wrong.mean = {0.0f};
  wrong.std_dev = {1.0f};
  CHECK_THROWS_AS(normalize(frames, wrong), ShapeError);
}

TEST_CASE("wav round trip preserves samples to quantization accuracy") {
  const auto tmp = std::filesystem::temp_directory_path() / "melvec_wav_test.wav";
  const auto buf = sine(440.0, 0.1, 16000, 0.8f);
  write_wav(tmp.string(), buf.samples, 16000);
  const auto back = read_wav(tmp.string());
  REQUIRE(back.sample_rate == 16000);
  REQUIRE(back.samples.size() == buf.samples.size());
  for (std::size_t i = 0; i < buf.samples.size(); ++i) {
    CHECK(std::abs(back.samples[i] - buf.samples[i]) < 1.0f / 16384.0f);
  }
  std::filesystem::remove(tmp);
}

TEST_CASE("feature record round trip") {
  const auto tmp = std::filesystem::temp_directory_path() / "melvec_feat_test.bin";
  const auto frames = make_frames(3, 2, {0.5f, -1.0f, 2.0f, 0.0f, -3.5f, 1.25f});
  write_feature_record(tmp.string(), frames);
  const auto back = read_feature_record(tmp.string());
  CHECK(back.num_frames == 3);
  CHECK(back.num_bins == 2);
  CHECK(back.values == frames.values);
  std::filesystem::remove(tmp);
}
