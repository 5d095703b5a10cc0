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

#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "doctest.h"
#include "melvec/data.hpp"

using namespace melvec;

namespace {

LogMelFrames const_frames(std::size_t t, std::size_t f, float value) {
  LogMelFrames frames;
  frames.num_frames = t;
  frames.num_bins = f;
  frames.values.assign(t * f, value);
  return frames;
}

/// Feature provider over a fixed in-memory table (no files involved).
struct FakeFeatures {
  std::map<std::string, LogMelFrames> table;
  FeatureProvider provider() {
    return [this](const std::string& path) -> const LogMelFrames& {
      return table.at(path);
    };
  }
};

Manifest tiny_manifest(const std::vector<std::pair<std::string, std::string>>&
                           path_lang) {
  Manifest m;
  for (const auto& [path, lang] : path_lang) {
    m.entries.push_back({path, lang, 1.0});
  }
  m.rebuild_index();
  return m;
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

// ---------------------------------------------------------------------------
// sampling distribution
// ---------------------------------------------------------------------------

TEST_CASE("equal hours give equal probabilities at any alpha") {
  const auto dist = build_sampling_distribution({100.0, 100.0}, 0.5);
  CHECK(dist.probs[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(dist.probs[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("alpha=1 reproduces exact hour proportions") {
  const auto dist = build_sampling_distribution({400.0, 100.0}, 1.0);
  CHECK(dist.probs[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(dist.probs[1] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("alpha=0.5 on (400, 100) hours gives (2/3, 1/3)") {
  // sqrt(0.8) / (sqrt(0.8) + sqrt(0.2)) = 2/3 since sqrt(0.8) = 2 sqrt(0.2).
  const auto dist = build_sampling_distribution({400.0, 100.0}, 0.5);
  CHECK(dist.probs[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(dist.probs[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("sampling distribution rejects bad inputs") {
  CHECK_THROWS_AS(build_sampling_distribution({100.0, 0.0}, 0.5), ConfigError);
  CHECK_THROWS_AS(build_sampling_distribution({100.0, -1.0}, 0.5), ConfigError);
  CHECK_THROWS_AS(build_sampling_distribution({100.0}, 0.0), ConfigError);
  CHECK_THROWS_AS(build_sampling_distribution({100.0}, 1.5), ConfigError);
  CHECK_THROWS_AS(build_sampling_distribution({}, 0.5), ConfigError);
}

TEST_CASE("probabilities sum to one and flatten monotonically as alpha drops") {
  const std::vector<double> hours{400.0, 100.0, 50.0};
  double prev_ratio = 1e300;
  for (double alpha : {1.0, 0.7, 0.4, 0.1}) {
    const auto dist = build_sampling_distribution(hours, alpha);
    double total = 0.0, lo = 1.0, hi = 0.0;
    for (double p : dist.probs) {
      total += p;
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
    const double ratio = hi / lo;
    CHECK(ratio < prev_ratio);
    prev_ratio = ratio;
  }
}

TEST_CASE("sampling distribution is permutation equivariant") {
  const auto fwd = build_sampling_distribution({400.0, 100.0, 25.0}, 0.5);
  const auto rev = build_sampling_distribution({25.0, 100.0, 400.0}, 0.5);
  CHECK(fwd.probs[0] == doctest::Approx(rev.probs[2]).epsilon(1e-14));
  CHECK(fwd.probs[1] == doctest::Approx(rev.probs[1]).epsilon(1e-14));
  CHECK(fwd.probs[2] == doctest::Approx(rev.probs[0]).epsilon(1e-14));
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

TEST_CASE("single-language manifests produce a single language id") {
  FakeFeatures fake;
  fake.table["a.wav"] = const_frames(10, 2, 1.0f);
  fake.table["b.wav"] = const_frames(10, 2, 2.0f);
  const auto manifest = tiny_manifest({{"a.wav", "xx"}, {"b.wav", "xx"}});
  SamplingDistribution dist{{1.0}, 1.0};
  Rng rng(3);
  const auto batch =
      sample_batch(manifest, dist, 8, 5, rng, fake.provider());
  for (auto id : batch.language_ids) CHECK(id == 0);
}

TEST_CASE("zero-probability languages are never drawn") {
  FakeFeatures fake;
  fake.table["a.wav"] = const_frames(10, 2, 1.0f);
  fake.table["b.wav"] = const_frames(10, 2, 2.0f);
  const auto manifest = tiny_manifest({{"a.wav", "aa"}, {"b.wav", "bb"}});
  SamplingDistribution dist{{1.0, 0.0}, 1.0};
  Rng rng(4);
  const auto batch = sample_batch(manifest, dist, 64, 5, rng, fake.provider());
  for (auto id : batch.language_ids) CHECK(id == 0);
}

TEST_CASE("empirical language frequencies track the distribution") {
  FakeFeatures fake;
  fake.table["a.wav"] = const_frames(4, 1, 1.0f);
  fake.table["b.wav"] = const_frames(4, 1, 2.0f);
  const auto manifest = tiny_manifest({{"a.wav", "aa"}, {"b.wav", "bb"}});

  // Criterion case 1: hours (400, 100), alpha = 0.5 -> (2/3, 1/3).
  {
    const auto dist = build_sampling_distribution({400.0, 100.0}, 0.5);
    Rng rng(5);
    std::size_t count0 = 0;
    const std::size_t draws = 30000;
    for (std::size_t chunk = 0; chunk < draws / 100; ++chunk) {
      const auto batch =
          sample_batch(manifest, dist, 100, 2, rng, fake.provider());
      for (auto id : batch.language_ids) count0 += id == 0;
    }
    const double freq0 = static_cast<double>(count0) / draws;
    CHECK(std::abs(freq0 - 2.0 / 3.0) < 0.01);
  }
  // Criterion case 2: alpha = 1 recovers (0.8, 0.2).
  {
    const auto dist = build_sampling_distribution({400.0, 100.0}, 1.0);
    Rng rng(6);
    std::size_t count0 = 0;
    const std::size_t draws = 30000;
    for (std::size_t i = 0; i < draws; ++i) {
      count0 += sample_language(dist, rng) == 0;
    }
    CHECK(std::abs(static_cast<double>(count0) / draws - 0.8) < 0.01);
  }
}

TEST_CASE("crops stay in bounds and padding is zero and flagged") {
  FakeFeatures fake;
  LogMelFrames longer = const_frames(20, 3, 1.0f);
  for (std::size_t i = 0; i < longer.values.size(); ++i) {
    longer.values[i] = static_cast<float>(i);
  }
  fake.table["long.wav"] = longer;
  fake.table["short.wav"] = const_frames(4, 3, 7.0f);
  const auto manifest =
      tiny_manifest({{"long.wav", "aa"}, {"short.wav", "aa"}});
  SamplingDistribution dist{{1.0}, 1.0};
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto batch = sample_batch(manifest, dist, 4, 10, rng, fake.provider());
    for (std::size_t slot = 0; slot < batch.size(); ++slot) {
      const auto& f = batch.features[slot];
      REQUIRE(f.num_frames == 10);
      const std::size_t valid = batch.valid_frames[slot];
      if (batch.utterance_ids[slot] == "short.wav") {
        CHECK(valid == 4);
        for (std::size_t t = valid; t < 10; ++t) {
          for (std::size_t j = 0; j < 3; ++j) CHECK(f.at(t, j) == 0.0f);
        }
      } else {
        CHECK(valid == 10);
      }
    }
  }
}

TEST_CASE("batch sampling validates distribution width and crop length") {
  FakeFeatures fake;
  fake.table["a.wav"] = const_frames(4, 1, 1.0f);
  const auto manifest = tiny_manifest({{"a.wav", "aa"}});
  SamplingDistribution dist{{0.5, 0.5}, 1.0};
  Rng rng(8);
  CHECK_THROWS_AS(sample_batch(manifest, dist, 1, 2, rng, fake.provider()),
                  ConfigError);
  SamplingDistribution ok{{1.0}, 1.0};
  CHECK_THROWS_AS(sample_batch(manifest, ok, 1, 0, rng, fake.provider()),
                  ConfigError);
}

// ---------------------------------------------------------------------------
// manifest I/O and validation
// ---------------------------------------------------------------------------

TEST_CASE("manifest round trip and stable language ids") {
  const auto dir = std::filesystem::temp_directory_path() / "melvec_manifest";
  std::filesystem::create_directories(dir);
  Manifest m;
  m.entries.push_back({(dir / "b.wav").string(), "zz", 2.0});
  m.entries.push_back({(dir / "a.wav").string(), "aa", 1.5});
  m.rebuild_index();
  CHECK(m.languages == std::vector<std::string>{"aa", "zz"});
  CHECK(m.language_id("zz") == 1);
  CHECK_THROWS_AS(m.language_id("qq"), ConfigError);

  const auto path = (dir / "manifest.tsv").string();
  save_manifest(m, path);
  const auto back = load_manifest(path);
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[0].language == "zz");
  CHECK(back.entries[0].duration_seconds == doctest::Approx(2.0));
  CHECK(back.languages == m.languages);
  std::filesystem::remove_all(dir);
}

TEST_CASE("manifest validation rejects unusable corpora") {
  Manifest empty;
  CHECK_THROWS_AS(empty.validate(false), ConfigError);

  Manifest bad_duration = tiny_manifest({{"a.wav", "aa"}});
  bad_duration.entries[0].duration_seconds = 0.0;
  CHECK_THROWS_AS(bad_duration.validate(false), ConfigError);

  Manifest missing_path = tiny_manifest({{"/definitely/not/here.wav", "aa"}});
  CHECK_THROWS_AS(missing_path.validate(true), ConfigError);
}

TEST_CASE("malformed manifest lines are reported") {
  const auto path =
      (std::filesystem::temp_directory_path() / "melvec_bad.tsv").string();
  {
    std::ofstream os(path);
    os << "only_one_field\n";
  }
  CHECK_THROWS_AS(load_manifest(path), IoError);
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

TEST_CASE("synthetic languages are separable in mel space") {
  const auto dir = std::filesystem::temp_directory_path() / "melvec_syn_sep";
  std::filesystem::remove_all(dir);
  SyntheticCorpusSpec spec;
  spec.num_languages = 2;
  spec.utterances_per_language = 6;
  spec.duration_seconds = 2.0;
  spec.seed = 11;
  const auto manifest = generate_synthetic_corpus(spec, dir.string());
  manifest.validate();

  FeatureConfig cfg;
  // Per-language mean and std of the utterance-mean log-mel vectors.
  std::vector<std::vector<double>> means(2, std::vector<double>(80, 0.0));
  std::vector<std::vector<double>> sq(2, std::vector<double>(80, 0.0));
  std::vector<std::size_t> counts(2, 0);
  for (const auto& e : manifest.entries) {
    const auto frames = extract_logmel(read_wav(e.path), cfg);
    std::vector<double> utt_mean(80, 0.0);
    for (std::size_t t = 0; t < frames.num_frames; ++t) {
      for (std::size_t j = 0; j < 80; ++j) utt_mean[j] += frames.at(t, j);
    }
    const std::size_t lang = manifest.language_id(e.language);
    for (std::size_t j = 0; j < 80; ++j) {
      utt_mean[j] /= static_cast<double>(frames.num_frames);
      means[lang][j] += utt_mean[j];
      sq[lang][j] += utt_mean[j] * utt_mean[j];
    }
    ++counts[lang];
  }
  bool separable = false;
  for (std::size_t j = 0; j < 80; ++j) {
    double mu[2], sd[2];
    for (int l = 0; l < 2; ++l) {
      mu[l] = means[l][j] / counts[l];
      sd[l] = std::sqrt(std::max(0.0, sq[l][j] / counts[l] - mu[l] * mu[l]));
    }
    const double within = std::max({sd[0], sd[1], 1e-6});
    if (std::abs(mu[0] - mu[1]) > 5.0 * within) separable = true;
  }
  CHECK(separable);
  std::filesystem::remove_all(dir);
}

TEST_CASE("identical seeds give bitwise-identical corpora") {
  const auto dir1 = std::filesystem::temp_directory_path() / "melvec_syn_a";
  const auto dir2 = std::filesystem::temp_directory_path() / "melvec_syn_b";
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
  SyntheticCorpusSpec spec;
  spec.num_languages = 2;
  spec.utterances_per_language = 2;
  spec.duration_seconds = 0.8;
  spec.seed = 99;
  const auto m1 = generate_synthetic_corpus(spec, dir1.string());
  const auto m2 = generate_synthetic_corpus(spec, dir2.string());
  REQUIRE(m1.entries.size() == m2.entries.size());
  for (std::size_t i = 0; i < m1.entries.size(); ++i) {
    CHECK(file_bytes(m1.entries[i].path) == file_bytes(m2.entries[i].path));
  }
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("zero utterances per language gives an empty invalid manifest") {
  const auto dir = std::filesystem::temp_directory_path() / "melvec_syn_empty";
  std::filesystem::remove_all(dir);
  SyntheticCorpusSpec spec;
  spec.num_languages = 2;
  spec.utterances_per_language = 0;
  const auto manifest = generate_synthetic_corpus(spec, dir.string());
  CHECK(manifest.entries.empty());
  CHECK_THROWS_AS(manifest.validate(), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic corpus validates its spec") {
  SyntheticCorpusSpec spec;
  spec.num_languages = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.num_languages = 2;
  spec.duration_seconds = 0.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("tone sets are disjoint and below Nyquist") {
  SyntheticCorpusSpec spec;
  spec.num_languages = 5;
  spec.tones_per_language = 3;
  std::vector<double> all;
  for (std::size_t l = 0; l < 5; ++l) {
    for (std::size_t k = 0; k < 3; ++k) {
      all.push_back(spec.tone_hz(l, k));
    }
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 1; i < all.size(); ++i) {
    CHECK(all[i] - all[i - 1] > 1.0);
  }
  CHECK(all.back() < spec.sample_rate / 2.0);
}

// ---------------------------------------------------------------------------
// subsampling and splits
// ---------------------------------------------------------------------------

TEST_CASE("minute budgets subsample deterministically") {
  Manifest m;
  for (int i = 0; i < 10; ++i) {
    m.entries.push_back({"u" + std::to_string(i) + ".wav", "aa", 8.0});
  }
  m.rebuild_index();

  // 10 utterances x 8 s: a budget of 80 s = 4/3 min keeps exactly 10.
  const auto all = subsample_minutes_per_language(m, 80.0 / 60.0, 1);
  CHECK(all.manifest.entries.size() == 10);

  const auto some = subsample_minutes_per_language(m, 24.0 / 60.0, 1);
  CHECK(some.manifest.entries.size() == 3);
  CHECK(some.exhausted_languages.empty());

  const auto again = subsample_minutes_per_language(m, 24.0 / 60.0, 1);
  CHECK(some.manifest.entries[0].path == again.manifest.entries[0].path);
  CHECK(some.manifest.entries[2].path == again.manifest.entries[2].path);

  const auto over = subsample_minutes_per_language(m, 100.0, 1);
  CHECK(over.manifest.entries.size() == 10);
  REQUIRE(over.exhausted_languages.size() == 1);
  CHECK(over.exhausted_languages[0] == "aa");
}

TEST_CASE("held-out splits are disjoint, exhaustive and deterministic") {
  Manifest m;
  for (int l = 0; l < 3; ++l) {
    for (int i = 0; i < 10; ++i) {
      m.entries.push_back({"l" + std::to_string(l) + "_u" + std::to_string(i),
                           "lang" + std::to_string(l), 4.0});
    }
  }
  m.rebuild_index();
  const auto split = split_manifest(m, 0.2, 42);
  CHECK(split.train.entries.size() == 24);
  CHECK(split.heldout.entries.size() == 6);
  for (const auto& lang_entries : split.heldout.by_language) {
    CHECK(lang_entries.size() == 2);
  }
  std::set<std::string> train_paths, heldout_paths;
  for (const auto& e : split.train.entries) train_paths.insert(e.path);
  for (const auto& e : split.heldout.entries) heldout_paths.insert(e.path);
  for (const auto& p : heldout_paths) CHECK(train_paths.count(p) == 0);

  const auto split2 = split_manifest(m, 0.2, 42);
  CHECK(split2.heldout.entries[0].path == split.heldout.entries[0].path);

  CHECK_THROWS_AS(split_manifest(m, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_manifest(m, 1.0, 1), ConfigError);
}
