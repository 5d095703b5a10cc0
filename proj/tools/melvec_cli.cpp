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

// melvec command-line driver.
//
//   gen-data        synthesize a multilingual corpus + manifest
//   pretrain        self-supervised pre-training on a manifest
//   finetune        supervised LID fine-tuning (scratch or from checkpoint)
//   evaluate        accuracy + confusion matrix of a fine-tuned model
//   probe-layers    fine-tune from selected transformer blocks
//   ablate-pooling  fine-tune once per context-aggregation strategy
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "melvec/config.hpp"
#include "melvec/train.hpp"

namespace {

using namespace melvec;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void apply_thread_settings(const RunConfig& cfg) {
  int threads = cfg.threads;
  if (const char* env = std::getenv("THREADS")) {
    try {
      threads = std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError("THREADS environment override is not a number");
    }
  }
  set_num_threads(threads);
}

struct CommonArgs {
  std::string config_path;
  std::string manifest;
  std::string eval_manifest;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_manifest = true) {
  cmd->add_option("--config", args.config_path,
                  "JSON run configuration (defaults apply when omitted)");
  if (with_manifest) {
    cmd->add_option("--manifest", args.manifest,
                    "corpus manifest (overrides paths.manifest)");
    cmd->add_option("--eval-manifest", args.eval_manifest,
                    "explicit held-out manifest (overrides config)");
  }
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "run seed (overrides config)");
  cmd->add_flag("--dry-run", args.dry_run,
                "print the effective config and exit");
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = load_run_config(args.config_path);
  if (!args.manifest.empty()) cfg.paths.manifest = args.manifest;
  if (!args.eval_manifest.empty()) cfg.paths.eval_manifest = args.eval_manifest;
  if (!args.out_dir.empty()) cfg.paths.out_dir = args.out_dir;
  if (args.seed) cfg.seed = *args.seed;
  return cfg;
}

/// --dry-run handling shared by the training commands. Returns true when the
/// command should stop after echoing the config.
bool handle_dry_run(const RunConfig& cfg, bool dry_run) {
  if (!dry_run) return false;
  std::cout << to_json(cfg).dump(2) << "\n";
  return true;
}

void require_out_dir(const RunConfig& cfg) {
  if (cfg.paths.out_dir.empty()) {
    throw ConfigError("missing output directory: pass --out or set "
                      "paths.out_dir");
  }
  std::filesystem::create_directories(cfg.paths.out_dir);
}

Manifest load_required_manifest(const RunConfig& cfg) {
  if (cfg.paths.manifest.empty()) {
    throw ConfigError("missing manifest: pass --manifest or set "
                      "paths.manifest in the config");
  }
  Manifest manifest = load_manifest(cfg.paths.manifest);
  manifest.validate();
  return manifest;
}

/// Train/held-out resolution: an explicit eval manifest wins, otherwise a
/// deterministic per-language split of the training manifest.
struct Splits {
  Manifest train;
  Manifest heldout;
};

Splits resolve_splits(const RunConfig& cfg, const Manifest& manifest) {
  Splits splits;
  if (!cfg.paths.eval_manifest.empty()) {
    splits.train = manifest;
    splits.heldout = load_manifest(cfg.paths.eval_manifest);
    splits.heldout.validate();
  } else {
    const auto split =
        split_manifest(manifest, cfg.finetune.heldout_fraction, cfg.seed);
    splits.train = split.train;
    splits.heldout = split.heldout;
  }
  return splits;
}

/// Applies the labeled-minutes budget, warning when a language has less
/// material than requested.
Manifest apply_label_budget(const Manifest& train, double minutes,
                            std::uint64_t seed) {
  if (minutes <= 0.0) return train;
  auto result = subsample_minutes_per_language(train, minutes, seed);
  for (const auto& lang : result.exhausted_languages) {
    std::cerr << "warning: language '" << lang << "' has less than " << minutes
              << " labeled minutes; using everything available\n";
  }
  result.manifest.validate();
  return result.manifest;
}

void write_accuracy_csv(const std::string& path, const std::string& init_mode,
                        double minutes, double accuracy) {
  std::ofstream os(path);
  if (!os) throw IoError(str_cat("cannot write ", path));
  os << "init_mode,labeled_minutes_per_lang,accuracy\n";
  os << init_mode << "," << minutes << "," << accuracy << "\n";
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

SyntheticCorpusSpec corpus_spec_from_json(const Json& j) {
  detail::check_keys(j,
                     {"num_languages", "utterances_per_language",
                      "duration_seconds", "seed", "sample_rate",
                      "tones_per_language", "tone_gain", "noise_gain",
                      "gate_prob", "distractor_gain", "distractor_tones",
                      "band_lo_hz", "band_hi_hz"},
                     "corpus spec");
  SyntheticCorpusSpec spec;
  detail::read_field(j, "num_languages", spec.num_languages);
  detail::read_field(j, "utterances_per_language", spec.utterances_per_language);
  detail::read_field(j, "duration_seconds", spec.duration_seconds);
  detail::read_field(j, "seed", spec.seed);
  detail::read_field(j, "sample_rate", spec.sample_rate);
  detail::read_field(j, "tones_per_language", spec.tones_per_language);
  detail::read_field(j, "tone_gain", spec.tone_gain);
  detail::read_field(j, "noise_gain", spec.noise_gain);
  detail::read_field(j, "gate_prob", spec.gate_prob);
  detail::read_field(j, "distractor_gain", spec.distractor_gain);
  detail::read_field(j, "distractor_tones", spec.distractor_tones);
  detail::read_field(j, "band_lo_hz", spec.band_lo_hz);
  detail::read_field(j, "band_hi_hz", spec.band_hi_hz);
  return spec;
}

int run_gen_data(const std::string& spec_path, const std::string& out_dir,
                 std::optional<std::size_t> num_languages,
                 std::optional<std::size_t> utts_per_language,
                 std::optional<double> duration,
                 std::optional<std::uint64_t> seed) {
  SyntheticCorpusSpec spec;
  if (!spec_path.empty()) {
    std::ifstream is(spec_path);
    if (!is) throw ConfigError(str_cat("cannot open corpus spec ", spec_path));
    Json j;
    try {
      is >> j;
    } catch (const Json::exception& e) {
      throw ConfigError(str_cat("invalid JSON in ", spec_path, ": ", e.what()));
    }
    spec = corpus_spec_from_json(j);
  }
  if (num_languages) spec.num_languages = *num_languages;
  if (utts_per_language) spec.utterances_per_language = *utts_per_language;
  if (duration) spec.duration_seconds = *duration;
  if (seed) spec.seed = *seed;
  spec.validate();
  if (out_dir.empty()) throw ConfigError("gen-data: missing --out directory");

  const auto manifest = generate_synthetic_corpus(spec, out_dir);
  std::cout << "wrote " << manifest.entries.size() << " utterances in "
            << spec.num_languages << " languages to " << out_dir << "\n"
            << "manifest: " << out_dir << "/manifest.tsv\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

int run_pretrain(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  if (handle_dry_run(cfg, args.dry_run)) return kExitOk;
  apply_thread_settings(cfg);
  const Manifest manifest = load_required_manifest(cfg);
  require_out_dir(cfg);
  echo_effective_config(cfg, cfg.paths.out_dir);

  auto opts = PretrainOptions::from_run_config(cfg);
  const auto result = pretrain(manifest, opts);
  std::cout << "pretraining finished after "
            << cfg.pretrain.schedule.total_updates << " updates\n"
            << "checkpoint: " << result.checkpoint_path << "\n"
            << "metrics: " << cfg.paths.out_dir << "/pretrain_metrics.jsonl\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

int run_finetune(const CommonArgs& args, const std::string& init,
                 double labeled_minutes) {
  RunConfig cfg = resolve_config(args);
  if (init != "scratch") cfg.paths.init_checkpoint = init;
  if (handle_dry_run(cfg, args.dry_run)) return kExitOk;
  apply_thread_settings(cfg);
  const Manifest manifest = load_required_manifest(cfg);
  require_out_dir(cfg);
  echo_effective_config(cfg, cfg.paths.out_dir);

  auto splits = resolve_splits(cfg, manifest);
  splits.train = apply_label_budget(splits.train, labeled_minutes, cfg.seed);

  auto opts = FinetuneOptions::from_run_config(cfg);
  if (init == "scratch") opts.init_checkpoint.clear();
  const auto result = finetune(splits.train, splits.heldout, opts);

  const std::string init_mode =
      opts.init_checkpoint.empty() ? "scratch" : "pretrained";
  write_accuracy_csv(cfg.paths.out_dir + "/accuracy.csv", init_mode,
                     labeled_minutes, result.final_eval.accuracy);
  std::cout << "init_mode=" << init_mode << " minutes=" << labeled_minutes
            << " accuracy=" << result.final_eval.accuracy << "\n"
            << "checkpoint: " << result.checkpoint_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

int run_evaluate(const CommonArgs& args, const std::string& ckpt_path) {
  RunConfig cfg = resolve_config(args);
  if (handle_dry_run(cfg, args.dry_run)) return kExitOk;
  apply_thread_settings(cfg);
  if (ckpt_path.empty()) throw ConfigError("evaluate: missing --ckpt");
  const Manifest manifest = load_required_manifest(cfg);
  require_out_dir(cfg);

  const auto ckpt = load_checkpoint(ckpt_path);
  Rng rng(cfg.seed);
  auto model = lid_model_from_checkpoint(ckpt, rng);
  const auto stats = feature_stats_from_json(ckpt.meta.at("feature_stats"));
  FeatureCache cache(cfg.features);
  const auto result =
      evaluate_accuracy(model, manifest, cache.provider(), stats);
  write_confusion_csv(cfg.paths.out_dir + "/confusion.csv", model.languages,
                      result);
  std::ofstream acc(cfg.paths.out_dir + "/accuracy.csv");
  acc << "utterances,accuracy\n" << result.total << "," << result.accuracy
      << "\n";
  std::cout << "accuracy=" << result.accuracy << " over " << result.total
            << " utterances\n"
            << "confusion: " << cfg.paths.out_dir << "/confusion.csv\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// probe-layers / ablate-pooling
// ---------------------------------------------------------------------------

std::vector<std::size_t> parse_layer_list(const std::string& text) {
  std::vector<std::size_t> layers;
  std::string token;
  std::istringstream is(text);
  while (std::getline(is, token, ',')) {
    if (token.empty()) continue;
    try {
      layers.push_back(std::stoul(token));
    } catch (const std::exception&) {
      throw ConfigError(str_cat("probe-layers: bad layer '", token, "'"));
    }
  }
  if (layers.empty()) throw ConfigError("probe-layers: empty --layers list");
  return layers;
}

int run_probe_layers(const CommonArgs& args, const std::string& init,
                     const std::string& layer_list, double labeled_minutes) {
  RunConfig cfg = resolve_config(args);
  if (handle_dry_run(cfg, args.dry_run)) return kExitOk;
  apply_thread_settings(cfg);
  if (init.empty() || init == "scratch") {
    throw ConfigError("probe-layers: --init must name a pre-trained checkpoint");
  }
  const Manifest manifest = load_required_manifest(cfg);
  require_out_dir(cfg);
  echo_effective_config(cfg, cfg.paths.out_dir);

  auto splits = resolve_splits(cfg, manifest);
  splits.train = apply_label_budget(splits.train, labeled_minutes, cfg.seed);
  auto opts = FinetuneOptions::from_run_config(cfg);
  opts.out_dir = cfg.paths.out_dir;

  const auto records = probe_layers(init, parse_layer_list(layer_list),
                                    splits.train, splits.heldout, opts);
  const std::string csv = cfg.paths.out_dir + "/layer_accuracy.csv";
  std::ofstream os(csv);
  os << "layer,accuracy\n";
  for (const auto& rec : records) {
    os << rec.layer << "," << rec.accuracy << "\n";
    std::cout << "layer=" << rec.layer << " accuracy=" << rec.accuracy << "\n";
  }
  std::cout << "wrote " << csv << "\n";
  return kExitOk;
}

int run_ablate_pooling(const CommonArgs& args, const std::string& init,
                       double labeled_minutes) {
  RunConfig cfg = resolve_config(args);
  if (init != "scratch" && !init.empty()) cfg.paths.init_checkpoint = init;
  if (handle_dry_run(cfg, args.dry_run)) return kExitOk;
  apply_thread_settings(cfg);
  const Manifest manifest = load_required_manifest(cfg);
  require_out_dir(cfg);
  echo_effective_config(cfg, cfg.paths.out_dir);

  auto splits = resolve_splits(cfg, manifest);
  splits.train = apply_label_budget(splits.train, labeled_minutes, cfg.seed);
  auto opts = FinetuneOptions::from_run_config(cfg);
  if (init == "scratch") opts.init_checkpoint.clear();
  opts.out_dir = cfg.paths.out_dir;

  const auto records = ablate_pooling(splits.train, splits.heldout, opts);
  const std::string csv = cfg.paths.out_dir + "/pooling_accuracy.csv";
  std::ofstream os(csv);
  os << "pooling,accuracy\n";
  for (const auto& rec : records) {
    os << rec.mode << "," << rec.accuracy << "\n";
    std::cout << "pooling=" << rec.mode << " accuracy=" << rec.accuracy << "\n";
  }
  std::cout << "wrote " << csv << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"melvec: self-supervised log-mel speech encoder for spoken "
               "language identification"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "synthesize a labeled corpus");
  std::string gen_spec, gen_out;
  std::optional<std::size_t> gen_langs, gen_utts;
  std::optional<double> gen_duration;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--spec", gen_spec, "JSON corpus spec");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--num-languages", gen_langs, "language count override");
  gen->add_option("--utts-per-language", gen_utts, "utterance count override");
  gen->add_option("--duration", gen_duration, "seconds per utterance");
  gen->add_option("--seed", gen_seed, "corpus seed");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "self-supervised pre-training");
  CommonArgs pre_args;
  add_common(pre, pre_args);

  // finetune
  auto* fine = app.add_subcommand("finetune", "supervised LID fine-tuning");
  CommonArgs fine_args;
  std::string fine_init = "scratch";
  double fine_minutes = 0.0;
  add_common(fine, fine_args);
  fine->add_option("--init", fine_init,
                   "pre-trained checkpoint path, or 'scratch'");
  fine->add_option("--labeled-minutes-per-lang", fine_minutes,
                   "labeled-data budget per language (0 = all)");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "accuracy of a fine-tuned model");
  CommonArgs eval_args;
  std::string eval_ckpt;
  add_common(eval, eval_args);
  eval->add_option("--ckpt", eval_ckpt, "fine-tuned LID checkpoint")
      ->required();

  // probe-layers
  auto* probe = app.add_subcommand("probe-layers",
                                   "per-transformer-block LID accuracy");
  CommonArgs probe_args;
  std::string probe_init, probe_list;
  double probe_minutes = 0.0;
  add_common(probe, probe_args);
  probe->add_option("--init", probe_init, "pre-trained checkpoint")->required();
  probe->add_option("--layers", probe_list, "comma-separated block list")
      ->required();
  probe->add_option("--labeled-minutes-per-lang", probe_minutes,
                    "labeled-data budget per language (0 = all)");

  // ablate-pooling
  auto* ablate = app.add_subcommand(
      "ablate-pooling", "one fine-tuning run per pooling strategy");
  CommonArgs ablate_args;
  std::string ablate_init = "scratch";
  double ablate_minutes = 0.0;
  add_common(ablate, ablate_args);
  ablate->add_option("--init", ablate_init,
                     "pre-trained checkpoint path, or 'scratch'");
  ablate->add_option("--labeled-minutes-per-lang", ablate_minutes,
                     "labeled-data budget per language (0 = all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      return run_gen_data(gen_spec, gen_out, gen_langs, gen_utts, gen_duration,
                          gen_seed);
    }
    if (pre->parsed()) return run_pretrain(pre_args);
    if (fine->parsed()) return run_finetune(fine_args, fine_init, fine_minutes);
    if (eval->parsed()) return run_evaluate(eval_args, eval_ckpt);
    if (probe->parsed()) {
      return run_probe_layers(probe_args, probe_init, probe_list,
                              probe_minutes);
    }
    if (ablate->parsed()) {
      return run_ablate_pooling(ablate_args, ablate_init, ablate_minutes);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
