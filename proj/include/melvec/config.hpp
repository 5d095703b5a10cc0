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

// Run configuration: a JSON file mirroring the model, quantizer, loss,
// schedule and path settings. Every field has a default; unknown keys are
// rejected; the effective merged config is echoed into each run directory.

#ifndef MELVEC_CONFIG_HPP_
#define MELVEC_CONFIG_HPP_

#include <fstream>
#include <set>
#include <string>

#include "json.hpp"
#include "melvec/features.hpp"
#include "melvec/losses.hpp"
#include "melvec/model.hpp"
#include "melvec/optim.hpp"
#include "melvec/quantizer.hpp"

namespace melvec {

using Json = nlohmann::json;

namespace detail {

inline void check_keys(const Json& j, const std::set<std::string>& allowed,
                       const std::string& context) {
  if (!j.is_object()) {
    throw ConfigError(str_cat("config: section '", context,
                              "' must be a JSON object"));
  }
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw ConfigError(str_cat("config: unknown key '", item.key(), "' in ",
                                context));
    }
  }
}

template <typename T>
void read_field(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

// --------------------------- model ---------------------------

inline Json to_json(const ModelConfig& cfg) {
  return Json{{"input_dim", cfg.input_dim},
              {"stack_factor", cfg.stack_factor},
              {"latent_dim", cfg.latent_dim},
              {"context_dim", cfg.context_dim},
              {"num_layers", cfg.num_layers},
              {"num_heads", cfg.num_heads},
              {"ffn_dim", cfg.ffn_dim},
              {"conv_kernel", cfg.conv_kernel},
              {"conv_groups", cfg.conv_groups},
              {"proj_dim", cfg.proj_dim},
              {"mask_prob", cfg.mask_prob},
              {"mask_span", cfg.mask_span},
              {"dropout", cfg.dropout},
              {"codebook_groups", cfg.codebook_groups},
              {"codebook_entries", cfg.codebook_entries}};
}

inline ModelConfig model_config_from_json(const Json& j,
                                          ModelConfig cfg = ModelConfig::toy()) {
  detail::check_keys(j,
                     {"input_dim", "stack_factor", "latent_dim", "context_dim",
                      "num_layers", "num_heads", "ffn_dim", "conv_kernel",
                      "conv_groups", "proj_dim", "mask_prob", "mask_span",
                      "dropout", "codebook_groups", "codebook_entries"},
                     "model");
  detail::read_field(j, "input_dim", cfg.input_dim);
  detail::read_field(j, "stack_factor", cfg.stack_factor);
  detail::read_field(j, "latent_dim", cfg.latent_dim);
  detail::read_field(j, "context_dim", cfg.context_dim);
  detail::read_field(j, "num_layers", cfg.num_layers);
  detail::read_field(j, "num_heads", cfg.num_heads);
  detail::read_field(j, "ffn_dim", cfg.ffn_dim);
  detail::read_field(j, "conv_kernel", cfg.conv_kernel);
  detail::read_field(j, "conv_groups", cfg.conv_groups);
  detail::read_field(j, "proj_dim", cfg.proj_dim);
  detail::read_field(j, "mask_prob", cfg.mask_prob);
  detail::read_field(j, "mask_span", cfg.mask_span);
  detail::read_field(j, "dropout", cfg.dropout);
  detail::read_field(j, "codebook_groups", cfg.codebook_groups);
  detail::read_field(j, "codebook_entries", cfg.codebook_entries);
  cfg.validate();
  return cfg;
}

// --------------------------- features ---------------------------

inline Json to_json(const FeatureConfig& cfg) {
  return Json{{"sample_rate", cfg.sample_rate},
              {"num_mel_bins", cfg.num_mel_bins},
              {"frame_length_ms", cfg.frame_length_ms},
              {"frame_shift_ms", cfg.frame_shift_ms},
              {"log_floor", cfg.log_floor}};
}

inline FeatureConfig feature_config_from_json(const Json& j,
                                              FeatureConfig cfg = {}) {
  detail::check_keys(j,
                     {"sample_rate", "num_mel_bins", "frame_length_ms",
                      "frame_shift_ms", "log_floor"},
                     "features");
  detail::read_field(j, "sample_rate", cfg.sample_rate);
  detail::read_field(j, "num_mel_bins", cfg.num_mel_bins);
  detail::read_field(j, "frame_length_ms", cfg.frame_length_ms);
  detail::read_field(j, "frame_shift_ms", cfg.frame_shift_ms);
  detail::read_field(j, "log_floor", cfg.log_floor);
  if (cfg.sample_rate <= 0 || cfg.num_mel_bins <= 0 ||
      cfg.frame_length_ms <= 0 || cfg.frame_shift_ms <= 0 ||
      cfg.log_floor <= 0) {
    throw ConfigError("config: feature settings must be positive");
  }
  return cfg;
}

// --------------------------- quantizer schedule ---------------------------

inline Json to_json(const GumbelSchedule& sched) {
  return Json{{"tau_start", sched.tau_start},
              {"tau_end", sched.tau_end},
              {"tau_decay", sched.decay_per_update}};
}

inline GumbelSchedule gumbel_schedule_from_json(const Json& j,
                                                GumbelSchedule sched = {}) {
  detail::check_keys(j, {"tau_start", "tau_end", "tau_decay"}, "quantizer");
  detail::read_field(j, "tau_start", sched.tau_start);
  detail::read_field(j, "tau_end", sched.tau_end);
  detail::read_field(j, "tau_decay", sched.decay_per_update);
  sched.validate();
  return sched;
}

// --------------------------- losses ---------------------------

inline Json to_json(const ContrastiveConfig& cfg, const LossWeights& weights) {
  return Json{{"num_distractors", cfg.num_distractors},
              {"same_utterance_distractors", cfg.restrict_to_same_utterance},
              {"similarity_temperature", cfg.similarity_temperature},
              {"diversity_weight", weights.diversity_weight}};
}

inline void loss_config_from_json(const Json& j, ContrastiveConfig& cfg,
                                  LossWeights& weights) {
  detail::check_keys(j,
                     {"num_distractors", "same_utterance_distractors",
                      "similarity_temperature", "diversity_weight"},
                     "loss");
  detail::read_field(j, "num_distractors", cfg.num_distractors);
  detail::read_field(j, "same_utterance_distractors",
                     cfg.restrict_to_same_utterance);
  detail::read_field(j, "similarity_temperature", cfg.similarity_temperature);
  detail::read_field(j, "diversity_weight", weights.diversity_weight);
  if (cfg.num_distractors == 0) {
    throw ConfigError("config: num_distractors must be >= 1");
  }
  if (!(cfg.similarity_temperature > 0.0)) {
    throw ConfigError("config: similarity_temperature must be positive");
  }
  weights.validate();
}

// --------------------------- training sections ---------------------------

struct PretrainSection {
  TrainSchedule schedule{2e-3, 100, 2000, TrainSchedule::Decay::kLinearToZero,
                         1e-2};
  AdamConfig adam;
  std::size_t batch_size = 8;
  std::size_t crop_frames = 200;
  double alpha = 0.5;
  std::size_t stats_utterances = 32;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
};

inline Json to_json(const PretrainSection& s) {
  return Json{{"peak_lr", s.schedule.peak_lr},
              {"warmup_updates", s.schedule.warmup_updates},
              {"total_updates", s.schedule.total_updates},
              {"weight_decay", s.schedule.weight_decay},
              {"adam_beta1", s.adam.beta1},
              {"adam_beta2", s.adam.beta2},
              {"adam_eps", s.adam.eps},
              {"coupled_weight_decay", s.adam.coupled_weight_decay},
              {"grad_clip", s.adam.grad_clip},
              {"batch_size", s.batch_size},
              {"crop_frames", s.crop_frames},
              {"alpha", s.alpha},
              {"stats_utterances", s.stats_utterances},
              {"checkpoint_every", s.checkpoint_every}};
}

inline PretrainSection pretrain_section_from_json(const Json& j,
                                                  PretrainSection s = {}) {
  detail::check_keys(
      j, {"peak_lr", "warmup_updates", "total_updates", "weight_decay",
          "adam_beta1", "adam_beta2", "adam_eps", "coupled_weight_decay",
          "grad_clip", "batch_size", "crop_frames", "alpha",
          "stats_utterances", "checkpoint_every"},
      "pretrain");
  detail::read_field(j, "peak_lr", s.schedule.peak_lr);
  detail::read_field(j, "warmup_updates", s.schedule.warmup_updates);
  detail::read_field(j, "total_updates", s.schedule.total_updates);
  detail::read_field(j, "weight_decay", s.schedule.weight_decay);
  detail::read_field(j, "adam_beta1", s.adam.beta1);
  detail::read_field(j, "adam_beta2", s.adam.beta2);
  detail::read_field(j, "adam_eps", s.adam.eps);
  detail::read_field(j, "coupled_weight_decay", s.adam.coupled_weight_decay);
  detail::read_field(j, "grad_clip", s.adam.grad_clip);
  detail::read_field(j, "batch_size", s.batch_size);
  detail::read_field(j, "crop_frames", s.crop_frames);
  detail::read_field(j, "alpha", s.alpha);
  detail::read_field(j, "stats_utterances", s.stats_utterances);
  detail::read_field(j, "checkpoint_every", s.checkpoint_every);
  s.schedule.decay = TrainSchedule::Decay::kLinearToZero;
  s.schedule.validate();
  if (s.batch_size == 0) throw ConfigError("config: batch_size must be >= 1");
  if (s.crop_frames == 0) throw ConfigError("config: crop_frames must be >= 1");
  return s;
}

struct FinetuneSection {
  double peak_lr = 5e-4;
  double warmup_fraction = 0.1;
  std::size_t total_updates = 300;
  double weight_decay = 1e-2;
  AdamConfig adam;
  std::string pooling = "average";
  std::size_t probe_layer = 0;  // 0: final projection output
  bool freeze_encoder = false;
  double crop_seconds = 6.0;
  std::size_t batch_size = 8;
  std::size_t eval_every = 0;  // 0: evaluate at the end only
  double heldout_fraction = 0.2;

  TrainSchedule schedule() const {
    TrainSchedule sched;
    sched.peak_lr = peak_lr;
    sched.total_updates = total_updates;
    sched.warmup_updates = static_cast<std::size_t>(
        warmup_fraction * static_cast<double>(total_updates));
    sched.decay = TrainSchedule::Decay::kConstantAfterWarmup;
    sched.weight_decay = weight_decay;
    sched.validate();
    return sched;
  }
};

inline Json to_json(const FinetuneSection& s) {
  return Json{{"peak_lr", s.peak_lr},
              {"warmup_fraction", s.warmup_fraction},
              {"total_updates", s.total_updates},
              {"weight_decay", s.weight_decay},
              {"adam_beta1", s.adam.beta1},
              {"adam_beta2", s.adam.beta2},
              {"adam_eps", s.adam.eps},
              {"coupled_weight_decay", s.adam.coupled_weight_decay},
              {"grad_clip", s.adam.grad_clip},
              {"pooling", s.pooling},
              {"probe_layer", s.probe_layer},
              {"freeze_encoder", s.freeze_encoder},
              {"crop_seconds", s.crop_seconds},
              {"batch_size", s.batch_size},
              {"eval_every", s.eval_every},
              {"heldout_fraction", s.heldout_fraction}};
}

inline FinetuneSection finetune_section_from_json(const Json& j,
                                                  FinetuneSection s = {}) {
  detail::check_keys(
      j, {"peak_lr", "warmup_fraction", "total_updates", "weight_decay",
          "adam_beta1", "adam_beta2", "adam_eps", "coupled_weight_decay",
          "grad_clip", "pooling", "probe_layer", "freeze_encoder",
          "crop_seconds", "batch_size", "eval_every", "heldout_fraction"},
      "finetune");
  detail::read_field(j, "peak_lr", s.peak_lr);
  detail::read_field(j, "warmup_fraction", s.warmup_fraction);
  detail::read_field(j, "total_updates", s.total_updates);
  detail::read_field(j, "weight_decay", s.weight_decay);
  detail::read_field(j, "adam_beta1", s.adam.beta1);
  detail::read_field(j, "adam_beta2", s.adam.beta2);
  detail::read_field(j, "adam_eps", s.adam.eps);
  detail::read_field(j, "coupled_weight_decay", s.adam.coupled_weight_decay);
  detail::read_field(j, "grad_clip", s.adam.grad_clip);
  detail::read_field(j, "pooling", s.pooling);
  detail::read_field(j, "probe_layer", s.probe_layer);
  detail::read_field(j, "freeze_encoder", s.freeze_encoder);
  detail::read_field(j, "crop_seconds", s.crop_seconds);
  detail::read_field(j, "batch_size", s.batch_size);
  detail::read_field(j, "eval_every", s.eval_every);
  detail::read_field(j, "heldout_fraction", s.heldout_fraction);
  if (s.warmup_fraction < 0.0 || s.warmup_fraction >= 1.0) {
    throw ConfigError("config: warmup_fraction outside [0, 1)");
  }
  if (!(s.crop_seconds > 0.0)) {
    throw ConfigError("config: crop_seconds must be positive");
  }
  if (s.batch_size == 0) throw ConfigError("config: batch_size must be >= 1");
  s.schedule();  // validates the derived schedule
  return s;
}

// --------------------------- run config ---------------------------

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  struct Paths {
    std::string manifest;
    std::string eval_manifest;  // optional explicit held-out manifest
    std::string out_dir;
    std::string init_checkpoint;
  } paths;
  FeatureConfig features;
  ModelConfig model = ModelConfig::toy();
  GumbelSchedule gumbel;
  ContrastiveConfig contrastive{20, true, 1.0};
  LossWeights loss_weights;
  PretrainSection pretrain;
  FinetuneSection finetune;
};

inline Json to_json(const RunConfig& cfg) {
  return Json{{"seed", cfg.seed},
              {"threads", cfg.threads},
              {"paths",
               Json{{"manifest", cfg.paths.manifest},
                    {"eval_manifest", cfg.paths.eval_manifest},
                    {"out_dir", cfg.paths.out_dir},
                    {"init_checkpoint", cfg.paths.init_checkpoint}}},
              {"features", to_json(cfg.features)},
              {"model", to_json(cfg.model)},
              {"quantizer", to_json(cfg.gumbel)},
              {"loss", to_json(cfg.contrastive, cfg.loss_weights)},
              {"pretrain", to_json(cfg.pretrain)},
              {"finetune", to_json(cfg.finetune)}};
}

inline RunConfig run_config_from_json(const Json& j, RunConfig cfg = {}) {
  detail::check_keys(j,
                     {"seed", "threads", "paths", "features", "model",
                      "quantizer", "loss", "pretrain", "finetune"},
                     "top level");
  detail::read_field(j, "seed", cfg.seed);
  detail::read_field(j, "threads", cfg.threads);
  if (cfg.threads < 1) throw ConfigError("config: threads must be >= 1");
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    detail::check_keys(
        p, {"manifest", "eval_manifest", "out_dir", "init_checkpoint"},
        "paths");
    detail::read_field(p, "manifest", cfg.paths.manifest);
    detail::read_field(p, "eval_manifest", cfg.paths.eval_manifest);
    detail::read_field(p, "out_dir", cfg.paths.out_dir);
    detail::read_field(p, "init_checkpoint", cfg.paths.init_checkpoint);
  }
  if (j.contains("features")) {
    cfg.features = feature_config_from_json(j.at("features"), cfg.features);
  }
  if (j.contains("model")) {
    cfg.model = model_config_from_json(j.at("model"), cfg.model);
  }
  if (j.contains("quantizer")) {
    cfg.gumbel = gumbel_schedule_from_json(j.at("quantizer"), cfg.gumbel);
  }
  if (j.contains("loss")) {
    loss_config_from_json(j.at("loss"), cfg.contrastive, cfg.loss_weights);
  }
  if (j.contains("pretrain")) {
    cfg.pretrain = pretrain_section_from_json(j.at("pretrain"), cfg.pretrain);
  }
  if (j.contains("finetune")) {
    cfg.finetune = finetune_section_from_json(j.at("finetune"), cfg.finetune);
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str_cat("config: cannot open ", path));
  Json j;
  try {
    is >> j;
  } catch (const Json::exception& e) {
    throw ConfigError(str_cat("config: invalid JSON in ", path, ": ",
                              e.what()));
  }
  return run_config_from_json(j);
}

/// Writes the merged effective config into the run directory.
inline void echo_effective_config(const RunConfig& cfg,
                                  const std::string& out_dir) {
  const std::string path = out_dir + "/effective_config.json";
  std::ofstream os(path);
  if (!os) throw IoError(str_cat("config: cannot write ", path));
  os << to_json(cfg).dump(2) << "\n";
}

}  // namespace melvec

#endif  // MELVEC_CONFIG_HPP_
