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

// Training loops: self-supervised pre-training (contrastive + diversity) and
// supervised LID fine-tuning, with line-delimited metrics, checkpoints, and
// the layer-probing / pooling-ablation harnesses.

#ifndef MELVEC_TRAIN_HPP_
#define MELVEC_TRAIN_HPP_

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "melvec/checkpoint.hpp"
#include "melvec/config.hpp"
#include "melvec/data.hpp"
#include "melvec/lid.hpp"
#include "melvec/losses.hpp"
#include "melvec/optim.hpp"
#include "melvec/quantizer.hpp"
#include "melvec/wav2vec.hpp"

namespace melvec {

// ---------------------------------------------------------------------------
// Run plumbing
// ---------------------------------------------------------------------------

/// Per-run in-memory feature cache; extraction happens once per utterance.
class FeatureCache {
 public:
  explicit FeatureCache(FeatureConfig cfg) : cfg_(cfg) {}

  const LogMelFrames& get(const std::string& path) {
    auto it = memo_.find(path);
    if (it == memo_.end()) {
      it = memo_.emplace(path, extract_logmel(read_wav(path), cfg_)).first;
    }
    return it->second;
  }

  FeatureProvider provider() {
    return [this](const std::string& path) -> const LogMelFrames& {
      return get(path);
    };
  }

  const FeatureConfig& config() const { return cfg_; }

 private:
  FeatureConfig cfg_;
  std::map<std::string, LogMelFrames> memo_;
};

/// Line-delimited metrics: one JSON object per training step, appended to
/// the log file (when a path is given) and kept in memory.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::string& path) {
    if (!path.empty()) {
      os_.open(path, std::ios::app);
      if (!os_) throw IoError(str_cat("metrics: cannot open ", path));
    }
  }

  void write(const Json& row) {
    rows_.push_back(row);
    if (os_.is_open()) {
      os_ << row.dump() << "\n";
      os_.flush();
    }
  }

  const std::vector<Json>& rows() const { return rows_; }

 private:
  std::ofstream os_;
  std::vector<Json> rows_;
};

/// Frozen per-run normalization statistics from a seeded corpus sample.
inline FeatureStats compute_run_stats(const Manifest& manifest,
                                      FeatureCache& cache,
                                      std::size_t max_utterances,
                                      std::uint64_t seed) {
  std::vector<std::size_t> order(manifest.entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed ^ 0x9E3779B97F4A7C15ULL);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  }
  if (max_utterances > 0 && order.size() > max_utterances) {
    order.resize(max_utterances);
  }
  std::vector<const LogMelFrames*> sample;
  sample.reserve(order.size());
  for (const auto idx : order) {
    sample.push_back(&cache.get(manifest.entries[idx].path));
  }
  return compute_feature_stats(sample);
}

// ---------------------------------------------------------------------------
// Pre-training
// ---------------------------------------------------------------------------

struct PretrainOptions {
  ModelConfig model = ModelConfig::toy();
  FeatureConfig features;
  TrainSchedule schedule{2e-3, 100, 2000, TrainSchedule::Decay::kLinearToZero,
                         1e-2};
  AdamConfig adam;
  ContrastiveConfig contrastive{20, true, 1.0};
  LossWeights weights;
  GumbelSchedule gumbel;
  double alpha = 0.5;
  std::size_t batch_size = 8;
  std::size_t crop_frames = 200;
  std::size_t stats_utterances = 32;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;
  std::string out_dir;  // empty: keep everything in memory

  static PretrainOptions from_run_config(const RunConfig& cfg) {
    PretrainOptions opts;
    opts.model = cfg.model;
    opts.features = cfg.features;
    opts.schedule = cfg.pretrain.schedule;
    opts.adam = cfg.pretrain.adam;
    opts.contrastive = cfg.contrastive;
    opts.weights = cfg.loss_weights;
    opts.gumbel = cfg.gumbel;
    opts.alpha = cfg.pretrain.alpha;
    opts.batch_size = cfg.pretrain.batch_size;
    opts.crop_frames = cfg.pretrain.crop_frames;
    opts.stats_utterances = cfg.pretrain.stats_utterances;
    opts.seed = cfg.seed;
    opts.checkpoint_every = cfg.pretrain.checkpoint_every;
    opts.out_dir = cfg.paths.out_dir;
    return opts;
  }
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::string checkpoint_path;
  FeatureStats stats;
  std::vector<Json> metrics;
};

namespace detail {

inline Checkpoint snapshot_pretrain(Wav2VecModel<float>& model,
                                    AdamOptimizer<float>* optimizer,
                                    const FeatureStats& stats,
                                    std::size_t step, const Rng& rng) {
  Checkpoint ckpt;
  ckpt.meta = Json{{"kind", "pretrain"},
                   {"model_config", to_json(model.cfg)},
                   {"schedule_step", step},
                   {"rng_state", rng.serialize_state()},
                   {"feature_stats", feature_stats_to_json(stats)}};
  add_model_tensors(ckpt, model);
  if (optimizer != nullptr) {
    ckpt.meta["optimizer_step"] = optimizer->step_count();
    for (auto& slot : optimizer->slots()) {
      std::vector<float> m(slot.m.begin(), slot.m.end());
      std::vector<float> v(slot.v.begin(), slot.v.end());
      ckpt.tensors.emplace_back(
          "optim/m/" + slot.name,
          Tensor<float>::from_data(slot.param.shape(), std::move(m)));
      ckpt.tensors.emplace_back(
          "optim/v/" + slot.name,
          Tensor<float>::from_data(slot.param.shape(), std::move(v)));
    }
  }
  return ckpt;
}

}  // namespace detail

inline PretrainResult pretrain(const Manifest& manifest,
                               const PretrainOptions& opts) {
  manifest.validate();
  opts.schedule.validate();
  opts.gumbel.validate();
  if (opts.crop_frames < opts.model.stack_factor) {
    throw ConfigError("pretrain: crop shorter than one stacked frame");
  }
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
  }
  MetricsWriter metrics(
      opts.out_dir.empty() ? "" : opts.out_dir + "/pretrain_metrics.jsonl");

  Rng rng(opts.seed);
  FeatureCache cache(opts.features);
  const FeatureStats stats = compute_run_stats(
      manifest, cache, opts.stats_utterances, opts.seed);
  Wav2VecModel<float> model(opts.model, rng);

  std::vector<std::pair<std::string, Tensor<float>>> params;
  model.visit_params([&](const std::string& name, Tensor<float>& t) {
    params.emplace_back(name, t);
  });
  AdamOptimizer<float> optimizer(std::move(params), opts.adam);

  const auto dist =
      build_sampling_distribution(manifest.hours_per_language(), opts.alpha);
  const auto provider = cache.provider();

  for (std::size_t step = 1; step <= opts.schedule.total_updates; ++step) {
    const double lr = lr_at(step, opts.schedule);
    const double tau = opts.gumbel.tau_at(step - 1);
    const Batch batch = sample_batch(manifest, dist, opts.batch_size,
                                     opts.crop_frames, rng, provider, &stats);

    std::vector<Tensor<float>> context, quantized;
    std::vector<MaskSpec> masks;
    std::vector<std::vector<Tensor<float>>> probs;
    std::vector<std::vector<std::vector<std::size_t>>> selections;
    for (std::size_t slot = 0; slot < batch.size(); ++slot) {
      const std::size_t valid = batch.valid_frames[slot];
      if (valid < opts.model.stack_factor) continue;
      const auto x = features_to_tensor<float>(batch.features[slot], valid);
      const auto z = model.encode_features(x);
      if (z.rows() < 2) continue;
      MaskSpec mask =
          sample_mask(z.rows(), opts.model.mask_prob, opts.model.mask_span, rng);
      if (mask.masked_indices.size() < 2) continue;  // cannot form distractors
      const auto quant =
          model.quantizer.quantize(z, tau, QuantizeMode::kTrain, rng);
      const auto masked = apply_mask(z, mask, model.mask_embedding);
      EncodeOptions encode_opts;
      encode_opts.train = true;
      encode_opts.rng = &rng;
      context.push_back(model.encode_context(masked, encode_opts).final);
      quantized.push_back(quant.quantized);
      masks.push_back(std::move(mask));
      probs.push_back(quant.probs_no_noise);
      selections.push_back(quant.hard_indices);
    }
    if (context.empty()) {
      throw Error(str_cat("pretrain: no usable utterance in batch at step ",
                          step, " (all crops shorter than a stacked frame)"));
    }

    const auto loss = pretrain_loss(context, quantized, masks, probs,
                                    opts.contrastive, opts.weights, rng);
    const double total = loss.total.item();
    const double l_m = loss.contrastive.item();
    const double l_d = loss.diversity.item();
    if (!std::isfinite(total)) {
      throw Error(str_cat("pretrain: non-finite loss at step ", step,
                          " (contrastive=", l_m, ", diversity=", l_d, ")"));
    }
    backward(loss.total);
    optimizer.step(lr, opts.schedule.weight_decay);

    const auto usage = codebook_usage(selections, opts.model.codebook_groups,
                                      opts.model.codebook_entries);
    metrics.write(Json{{"step", step},
                       {"lr", lr},
                       {"loss_total", total},
                       {"loss_contrastive", l_m},
                       {"loss_diversity", l_d},
                       {"codebook_entropy", usage_entropy(usage)}});

    if (!opts.out_dir.empty() && opts.checkpoint_every > 0 &&
        step % opts.checkpoint_every == 0 &&
        step < opts.schedule.total_updates) {
      save_checkpoint(
          opts.out_dir + "/checkpoint_step" + std::to_string(step) + ".mvk",
          detail::snapshot_pretrain(model, &optimizer, stats, step, rng));
    }
  }

  PretrainResult result;
  result.stats = stats;
  result.metrics = metrics.rows();
  result.checkpoint = detail::snapshot_pretrain(
      model, &optimizer, stats, opts.schedule.total_updates, rng);
  if (!opts.out_dir.empty()) {
    result.checkpoint_path = opts.out_dir + "/checkpoint_final.mvk";
    save_checkpoint(result.checkpoint_path, result.checkpoint);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

struct FinetuneOptions {
  std::string init_checkpoint;  // empty: train from scratch
  ModelConfig model = ModelConfig::toy();  // used for scratch runs
  FeatureConfig features;
  double peak_lr = 5e-4;
  double warmup_fraction = 0.1;
  std::size_t total_updates = 300;
  double weight_decay = 1e-2;
  AdamConfig adam;
  PoolingMode pooling = PoolingMode::kAverage;
  std::size_t probe_layer = 0;
  bool freeze_encoder = false;
  double crop_seconds = 6.0;
  std::size_t batch_size = 8;
  std::size_t eval_every = 0;
  std::size_t stats_utterances = 32;
  std::uint64_t seed = 1;
  std::string out_dir;

  static FinetuneOptions from_run_config(const RunConfig& cfg) {
    FinetuneOptions opts;
    opts.init_checkpoint = cfg.paths.init_checkpoint;
    opts.model = cfg.model;
    opts.features = cfg.features;
    opts.peak_lr = cfg.finetune.peak_lr;
    opts.warmup_fraction = cfg.finetune.warmup_fraction;
    opts.total_updates = cfg.finetune.total_updates;
    opts.weight_decay = cfg.finetune.weight_decay;
    opts.adam = cfg.finetune.adam;
    opts.pooling = parse_pooling_mode(cfg.finetune.pooling);
    opts.probe_layer = cfg.finetune.probe_layer;
    opts.freeze_encoder = cfg.finetune.freeze_encoder;
    opts.crop_seconds = cfg.finetune.crop_seconds;
    opts.batch_size = cfg.finetune.batch_size;
    opts.eval_every = cfg.finetune.eval_every;
    opts.stats_utterances = cfg.pretrain.stats_utterances;
    opts.seed = cfg.seed;
    opts.out_dir = cfg.paths.out_dir;
    return opts;
  }

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

struct FinetuneResult {
  Checkpoint checkpoint;
  std::string checkpoint_path;
  EvalResult final_eval;
  std::vector<Json> metrics;
  std::vector<std::string> languages;
  bool initialized_from_checkpoint = false;
};

inline FinetuneResult finetune(const Manifest& train_manifest,
                               const Manifest& eval_manifest,
                               const FinetuneOptions& opts) {
  train_manifest.validate();
  eval_manifest.validate();
  const TrainSchedule schedule = opts.schedule();
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
  }
  MetricsWriter metrics(
      opts.out_dir.empty() ? "" : opts.out_dir + "/finetune_metrics.jsonl");

  Rng rng(opts.seed);
  FeatureCache cache(opts.features);

  // Every training label must be representable by the head; the head's
  // language set is fixed at creation from the training manifest.
  const std::vector<std::string> languages = train_manifest.languages;
  for (const auto& entry : eval_manifest.entries) {
    if (std::find(languages.begin(), languages.end(), entry.language) ==
        languages.end()) {
      throw ConfigError(str_cat("finetune: held-out label '", entry.language,
                                "' absent from the training language set"));
    }
  }

  ModelConfig model_cfg = opts.model;
  FeatureStats stats;
  Checkpoint init_ckpt;
  const bool from_checkpoint = !opts.init_checkpoint.empty();
  if (from_checkpoint) {
    init_ckpt = load_checkpoint(opts.init_checkpoint);
    model_cfg = model_config_from_json(init_ckpt.meta.at("model_config"));
    stats = feature_stats_from_json(init_ckpt.meta.at("feature_stats"));
  } else {
    stats = compute_run_stats(train_manifest, cache, opts.stats_utterances,
                              opts.seed);
  }

  LidModel<float> model(model_cfg, languages, opts.pooling, opts.probe_layer,
                        rng);
  model.freeze_encoder = opts.freeze_encoder;
  if (from_checkpoint) {
    // Encoder weights come from pre-training; the head stays random.
    restore_model(init_ckpt, model.encoder);
  }

  AdamOptimizer<float> optimizer(model.trainable_params(), opts.adam);
  const std::size_t crop_frames = static_cast<std::size_t>(
      opts.crop_seconds * 1000.0 / opts.features.frame_shift_ms);
  if (crop_frames < model_cfg.stack_factor) {
    throw ConfigError("finetune: crop shorter than one stacked frame");
  }
  const auto dist =
      build_sampling_distribution(train_manifest.hours_per_language(), 1.0);
  const auto provider = cache.provider();

  const auto evaluate = [&] {
    return evaluate_accuracy(model, eval_manifest, provider, stats);
  };

  for (std::size_t step = 1; step <= schedule.total_updates; ++step) {
    const double lr = lr_at(step, schedule);
    const Batch batch = sample_batch(train_manifest, dist, opts.batch_size,
                                     crop_frames, rng, provider, &stats);
    std::vector<Tensor<float>> logit_rows;
    std::vector<std::size_t> targets;
    for (std::size_t slot = 0; slot < batch.size(); ++slot) {
      const std::size_t valid = batch.valid_frames[slot];
      if (valid < model_cfg.stack_factor) continue;
      const auto x = features_to_tensor<float>(batch.features[slot], valid);
      EncodeOptions encode_opts;
      encode_opts.train = true;
      encode_opts.rng = &rng;
      logit_rows.push_back(model.utterance_logits(x, encode_opts));
      targets.push_back(batch.language_ids[slot]);
    }
    if (logit_rows.empty()) {
      throw Error(str_cat("finetune: no usable utterance in batch at step ",
                          step));
    }
    const auto loss = cross_entropy(stack_rows(logit_rows), targets);
    const double ce = loss.item();
    if (!std::isfinite(ce)) {
      throw Error(str_cat("finetune: non-finite loss at step ", step));
    }
    backward(loss);
    optimizer.step(lr, schedule.weight_decay);

    Json row{{"step", step}, {"lr", lr}, {"loss_ce", ce}};
    if (opts.eval_every > 0 && step % opts.eval_every == 0 &&
        step < schedule.total_updates) {
      row["accuracy"] = evaluate().accuracy;
    }
    metrics.write(row);
  }

  FinetuneResult result;
  result.languages = languages;
  result.initialized_from_checkpoint = from_checkpoint;
  result.final_eval = evaluate();
  metrics.write(Json{{"step", schedule.total_updates},
                     {"lr", schedule.total_updates > 0
                                ? lr_at(schedule.total_updates, schedule)
                                : 0.0},
                     {"accuracy", result.final_eval.accuracy}});
  result.metrics = metrics.rows();

  result.checkpoint.meta =
      Json{{"kind", "lid"},
           {"model_config", to_json(model_cfg)},
           {"schedule_step", schedule.total_updates},
           {"rng_state", rng.serialize_state()},
           {"feature_stats", feature_stats_to_json(stats)},
           {"languages", languages},
           {"pooling", pooling_mode_name(opts.pooling)},
           {"probe_layer", opts.probe_layer}};
  add_model_tensors(result.checkpoint, model);
  if (!opts.out_dir.empty()) {
    result.checkpoint_path = opts.out_dir + "/lid_checkpoint.mvk";
    save_checkpoint(result.checkpoint_path, result.checkpoint);
    write_confusion_csv(opts.out_dir + "/confusion.csv", languages,
                        result.final_eval);
  }
  return result;
}

/// Rebuilds a fine-tuned LID model from its checkpoint.
inline LidModel<float> lid_model_from_checkpoint(const Checkpoint& ckpt,
                                                 Rng& rng) {
  if (ckpt.meta.value("kind", "") != "lid") {
    throw ConfigError("lid model: checkpoint is not a fine-tuned LID model");
  }
  const auto cfg = model_config_from_json(ckpt.meta.at("model_config"));
  LidModel<float> model(
      cfg, ckpt.meta.at("languages").get<std::vector<std::string>>(),
      parse_pooling_mode(ckpt.meta.at("pooling").get<std::string>()),
      ckpt.meta.at("probe_layer").get<std::size_t>(), rng);
  restore_model(ckpt, model);
  return model;
}

// ---------------------------------------------------------------------------
// Ablation harnesses
// ---------------------------------------------------------------------------

struct ProbeRecord {
  std::size_t layer = 0;
  double accuracy = 0.0;
};

/// Fine-tunes a fresh classifier from each listed transformer block's output
/// and reports per-layer held-out accuracy. Blocks past the probed layer are
/// never evaluated.
inline std::vector<ProbeRecord> probe_layers(
    const std::string& checkpoint_path, const std::vector<std::size_t>& layers,
    const Manifest& train_manifest, const Manifest& eval_manifest,
    FinetuneOptions base) {
  const auto ckpt = load_checkpoint(checkpoint_path);
  const auto cfg = model_config_from_json(ckpt.meta.at("model_config"));
  for (const auto k : layers) {
    if (k == 0 || k > cfg.num_layers) {
      throw ConfigError(str_cat("probe_layers: layer ", k, " out of range 1..",
                                cfg.num_layers));
    }
  }
  std::vector<ProbeRecord> records;
  for (const auto k : layers) {
    FinetuneOptions opts = base;
    opts.init_checkpoint = checkpoint_path;
    opts.probe_layer = k;
    if (!base.out_dir.empty()) {
      opts.out_dir = base.out_dir + "/layer" + std::to_string(k);
    }
    const auto result = finetune(train_manifest, eval_manifest, opts);
    records.push_back({k, result.final_eval.accuracy});
  }
  return records;
}

struct PoolingRecord {
  std::string mode;
  double accuracy = 0.0;
};

/// One fine-tuning run per context-aggregation strategy.
inline std::vector<PoolingRecord> ablate_pooling(
    const Manifest& train_manifest, const Manifest& eval_manifest,
    FinetuneOptions base) {
  std::vector<PoolingRecord> records;
  for (const PoolingMode mode : all_pooling_modes()) {
    FinetuneOptions opts = base;
    opts.pooling = mode;
    if (!base.out_dir.empty()) {
      opts.out_dir = base.out_dir + "/" + pooling_mode_name(mode);
    }
    const auto result = finetune(train_manifest, eval_manifest, opts);
    records.push_back({pooling_mode_name(mode), result.final_eval.accuracy});
  }
  return records;
}

}  // namespace melvec

#endif  // MELVEC_TRAIN_HPP_
