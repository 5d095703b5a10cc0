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

// Utterance-level language identification: temporal pooling over context
// representations, a linear softmax head, prediction and evaluation.

#ifndef MELVEC_LID_HPP_
#define MELVEC_LID_HPP_

#include <fstream>
#include <string>
#include <vector>

#include "melvec/data.hpp"
#include "melvec/wav2vec.hpp"

namespace melvec {

enum class PoolingMode { kAverage, kMax, kAvgMax, kAvgMaxMin, kClsToken };

inline const char* pooling_mode_name(PoolingMode mode) {
  switch (mode) {
    case PoolingMode::kAverage: return "average";
    case PoolingMode::kMax: return "max";
    case PoolingMode::kAvgMax: return "avg_max";
    case PoolingMode::kAvgMaxMin: return "avg_max_min";
    case PoolingMode::kClsToken: return "cls_token";
  }
  throw ConfigError("pooling_mode_name: unreachable");
}

inline PoolingMode parse_pooling_mode(const std::string& name) {
  for (PoolingMode mode :
       {PoolingMode::kAverage, PoolingMode::kMax, PoolingMode::kAvgMax,
        PoolingMode::kAvgMaxMin, PoolingMode::kClsToken}) {
    if (name == pooling_mode_name(mode)) return mode;
  }
  throw ConfigError(str_cat("unknown pooling mode '", name,
                            "' (expected average, max, avg_max, avg_max_min "
                            "or cls_token)"));
}

inline std::vector<PoolingMode> all_pooling_modes() {
  return {PoolingMode::kAverage, PoolingMode::kMax, PoolingMode::kAvgMax,
          PoolingMode::kAvgMaxMin, PoolingMode::kClsToken};
}

/// Head input width for a given context width.
inline std::size_t pooled_dim(PoolingMode mode, std::size_t context_width) {
  switch (mode) {
    case PoolingMode::kAvgMax: return 2 * context_width;
    case PoolingMode::kAvgMaxMin: return 3 * context_width;
    default: return context_width;
  }
}

/// Collapses the time axis of [T' x D] into a fixed vector using the first
/// `valid` rows; padded rows never contribute. Class-token mode returns the
/// representation at position 0 instead of pooling.
template <typename T>
Tensor<T> pool(const Tensor<T>& context, std::size_t valid, PoolingMode mode) {
  switch (mode) {
    case PoolingMode::kAverage:
      return mean_rows(context, valid);
    case PoolingMode::kMax:
      return max_rows(context, valid);
    case PoolingMode::kAvgMax:
      return concat_vectors(std::vector<Tensor<T>>{mean_rows(context, valid),
                                                   max_rows(context, valid)});
    case PoolingMode::kAvgMaxMin:
      return concat_vectors(std::vector<Tensor<T>>{mean_rows(context, valid),
                                                   max_rows(context, valid),
                                                   min_rows(context, valid)});
    case PoolingMode::kClsToken:
      if (context.rows() == 0) throw ShapeError("pool: empty context");
      return row_at(context, 0);
  }
  throw ConfigError("pool: unreachable");
}

template <typename T>
struct ClassifierHead {
  LinearLayer<T> projection;  // pooled_dim -> L
  std::size_t num_languages = 0;

  ClassifierHead() = default;
  // Small random weights: the first predictions sit near the uniform
  // distribution regardless of the encoder's feature magnitudes.
  ClassifierHead(std::size_t pooled, std::size_t languages, Rng& rng)
      : projection(pooled, languages, rng), num_languages(languages) {
    auto w = projection.weight.mutable_values();
    for (auto& v : w) v *= T(0.01);
  }

  Tensor<T> logits(const Tensor<T>& pooled) const {
    if (pooled.ndim() != 1 || pooled.size() != projection.weight.rows()) {
      throw ShapeError(str_cat("classifier: pooled vector ",
                               shape_str(pooled.shape()),
                               " does not match head input ",
                               projection.weight.rows()));
    }
    // Row-vector product through the shared linear op.
    auto as_row = stack_rows(std::vector<Tensor<T>>{pooled});
    return row_at(projection.forward(as_row), 0);
  }

  /// Softmax class probabilities.
  Tensor<T> classify(const Tensor<T>& pooled) const {
    return softmax(logits(pooled));
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    projection.visit(prefix + ".projection", fn);
  }
};

/// Encoder + pooling + head. `probe_layer` = 0 reads the final projection;
/// k >= 1 reads transformer block k's output and never evaluates blocks
/// past k.
template <typename T>
struct LidModel {
  Wav2VecModel<T> encoder;
  PoolingMode pooling = PoolingMode::kAverage;
  std::size_t probe_layer = 0;
  ClassifierHead<T> head;
  Tensor<T> cls_embedding;  // defined only in cls_token mode
  std::vector<std::string> languages;
  bool freeze_encoder = false;

  LidModel() = default;
  LidModel(const ModelConfig& cfg, std::vector<std::string> language_codes,
           PoolingMode mode, std::size_t probe, Rng& rng)
      : encoder(cfg, rng),
        pooling(mode),
        probe_layer(probe),
        languages(std::move(language_codes)) {
    if (probe_layer > cfg.num_layers) {
      throw ConfigError(str_cat("lid: probe layer ", probe_layer,
                                " out of range 1..", cfg.num_layers));
    }
    if (languages.empty()) throw ConfigError("lid: no languages");
    const std::size_t width =
        probe_layer > 0 ? cfg.context_dim : cfg.proj_dim;
    head = ClassifierHead<T>(pooled_dim(mode, width), languages.size(), rng);
    if (mode == PoolingMode::kClsToken) {
      // Injected at fine-tuning with random init; it does not exist during
      // pre-training.
      cls_embedding = Tensor<T>::randn({cfg.latent_dim}, rng, T(0.1));
      cls_embedding.set_requires_grad(true);
    }
  }

  /// Logits for one utterance's feature matrix (valid rows only).
  Tensor<T> utterance_logits(const Tensor<T>& features,
                             EncodeOptions opts = {}) const {
    auto z = encoder.encode_features(features);
    if (pooling == PoolingMode::kClsToken) {
      z = prepend_row(cls_embedding, z);
    }
    opts.retain_layer_outputs = probe_layer > 0;
    opts.stop_after_layer = probe_layer;
    const auto out = encoder.encode_context(z, opts);
    const Tensor<T> context =
        probe_layer > 0 ? extract_layer_output(out, probe_layer) : out.final;
    return head.logits(pool(context, context.rows(), pooling));
  }

  /// Deterministic evaluation-mode argmax language id.
  std::size_t predict(const Tensor<T>& features) const {
    const auto scores = utterance_logits(features);
    std::size_t arg = 0;
    for (std::size_t l = 1; l < scores.size(); ++l) {
      if (scores.at(l) > scores.at(arg)) arg = l;
    }
    return arg;
  }

  void visit_params(const ParamVisitor<T>& fn) {
    encoder.visit_params(fn);
    head.visit("head", fn);
    if (cls_embedding.defined()) fn("cls_embedding", cls_embedding);
  }

  /// Parameters updated during fine-tuning. Honors freeze_encoder and skips
  /// everything the classification path never evaluates: the quantizer, the
  /// mask embedding, and (when probing layer k) blocks past k plus the final
  /// projection.
  std::vector<std::pair<std::string, Tensor<T>>> trainable_params() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    visit_params([&](const std::string& name, Tensor<T>& t) {
      const bool encoder_param =
          name.rfind("head", 0) != 0 && name != "cls_embedding";
      if (encoder_param) {
        if (freeze_encoder) return;
        if (name.rfind("quantizer.", 0) == 0 || name == "mask_embedding") {
          return;
        }
        if (probe_layer > 0) {
          if (name.rfind("context_encoder.lin_out", 0) == 0) return;
          const auto pos = name.find(".block");
          if (pos != std::string::npos) {
            const std::size_t idx = std::stoul(name.substr(pos + 6));
            if (idx >= probe_layer) return;  // blocks past k never run
          }
        }
      }
      out.emplace_back(name, t);
    });
    return out;
  }
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t total = 0;
};

/// Full-utterance accuracy over a labeled split; every label must belong to
/// the model's language set.
template <typename T>
EvalResult evaluate_accuracy(const LidModel<T>& model, const Manifest& manifest,
                             const FeatureProvider& features,
                             const FeatureStats& stats) {
  if (manifest.entries.empty()) {
    throw ConfigError("evaluate_accuracy: empty split");
  }
  const std::size_t n_lang = model.languages.size();
  EvalResult result;
  result.confusion.assign(n_lang, std::vector<std::size_t>(n_lang, 0));
  std::size_t correct = 0;
  for (const auto& entry : manifest.entries) {
    const auto it = std::find(model.languages.begin(), model.languages.end(),
                              entry.language);
    if (it == model.languages.end()) {
      throw ConfigError(str_cat("evaluate_accuracy: label '", entry.language,
                                "' outside the trained language set"));
    }
    const std::size_t truth =
        static_cast<std::size_t>(it - model.languages.begin());
    const auto normalized = normalize(features(entry.path), stats);
    const auto x = features_to_tensor<T>(normalized, normalized.num_frames);
    const std::size_t predicted = model.predict(x);
    result.confusion[truth][predicted] += 1;
    correct += predicted == truth;
    result.total += 1;
  }
  result.accuracy =
      static_cast<double>(correct) / static_cast<double>(result.total);
  return result;
}

/// Accuracy + confusion matrix as CSV; the header row carries the language
/// codes (columns are predictions, rows are references).
inline void write_confusion_csv(const std::string& path,
                                const std::vector<std::string>& languages,
                                const EvalResult& result) {
  std::ofstream os(path);
  if (!os) throw IoError(str_cat("write_confusion_csv: cannot open ", path));
  os << "language";
  for (const auto& code : languages) os << "," << code;
  os << "\n";
  for (std::size_t i = 0; i < languages.size(); ++i) {
    os << languages[i];
    for (std::size_t j = 0; j < languages.size(); ++j) {
      os << "," << result.confusion[i][j];
    }
    os << "\n";
  }
  if (!os) throw IoError(str_cat("write_confusion_csv: write failed: ", path));
}

}  // namespace melvec

#endif  // MELVEC_LID_HPP_
