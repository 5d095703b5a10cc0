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

// The full self-supervised encoder: feature encoder f, context encoder g,
// quantizer h and the learned mask embedding, under one parameter namespace.

#ifndef MELVEC_WAV2VEC_HPP_
#define MELVEC_WAV2VEC_HPP_

#include <string>

#include "melvec/features.hpp"
#include "melvec/model.hpp"
#include "melvec/quantizer.hpp"

namespace melvec {

template <typename T>
struct Wav2VecModel {
  ModelConfig cfg;
  FeatureEncoder<T> feature_encoder;
  ContextEncoder<T> context_encoder;
  Quantizer<T> quantizer;
  Tensor<T> mask_embedding;  // latent_dim

  Wav2VecModel() = default;
  Wav2VecModel(const ModelConfig& config, Rng& rng)
      : cfg((config.validate(), config)),
        feature_encoder(config, rng),
        context_encoder(config, rng),
        quantizer(config, rng) {
    mask_embedding = Tensor<T>::randn({config.latent_dim}, rng, T(0.1));
    mask_embedding.set_requires_grad(true);
  }

  /// Latent sequence Z for a T x F feature matrix (rows past `valid` are
  /// expected to be stripped by the caller, not fed here).
  Tensor<T> encode_features(const Tensor<T>& x) const {
    return feature_encoder.forward(x);
  }

  ContextOutput<T> encode_context(const Tensor<T>& z,
                                  const EncodeOptions& opts = {}) const {
    return context_encoder.forward(z, opts);
  }

  /// Convenience eval-mode pass from features to the final projection.
  Tensor<T> forward(const Tensor<T>& x) const {
    return encode_context(encode_features(x)).final;
  }

  void visit_params(const ParamVisitor<T>& fn) {
    feature_encoder.visit("feature_encoder", fn);
    context_encoder.visit("context_encoder", fn);
    quantizer.visit("quantizer", fn);
    fn("mask_embedding", mask_embedding);
  }

  std::size_t num_parameters() {
    std::size_t count = 0;
    visit_params([&](const std::string&, Tensor<T>& t) { count += t.size(); });
    return count;
  }
};

/// Converts a feature matrix (first `valid` rows) into a tensor.
template <typename T>
Tensor<T> features_to_tensor(const LogMelFrames& frames, std::size_t valid) {
  if (valid == 0 || valid > frames.num_frames) {
    throw ShapeError(str_cat("features_to_tensor: valid length ", valid,
                             " outside 1..", frames.num_frames));
  }
  std::vector<T> data(valid * frames.num_bins);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<T>(frames.values[i]);
  }
  return Tensor<T>::from_data({valid, frames.num_bins}, std::move(data));
}

}  // namespace melvec

#endif  // MELVEC_WAV2VEC_HPP_
