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

// The log-mel encoder: time-stacking feature encoder, span masking, and the
// pre-norm transformer context encoder with a grouped-convolution positional
// module.

#ifndef MELVEC_MODEL_HPP_
#define MELVEC_MODEL_HPP_

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "melvec/ops.hpp"
#include "melvec/tensor.hpp"

namespace melvec {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
  std::size_t input_dim = 80;        // log-mel bins per frame
  std::size_t stack_factor = 4;      // consecutive frames stacked per step
  std::size_t latent_dim = 512;      // feature-encoder output width
  std::size_t context_dim = 1024;    // transformer width
  std::size_t num_layers = 24;
  std::size_t num_heads = 16;
  std::size_t ffn_dim = 4096;
  std::size_t conv_kernel = 48;
  std::size_t conv_groups = 16;
  std::size_t proj_dim = 768;        // final projection and quantizer width
  double mask_prob = 0.065;          // per-index span start probability
  std::size_t mask_span = 5;
  double dropout = 0.1;
  std::size_t codebook_groups = 2;   // product-quantizer groups
  std::size_t codebook_entries = 320;  // entries per group

  /// Same topology at desk scale; gradient checks and laptop runs stay fast.
  static ModelConfig toy() {
    ModelConfig cfg;
    cfg.latent_dim = 64;
    cfg.context_dim = 64;
    cfg.num_layers = 4;
    cfg.num_heads = 2;
    cfg.ffn_dim = 256;
    cfg.conv_kernel = 8;
    cfg.conv_groups = 4;
    cfg.proj_dim = 48;
    cfg.codebook_entries = 16;
    return cfg;
  }

  void validate() const {
    if (input_dim == 0 || stack_factor == 0 || latent_dim == 0 ||
        context_dim == 0 || num_layers == 0 || num_heads == 0 ||
        ffn_dim == 0 || conv_kernel == 0 || conv_groups == 0 ||
        proj_dim == 0) {
      throw ConfigError("model config: all dimensions must be positive");
    }
    if (context_dim % num_heads != 0) {
      throw ConfigError(str_cat("model config: context_dim ", context_dim,
                                " not divisible by num_heads ", num_heads));
    }
    if (context_dim % conv_groups != 0) {
      throw ConfigError(str_cat("model config: context_dim ", context_dim,
                                " not divisible by conv_groups ", conv_groups));
    }
    if (codebook_groups == 0 || proj_dim % codebook_groups != 0) {
      throw ConfigError(str_cat("model config: proj_dim ", proj_dim,
                                " not divisible by codebook_groups ",
                                codebook_groups));
    }
    if (codebook_entries < 2) {
      throw ConfigError("model config: codebook needs at least 2 entries");
    }
    if (!(mask_prob > 0.0) || mask_prob > 1.0) {
      throw ConfigError(str_cat("model config: mask_prob ", mask_prob,
                                " outside (0, 1]"));
    }
    if (mask_span == 0) {
      throw ConfigError("model config: mask_span must be >= 1");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw ConfigError(str_cat("model config: dropout ", dropout,
                                " outside [0, 1)"));
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
struct LinearLayer {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // out

  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out, Rng& rng) {
    weight = Tensor<T>::randn({in, out}, rng,
                              static_cast<T>(1.0 / std::sqrt(double(in))));
    bias = Tensor<T>::zeros({out});
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return linear(x, weight, bias);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNormLayer {
  Tensor<T> gain;
  Tensor<T> bias;
  T eps = static_cast<T>(1e-5);

  LayerNormLayer() = default;
  explicit LayerNormLayer(std::size_t dim) {
    gain = Tensor<T>::full({dim}, T(1));
    bias = Tensor<T>::zeros({dim});
    gain.set_requires_grad(true);
    bias.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return layer_norm(x, gain, bias, eps);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".gain", gain);
    fn(prefix + ".bias", bias);
  }
};

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

/// Union of [s, s + span) spans over sampled start indices, clipped at the
/// sequence end. At least one index is always masked (degenerate all-unmasked
/// draws are resampled).
struct MaskSpec {
  std::vector<std::size_t> masked_indices;  // sorted ascending
  double start_prob = 0.0;
  std::size_t span = 0;
};

inline MaskSpec sample_mask(std::size_t seq_len, double start_prob,
                            std::size_t span, Rng& rng) {
  if (seq_len == 0) throw ConfigError("sample_mask: empty sequence");
  if (!(start_prob > 0.0) || start_prob > 1.0) {
    throw ConfigError(str_cat("sample_mask: start probability ", start_prob,
                              " outside (0, 1]"));
  }
  if (span == 0) throw ConfigError("sample_mask: span must be >= 1");
  MaskSpec spec;
  spec.start_prob = start_prob;
  spec.span = span;
  std::vector<char> is_masked(seq_len, 0);
  bool any = false;
  while (!any) {
    for (std::size_t i = 0; i < seq_len; ++i) {
      if (rng.uniform() < start_prob) {
        for (std::size_t j = i; j < std::min(seq_len, i + span); ++j) {
          is_masked[j] = 1;
        }
        any = true;
      }
    }
  }
  for (std::size_t i = 0; i < seq_len; ++i) {
    if (is_masked[i]) spec.masked_indices.push_back(i);
  }
  return spec;
}

/// Replaces masked rows with the shared learned embedding.
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& z, const MaskSpec& spec,
                     const Tensor<T>& mask_embedding) {
  return replace_rows(z, spec.masked_indices, mask_embedding);
}

// ---------------------------------------------------------------------------
// Feature encoder: time-stack + linear
// ---------------------------------------------------------------------------

template <typename T>
struct FeatureEncoder {
  std::size_t input_dim = 0;
  std::size_t stack_factor = 0;
  LinearLayer<T> proj;

  FeatureEncoder() = default;
  FeatureEncoder(const ModelConfig& cfg, Rng& rng)
      : input_dim(cfg.input_dim),
        stack_factor(cfg.stack_factor),
        proj(cfg.input_dim * cfg.stack_factor, cfg.latent_dim, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.ndim() != 2 || x.cols() != input_dim) {
      throw ShapeError(str_cat("feature encoder: input ", shape_str(x.shape()),
                               " does not match configured width ", input_dim));
    }
    return proj.forward(time_stack(x, stack_factor));
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    proj.visit(prefix + ".proj", fn);
  }
};

// ---------------------------------------------------------------------------
// Transformer
// ---------------------------------------------------------------------------

struct EncodeOptions {
  bool train = false;
  Rng* rng = nullptr;                // required when train is true
  bool retain_layer_outputs = false;
  std::size_t stop_after_layer = 0;  // 0 = run every block
  // Test hook: collects per-layer, per-head attention row distributions.
  std::vector<std::vector<double>>* attention_probs = nullptr;
};

template <typename T>
struct SelfAttention {
  std::size_t num_heads = 0;
  LinearLayer<T> wq, wk, wv, wo;

  SelfAttention() = default;
  SelfAttention(std::size_t dim, std::size_t heads, Rng& rng)
      : num_heads(heads),
        wq(dim, dim, rng),
        wk(dim, dim, rng),
        wv(dim, dim, rng),
        wo(dim, dim, rng) {}

  Tensor<T> forward(const Tensor<T>& x, const EncodeOptions& opts) const {
    const std::size_t dim = x.cols();
    const std::size_t head_dim = dim / num_heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(double(head_dim)));
    const Tensor<T> q = wq.forward(x);
    const Tensor<T> k = wk.forward(x);
    const Tensor<T> v = wv.forward(x);
    std::vector<Tensor<T>> heads;
    heads.reserve(num_heads);
    for (std::size_t h = 0; h < num_heads; ++h) {
      const std::size_t off = h * head_dim;
      auto qh = slice_cols(q, off, head_dim);
      auto kh = slice_cols(k, off, head_dim);
      auto vh = slice_cols(v, off, head_dim);
      auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
      auto probs = softmax(scores);
      if (opts.attention_probs) {
        auto pv = probs.values();
        opts.attention_probs->emplace_back(pv.begin(), pv.end());
      }
      heads.push_back(matmul(probs, vh));
    }
    return wo.forward(concat_cols(heads));
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    wq.visit(prefix + ".wq", fn);
    wk.visit(prefix + ".wk", fn);
    wv.visit(prefix + ".wv", fn);
    wo.visit(prefix + ".wo", fn);
  }
};

template <typename T>
struct TransformerBlock {
  LayerNormLayer<T> ln_attn;
  SelfAttention<T> attn;
  LayerNormLayer<T> ln_ffn;
  LinearLayer<T> ffn_in;
  LinearLayer<T> ffn_out;
  double dropout_prob = 0.0;
  bool residual_enabled = true;  // test hook for wiring checks

  TransformerBlock() = default;
  TransformerBlock(const ModelConfig& cfg, Rng& rng)
      : ln_attn(cfg.context_dim),
        attn(cfg.context_dim, cfg.num_heads, rng),
        ln_ffn(cfg.context_dim),
        ffn_in(cfg.context_dim, cfg.ffn_dim, rng),
        ffn_out(cfg.ffn_dim, cfg.context_dim, rng),
        dropout_prob(cfg.dropout) {}

  // Pre-norm residual block: x + attn(ln(x)), then + ffn(ln(.)).
  Tensor<T> forward(const Tensor<T>& x, const EncodeOptions& opts) const {
    auto branch = attn.forward(ln_attn.forward(x), opts);
    if (opts.train) branch = dropout(branch, dropout_prob, true, *opts.rng);
    auto h = residual_enabled ? add(x, branch) : branch;
    auto ffn = ffn_out.forward(gelu(ffn_in.forward(ln_ffn.forward(h))));
    if (opts.train) ffn = dropout(ffn, dropout_prob, true, *opts.rng);
    return residual_enabled ? add(h, ffn) : ffn;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    ln_attn.visit(prefix + ".ln_attn", fn);
    attn.visit(prefix + ".attn", fn);
    ln_ffn.visit(prefix + ".ln_ffn", fn);
    ffn_in.visit(prefix + ".ffn_in", fn);
    ffn_out.visit(prefix + ".ffn_out", fn);
  }
};

template <typename T>
struct ContextOutput {
  Tensor<T> final;                     // T' x proj_dim (full stack only)
  std::vector<Tensor<T>> layer_outputs;  // per retained block, T' x context_dim
};

/// g(.): linear -> layer norm -> [grouped conv + GELU + residual + layer
/// norm] -> pre-norm transformer blocks -> linear projection.
template <typename T>
struct ContextEncoder {
  ModelConfig cfg;
  LinearLayer<T> lin_in;
  LayerNormLayer<T> ln_in;
  Tensor<T> conv_weight;  // [c, c/groups, kernel]
  Tensor<T> conv_bias;    // [c]
  LayerNormLayer<T> ln_conv;
  std::vector<TransformerBlock<T>> blocks;
  LinearLayer<T> lin_out;
  mutable std::size_t blocks_evaluated = 0;  // instrumentation

  ContextEncoder() = default;
  ContextEncoder(const ModelConfig& config, Rng& rng)
      : cfg(config),
        lin_in(config.latent_dim, config.context_dim, rng),
        ln_in(config.context_dim),
        ln_conv(config.context_dim),
        lin_out(config.context_dim, config.proj_dim, rng) {
    const std::size_t cg = config.context_dim / config.conv_groups;
    conv_weight = Tensor<T>::randn(
        {config.context_dim, cg, config.conv_kernel}, rng,
        static_cast<T>(1.0 / std::sqrt(double(cg * config.conv_kernel))));
    conv_bias = Tensor<T>::zeros({config.context_dim});
    conv_weight.set_requires_grad(true);
    conv_bias.set_requires_grad(true);
    blocks.reserve(config.num_layers);
    for (std::size_t i = 0; i < config.num_layers; ++i) {
      blocks.emplace_back(config, rng);
    }
  }

  ContextOutput<T> forward(const Tensor<T>& z, const EncodeOptions& opts) const {
    if (z.ndim() != 2 || z.cols() != cfg.latent_dim) {
      throw ShapeError(str_cat("context encoder: input ", shape_str(z.shape()),
                               " does not match latent width ",
                               cfg.latent_dim));
    }
    if (opts.train && opts.rng == nullptr) {
      throw ConfigError("context encoder: training forward needs an rng");
    }
    const std::size_t run_layers =
        opts.stop_after_layer == 0
            ? blocks.size()
            : std::min(opts.stop_after_layer, blocks.size());

    auto stem = ln_in.forward(lin_in.forward(z));
    auto pos = gelu(conv1d_grouped(stem, conv_weight, conv_bias,
                                   cfg.conv_kernel, cfg.conv_groups));
    auto x = ln_conv.forward(add(stem, pos));

    ContextOutput<T> out;
    if (opts.retain_layer_outputs) out.layer_outputs.reserve(run_layers);
    for (std::size_t i = 0; i < run_layers; ++i) {
      x = blocks[i].forward(x, opts);
      ++blocks_evaluated;
      if (opts.retain_layer_outputs) out.layer_outputs.push_back(x);
    }
    if (run_layers == blocks.size()) out.final = lin_out.forward(x);
    return out;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    lin_in.visit(prefix + ".lin_in", fn);
    ln_in.visit(prefix + ".ln_in", fn);
    fn(prefix + ".conv.weight", conv_weight);
    fn(prefix + ".conv.bias", conv_bias);
    ln_conv.visit(prefix + ".ln_conv", fn);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].visit(prefix + ".block" + std::to_string(i), fn);
    }
    lin_out.visit(prefix + ".lin_out", fn);
  }
};

/// The k-th block's output (1-based), from a forward pass that retained
/// layer outputs.
template <typename T>
Tensor<T> extract_layer_output(const ContextOutput<T>& output, std::size_t k) {
  if (k == 0 || k > output.layer_outputs.size()) {
    throw ConfigError(str_cat("extract_layer_output: layer ", k,
                              " out of range 1..",
                              output.layer_outputs.size()));
  }
  return output.layer_outputs[k - 1];
}

}  // namespace melvec

#endif  // MELVEC_MODEL_HPP_
