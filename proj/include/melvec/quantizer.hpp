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

// Product quantization with Gumbel-softmax selection. Each group scores its
// slice of the projected latent against V learned entries; training uses a
// hard forward pass with the straight-through soft gradient, evaluation is a
// plain argmax.

#ifndef MELVEC_QUANTIZER_HPP_
#define MELVEC_QUANTIZER_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "melvec/model.hpp"
#include "melvec/ops.hpp"

namespace melvec {

enum class QuantizeMode {
  kTrain,  // hard one-hot forward, straight-through soft gradient
  kSoft,   // soft forward (everywhere differentiable; used for checks)
  kEval,   // noise-free argmax, no gradient
};

/// Multiplicative temperature annealing.
struct GumbelSchedule {
  double tau_start = 2.0;
  double tau_end = 0.5;
  double decay_per_update = 0.9995;

  void validate() const {
    if (!(tau_end > 0.0) || tau_start < tau_end) {
      throw ConfigError("gumbel schedule: need tau_start >= tau_end > 0");
    }
    if (!(decay_per_update > 0.0) || decay_per_update > 1.0) {
      throw ConfigError("gumbel schedule: decay outside (0, 1]");
    }
  }

  double tau_at(std::size_t update) const {
    return std::max(tau_end,
                    tau_start * std::pow(decay_per_update,
                                         static_cast<double>(update)));
  }
};

template <typename T>
struct QuantizeResult {
  Tensor<T> quantized;                       // T' x proj_dim
  std::vector<Tensor<T>> selection_probs;    // per group, T' x V (with noise)
  std::vector<Tensor<T>> probs_no_noise;     // per group, T' x V (clean soft)
  std::vector<std::vector<std::size_t>> hard_indices;  // per group, T'
};

namespace detail {

/// Gumbel-softmax selection over logit rows. The forward value is either the
/// hard one-hot of the noised softmax (kTrain) or the noised softmax itself
/// (kSoft); both modes backpropagate the identical soft-sample gradient
/// d(loss)/d(logits) = J_softmax(soft) . g / tau.
template <typename T>
Tensor<T> gumbel_select(const Tensor<T>& logits, double tau, bool hard,
                        Rng& rng) {
  if (!(tau > 0.0)) {
    throw ConfigError(str_cat("quantize: temperature ", tau,
                              " must be positive"));
  }
  const std::size_t m = logits.rows(), n = logits.cols();
  auto lv = logits.values();
  std::vector<T> soft(m * n);
  const T inv_tau = static_cast<T>(1.0 / tau);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<T> noised(n);
    for (std::size_t j = 0; j < n; ++j) {
      noised[j] = (lv[i * n + j] + static_cast<T>(rng.gumbel())) * inv_tau;
    }
    softmax_row(noised.data(), soft.data() + i * n, n);
  }
  std::vector<T> value;
  if (hard) {
    value.assign(m * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < n; ++j) {
        if (soft[i * n + j] > soft[i * n + arg]) arg = j;  // ties: lowest index
      }
      value[i * n + arg] = T(1);
    }
  } else {
    value = soft;
  }
  return make_op<T>({m, n}, std::move(value), {logits},
                    [m, n, inv_tau, soft = std::move(soft)](Node<T>& node) {
                      auto& ln = *node.parents[0];
                      if (!ln.requires_grad) return;
                      ln.ensure_grad();
                      for (std::size_t i = 0; i < m; ++i) {
                        const T* y = soft.data() + i * n;
                        const T* g = node.grad.data() + i * n;
                        T dot = T(0);
                        for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                        T* gl = ln.grad.data() + i * n;
                        for (std::size_t j = 0; j < n; ++j) {
                          gl[j] += inv_tau * y[j] * (g[j] - dot);
                        }
                      }
                    });
}

}  // namespace detail

/// h(.): Z -> Q. pre_linear projects the latent to proj_dim; each group's
/// slice is scored against its V entries by inner product, Gumbel softmax
/// picks an entry per group, selections are concatenated and post_linear
/// produces the quantized target.
template <typename T>
struct Quantizer {
  std::size_t groups = 0;
  std::size_t entries_per_group = 0;
  std::size_t entry_dim = 0;  // proj_dim / groups
  LinearLayer<T> pre_linear;
  std::vector<Tensor<T>> entries;  // per group: V x entry_dim
  LinearLayer<T> post_linear;

  Quantizer() = default;
  Quantizer(const ModelConfig& cfg, Rng& rng)
      : groups(cfg.codebook_groups),
        entries_per_group(cfg.codebook_entries),
        entry_dim(cfg.proj_dim / cfg.codebook_groups),
        pre_linear(cfg.latent_dim, cfg.proj_dim, rng),
        post_linear(cfg.proj_dim, cfg.proj_dim, rng) {
    entries.reserve(groups);
    for (std::size_t g = 0; g < groups; ++g) {
      entries.push_back(Tensor<T>::randn(
          {entries_per_group, entry_dim}, rng,
          static_cast<T>(1.0 / std::sqrt(double(entry_dim)))));
      entries.back().set_requires_grad(true);
    }
  }

  QuantizeResult<T> quantize(const Tensor<T>& z, double tau, QuantizeMode mode,
                             Rng& rng) const {
    if (!(tau > 0.0)) {
      throw ConfigError(str_cat("quantize: temperature ", tau,
                                " must be positive"));
    }
    const Tensor<T> projected = pre_linear.forward(z);
    const std::size_t steps = projected.rows();
    QuantizeResult<T> result;
    std::vector<Tensor<T>> selected;
    selected.reserve(groups);
    for (std::size_t g = 0; g < groups; ++g) {
      auto slice = slice_cols(projected, g * entry_dim, entry_dim);
      auto logits = matmul(slice, transpose(entries[g]));
      result.probs_no_noise.push_back(softmax(logits));

      Tensor<T> weights;
      if (mode == QuantizeMode::kEval) {
        // Deterministic, rng-independent, gradient-free selection.
        std::vector<T> onehot(steps * entries_per_group, T(0));
        std::vector<std::size_t> hard(steps);
        auto logit_values = logits.values();
        for (std::size_t i = 0; i < steps; ++i) {
          std::size_t arg = 0;
          for (std::size_t j = 1; j < entries_per_group; ++j) {
            if (logit_values[i * entries_per_group + j] >
                logit_values[i * entries_per_group + arg]) {
              arg = j;
            }
          }
          onehot[i * entries_per_group + arg] = T(1);
          hard[i] = arg;
        }
        weights = Tensor<T>::from_data({steps, entries_per_group},
                                       std::move(onehot));
        result.hard_indices.push_back(std::move(hard));
        result.selection_probs.push_back(weights);
      } else {
        weights = detail::gumbel_select(logits, tau,
                                        mode == QuantizeMode::kTrain, rng);
        std::vector<std::size_t> hard(steps);
        auto wv = weights.values();
        for (std::size_t i = 0; i < steps; ++i) {
          std::size_t arg = 0;
          for (std::size_t j = 1; j < entries_per_group; ++j) {
            if (wv[i * entries_per_group + j] >
                wv[i * entries_per_group + arg]) {
              arg = j;
            }
          }
          hard[i] = arg;
        }
        result.hard_indices.push_back(std::move(hard));
        result.selection_probs.push_back(weights);
      }
      selected.push_back(matmul(weights, entries[g]));
    }
    result.quantized = post_linear.forward(concat_cols(selected));
    return result;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    pre_linear.visit(prefix + ".pre_linear", fn);
    for (std::size_t g = 0; g < groups; ++g) {
      fn(prefix + ".entries" + std::to_string(g), entries[g]);
    }
    post_linear.visit(prefix + ".post_linear", fn);
  }
};

/// Per-group empirical selection frequencies over a batch of hard
/// selections; each group's histogram sums to 1.
inline std::vector<std::vector<double>> codebook_usage(
    const std::vector<std::vector<std::vector<std::size_t>>>& batch_selections,
    std::size_t groups, std::size_t entries_per_group) {
  std::vector<std::vector<double>> usage(
      groups, std::vector<double>(entries_per_group, 0.0));
  std::size_t total = 0;
  for (const auto& utterance : batch_selections) {
    if (utterance.size() != groups) {
      throw ShapeError("codebook_usage: selection group count mismatch");
    }
    for (std::size_t g = 0; g < groups; ++g) {
      for (const auto idx : utterance[g]) {
        if (idx >= entries_per_group) {
          throw ShapeError("codebook_usage: selection index out of range");
        }
        usage[g][idx] += 1.0;
      }
    }
    total += utterance.empty() ? 0 : utterance[0].size();
  }
  if (total == 0) throw ConfigError("codebook_usage: empty batch");
  for (auto& group : usage) {
    for (auto& v : group) v /= static_cast<double>(total);
  }
  return usage;
}

/// Mean per-group entropy of a usage histogram (nats); log V is the maximum.
inline double usage_entropy(const std::vector<std::vector<double>>& usage) {
  double total = 0.0;
  for (const auto& group : usage) {
    double h = 0.0;
    for (double p : group) {
      if (p > 0.0) h -= p * std::log(p);
    }
    total += h;
  }
  return total / static_cast<double>(usage.size());
}

}  // namespace melvec

#endif  // MELVEC_QUANTIZER_HPP_
