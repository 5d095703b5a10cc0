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

// Pre-training objective (masked contrastive identification plus codebook
// diversity) and the fine-tuning cross-entropy.

#ifndef MELVEC_LOSSES_HPP_
#define MELVEC_LOSSES_HPP_

#include <cstddef>
#include <vector>

#include "melvec/model.hpp"
#include "melvec/ops.hpp"

namespace melvec {

struct ContrastiveConfig {
  std::size_t num_distractors = 100;  // K
  bool restrict_to_same_utterance = true;
  // Optional divisor on similarities; 1.0 reproduces the plain objective.
  double similarity_temperature = 1.0;
};

struct LossWeights {
  double diversity_weight = 0.1;  // lambda

  void validate() const {
    if (diversity_weight < 0.0) {
      throw ConfigError("loss weights: diversity weight must be >= 0");
    }
  }
};

/// K distractor indices for target step t, drawn uniformly from the other
/// masked steps of the same utterance; sampling falls back to replacement
/// when fewer than K other masked steps exist.
inline std::vector<std::size_t> sample_distractors(
    const std::vector<std::size_t>& masked_steps, std::size_t target,
    std::size_t k, Rng& rng) {
  std::vector<std::size_t> candidates;
  candidates.reserve(masked_steps.size());
  for (const auto s : masked_steps) {
    if (s != target) candidates.push_back(s);
  }
  if (candidates.empty()) {
    throw ConfigError(
        "sample_distractors: target is the only masked step; no distractors "
        "available (caller should skip this utterance)");
  }
  if (k == 0) throw ConfigError("sample_distractors: K must be >= 1");
  std::vector<std::size_t> out;
  out.reserve(k);
  if (candidates.size() < k) {
    for (std::size_t i = 0; i < k; ++i) {
      out.push_back(candidates[rng.uniform_int(candidates.size())]);
    }
  } else {
    // Partial Fisher-Yates: first k of a uniform permutation.
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.uniform_int(candidates.size() - i);
      std::swap(candidates[i], candidates[j]);
      out.push_back(candidates[i]);
    }
  }
  return out;
}

/// Contrastive loss with explicit candidate draws: mean over targets of
/// -log softmax(sim(c_t, {q_t} union distractors))[positive].
template <typename T>
Tensor<T> contrastive_loss_with_distractors(
    const Tensor<T>& context, const Tensor<T>& quantized,
    const std::vector<std::size_t>& targets,
    const std::vector<std::vector<std::size_t>>& distractors,
    double similarity_temperature = 1.0) {
  detail::check_rank2(context, "contrastive_loss");
  detail::check_same_shape(context, quantized, "contrastive_loss");
  if (targets.empty()) {
    throw ConfigError("contrastive_loss: no masked targets");
  }
  if (distractors.size() != targets.size()) {
    throw ConfigError("contrastive_loss: one distractor set per target");
  }
  const std::size_t k = distractors[0].size();
  auto c_sel = take_rows(context, targets);
  std::vector<Tensor<T>> sim_cols;
  sim_cols.reserve(k + 1);
  sim_cols.push_back(row_cosine(c_sel, take_rows(quantized, targets)));
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<std::size_t> column(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (distractors[i].size() != k) {
        throw ConfigError("contrastive_loss: ragged distractor sets");
      }
      column[i] = distractors[i][j];
    }
    sim_cols.push_back(row_cosine(c_sel, take_rows(quantized, column)));
  }
  Tensor<T> sims = stack_cols(sim_cols);
  if (similarity_temperature != 1.0) {
    sims = scale(sims, static_cast<T>(1.0 / similarity_temperature));
  }
  return neg(mean(select_col(log_softmax(sims), 0)));
}

/// Contrastive loss over one utterance's masked steps (Q candidates drawn
/// from the same utterance).
template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& context, const Tensor<T>& quantized,
                           const MaskSpec& mask, const ContrastiveConfig& cfg,
                           Rng& rng) {
  const auto& masked = mask.masked_indices;
  if (masked.empty()) throw ConfigError("contrastive_loss: empty mask");
  std::vector<std::vector<std::size_t>> distractors;
  distractors.reserve(masked.size());
  for (const auto t : masked) {
    distractors.push_back(
        sample_distractors(masked, t, cfg.num_distractors, rng));
  }
  return contrastive_loss_with_distractors(context, quantized, masked,
                                           distractors,
                                           cfg.similarity_temperature);
}

/// Cross-utterance variant: candidates are (utterance, step) pairs pooled
/// over every masked step in the batch.
template <typename T>
Tensor<T> batch_contrastive_loss(const std::vector<Tensor<T>>& context,
                                 const std::vector<Tensor<T>>& quantized,
                                 const std::vector<MaskSpec>& masks,
                                 const ContrastiveConfig& cfg, Rng& rng) {
  if (context.size() != quantized.size() || context.size() != masks.size()) {
    throw ConfigError("batch_contrastive_loss: per-utterance inputs disagree");
  }
  if (cfg.restrict_to_same_utterance) {
    std::vector<Tensor<T>> losses;
    for (std::size_t u = 0; u < context.size(); ++u) {
      losses.push_back(
          contrastive_loss(context[u], quantized[u], masks[u], cfg, rng));
    }
    return mean(stack_scalars(losses));
  }

  std::vector<std::pair<std::size_t, std::size_t>> pool;  // (utterance, step)
  for (std::size_t u = 0; u < masks.size(); ++u) {
    for (const auto t : masks[u].masked_indices) pool.emplace_back(u, t);
  }
  if (pool.size() < 2) {
    throw ConfigError("batch_contrastive_loss: fewer than two masked steps");
  }
  std::vector<Tensor<T>> terms;
  terms.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto [u, t] = pool[i];
    auto c_t = row_at(context[u], t);
    std::vector<Tensor<T>> sims;
    sims.reserve(cfg.num_distractors + 1);
    sims.push_back(cosine_similarity(c_t, row_at(quantized[u], t)));
    for (std::size_t j = 0; j < cfg.num_distractors; ++j) {
      std::size_t pick = rng.uniform_int(pool.size() - 1);
      if (pick >= i) ++pick;  // skip the positive
      const auto [du, dt] = pool[pick];
      sims.push_back(cosine_similarity(c_t, row_at(quantized[du], dt)));
    }
    Tensor<T> sim_vec = stack_scalars(sims);
    if (cfg.similarity_temperature != 1.0) {
      sim_vec = scale(sim_vec, static_cast<T>(1.0 / cfg.similarity_temperature));
    }
    terms.push_back(neg(element_at(log_softmax(sim_vec), 0)));
  }
  return mean(stack_scalars(terms));
}

/// Diversity term of the averaged noise-free selection probabilities:
/// (1 / (G V)) sum_g sum_v p_bar log p_bar. Minimized at uniform usage
/// (-log(V) / V), maximized at 0 for one-hot usage.
///
/// `probs` is indexed [utterance][group], each entry a T' x V tensor whose
/// rows must already sum to 1 (checked to 1e-4).
template <typename T>
Tensor<T> diversity_loss(const std::vector<std::vector<Tensor<T>>>& probs) {
  if (probs.empty() || probs[0].empty()) {
    throw ConfigError("diversity_loss: no probabilities");
  }
  const std::size_t groups = probs[0].size();
  const std::size_t entries = probs[0][0].cols();
  std::size_t total_rows = 0;
  for (const auto& utterance : probs) {
    if (utterance.size() != groups) {
      throw ConfigError("diversity_loss: inconsistent group count");
    }
    for (const auto& p : utterance) {
      detail::check_rank2(p, "diversity_loss");
      if (p.cols() != entries) {
        throw ConfigError("diversity_loss: inconsistent entry count");
      }
      auto pv = p.values();
      for (std::size_t i = 0; i < p.rows(); ++i) {
        T row_sum = T(0);
        for (std::size_t j = 0; j < entries; ++j) row_sum += pv[i * entries + j];
        if (std::abs(static_cast<double>(row_sum) - 1.0) > 1e-4) {
          throw ConfigError(str_cat("diversity_loss: probability row sums to ",
                                    row_sum, ", expected 1"));
        }
      }
    }
    total_rows += utterance[0].rows();
  }

  Tensor<T> acc;
  for (std::size_t g = 0; g < groups; ++g) {
    Tensor<T> p_bar;  // length-V average over all (utterance, step) rows
    for (const auto& utterance : probs) {
      const auto& p = utterance[g];
      auto contribution =
          scale(mean_rows(p, p.rows()),
                static_cast<T>(static_cast<double>(p.rows()) / total_rows));
      p_bar = p_bar.defined() ? add(p_bar, contribution) : contribution;
    }
    auto term = sum(xlogx(p_bar));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return scale(acc, static_cast<T>(1.0 / double(groups * entries)));
}

template <typename T>
struct PretrainLoss {
  Tensor<T> total;
  Tensor<T> contrastive;
  Tensor<T> diversity;
};

/// L = L_m + lambda L_d, with both terms kept for logging.
template <typename T>
PretrainLoss<T> pretrain_loss(const std::vector<Tensor<T>>& context,
                              const std::vector<Tensor<T>>& quantized,
                              const std::vector<MaskSpec>& masks,
                              const std::vector<std::vector<Tensor<T>>>& probs,
                              const ContrastiveConfig& contrastive_cfg,
                              const LossWeights& weights, Rng& rng) {
  weights.validate();
  PretrainLoss<T> loss;
  loss.contrastive =
      batch_contrastive_loss(context, quantized, masks, contrastive_cfg, rng);
  loss.diversity = diversity_loss(probs);
  loss.total =
      weights.diversity_weight == 0.0
          ? loss.contrastive
          : add(loss.contrastive,
                scale(loss.diversity,
                      static_cast<T>(weights.diversity_weight)));
  return loss;
}

/// Mean over the batch of -log p(target), computed from logits through
/// log-softmax for stability.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        const std::vector<std::size_t>& targets) {
  detail::check_rank2(logits, "cross_entropy");
  if (targets.size() != logits.rows()) {
    throw ShapeError(str_cat("cross_entropy: ", targets.size(),
                             " targets for ", logits.rows(), " rows"));
  }
  for (const auto t : targets) {
    if (t >= logits.cols()) {
      throw ConfigError(str_cat("cross_entropy: target ", t,
                                " outside 0..", logits.cols() - 1));
    }
  }
  return neg(mean(select_per_row(log_softmax(logits), targets)));
}

}  // namespace melvec

#endif  // MELVEC_LOSSES_HPP_
