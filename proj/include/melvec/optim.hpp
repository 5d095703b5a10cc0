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

// Adam with decoupled weight decay, global-norm gradient clipping and the
// linear warmup / linear-or-constant decay learning-rate schedule.

#ifndef MELVEC_OPTIM_HPP_
#define MELVEC_OPTIM_HPP_

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "melvec/tensor.hpp"

namespace melvec {

struct TrainSchedule {
  enum class Decay {
    kLinearToZero,        // pre-training
    kConstantAfterWarmup  // fine-tuning
  };

  double peak_lr = 1e-3;
  std::size_t warmup_updates = 0;
  std::size_t total_updates = 1;
  Decay decay = Decay::kLinearToZero;
  double weight_decay = 1e-2;

  void validate() const {
    if (!(peak_lr > 0.0)) {
      throw ConfigError("schedule: peak learning rate must be positive");
    }
    if (warmup_updates > total_updates) {
      throw ConfigError(str_cat("schedule: warmup ", warmup_updates,
                                " exceeds total updates ", total_updates));
    }
    if (weight_decay < 0.0) {
      throw ConfigError("schedule: weight decay must be >= 0");
    }
    // total_updates == 0 is a valid no-training run (initialization only).
    if (decay == Decay::kLinearToZero && total_updates > 0 &&
        warmup_updates == total_updates) {
      throw ConfigError("schedule: linear decay needs updates after warmup");
    }
  }
};

/// Piecewise-linear learning rate: 0 -> peak over the warmup, then either
/// linearly to 0 at `total_updates` or held at peak.
inline double lr_at(std::size_t step, const TrainSchedule& schedule) {
  schedule.validate();
  if (step > schedule.total_updates) {
    throw ConfigError(str_cat("lr_at: step ", step, " beyond schedule end ",
                              schedule.total_updates));
  }
  if (step <= schedule.warmup_updates) {
    if (schedule.warmup_updates == 0) return schedule.peak_lr;
    return schedule.peak_lr * static_cast<double>(step) /
           static_cast<double>(schedule.warmup_updates);
  }
  if (schedule.decay == TrainSchedule::Decay::kConstantAfterWarmup) {
    return schedule.peak_lr;
  }
  return schedule.peak_lr *
         static_cast<double>(schedule.total_updates - step) /
         static_cast<double>(schedule.total_updates - schedule.warmup_updates);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  // Paper wording mixes "weight decay" and "l2 penalty"; decoupled decay is
  // the default, the coupled variant adds wd * p to the gradient instead.
  bool coupled_weight_decay = false;
  double grad_clip = 1.0;  // global norm; 0 disables
};

/// Adam over a fixed parameter list. Parameters without a populated gradient
/// are treated as zero-gradient (no moment drift from stale buffers: grads
/// are consumed and cleared every step).
template <typename T>
class AdamOptimizer {
 public:
  struct Slot {
    std::string name;
    Tensor<T> param;
    std::vector<double> m;
    std::vector<double> v;
  };

  AdamOptimizer(std::vector<std::pair<std::string, Tensor<T>>> params,
                AdamConfig cfg = {})
      : cfg_(cfg) {
    slots_.reserve(params.size());
    for (auto& [name, tensor] : params) {
      Slot slot;
      slot.name = name;
      slot.param = tensor;
      slot.m.assign(tensor.size(), 0.0);
      slot.v.assign(tensor.size(), 0.0);
      slots_.push_back(std::move(slot));
    }
  }

  std::size_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  std::vector<Slot>& slots() { return slots_; }

  /// One bias-corrected update; gradients are cleared afterwards.
  void step(double lr, double weight_decay) {
    ++step_;
    // NaN gradients abort before any state is touched.
    for (const auto& slot : slots_) {
      if (!slot.param.has_grad()) continue;
      for (const T g : slot.param.grad()) {
        if (std::isnan(static_cast<double>(g))) {
          throw Error(str_cat("adam: NaN gradient at step ", step_,
                              " in parameter ", slot.name));
        }
      }
    }

    double clip_scale = 1.0;
    if (cfg_.grad_clip > 0.0) {
      double norm_sq = 0.0;
      for (const auto& slot : slots_) {
        if (!slot.param.has_grad()) continue;
        for (const T g : slot.param.grad()) {
          norm_sq += static_cast<double>(g) * static_cast<double>(g);
        }
      }
      const double norm = std::sqrt(norm_sq);
      if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
    }

    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& slot : slots_) {
      auto values = slot.param.mutable_values();
      const bool has_grad = slot.param.has_grad();
      for (std::size_t i = 0; i < values.size(); ++i) {
        double g = has_grad
                       ? static_cast<double>(slot.param.grad()[i]) * clip_scale
                       : 0.0;
        if (cfg_.coupled_weight_decay) {
          g += weight_decay * static_cast<double>(values[i]);
        }
        slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
        slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = slot.m[i] / bc1;
        const double v_hat = slot.v[i] / bc2;
        double update = m_hat / (std::sqrt(v_hat) + cfg_.eps);
        if (!cfg_.coupled_weight_decay) {
          update += weight_decay * static_cast<double>(values[i]);
        }
        values[i] = static_cast<T>(static_cast<double>(values[i]) - lr * update);
      }
      if (has_grad) slot.param.zero_grad();
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  std::size_t step_ = 0;
};

}  // namespace melvec

#endif  // MELVEC_OPTIM_HPP_
