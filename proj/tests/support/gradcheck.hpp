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

// Central finite-difference gradient verification, always in 64-bit.
// The loss builder must rebuild a fresh graph from the current leaf values
// on every call (reseeding any randomness identically), so the loss is a
// deterministic function of the leaves.

#ifndef MELVEC_TESTS_GRADCHECK_HPP_
#define MELVEC_TESTS_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "melvec/tensor.hpp"

namespace melvec::testing {

struct NamedLeaf {
  std::string name;
  Tensor<double> tensor;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_leaf;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

inline double grad_rel_err(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / denom;
}

/// Compares analytic gradients against central differences. When a leaf has
/// more than `max_entries_per_leaf` elements, a seeded subset of entries is
/// checked (every leaf is always touched).
inline GradCheckReport gradcheck(
    std::vector<NamedLeaf> leaves,
    const std::function<Tensor<double>()>& make_loss, double step = 1e-5,
    std::size_t max_entries_per_leaf = SIZE_MAX,
    std::uint64_t sample_seed = 20260808) {
  for (auto& leaf : leaves) leaf.tensor.set_requires_grad(true);
  Tensor<double> loss = make_loss();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    if (leaf.tensor.has_grad()) {
      auto g = leaf.tensor.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      // Leaf not reachable from this loss: analytic gradient is zero.
      analytic.emplace_back(leaf.tensor.size(), 0.0);
    }
  }

  Rng rng(sample_seed);
  GradCheckReport report;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto values = leaves[li].tensor.mutable_values();
    std::vector<std::size_t> indices;
    if (values.size() <= max_entries_per_leaf) {
      indices.resize(values.size());
      for (std::size_t i = 0; i < values.size(); ++i) indices[i] = i;
    } else {
      for (std::size_t k = 0; k < max_entries_per_leaf; ++k) {
        indices.push_back(rng.uniform_int(values.size()));
      }
      std::sort(indices.begin(), indices.end());
      indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    }
    for (const std::size_t idx : indices) {
      const double saved = values[idx];
      values[idx] = saved + step;
      const double loss_plus = make_loss().item();
      values[idx] = saved - step;
      const double loss_minus = make_loss().item();
      values[idx] = saved;
      const double numeric = (loss_plus - loss_minus) / (2.0 * step);
      const double err = grad_rel_err(analytic[li][idx], numeric);
      ++report.entries_checked;
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_leaf = leaves[li].name;
        report.worst_index = idx;
        report.worst_analytic = analytic[li][idx];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace melvec::testing

#endif  // MELVEC_TESTS_GRADCHECK_HPP_
