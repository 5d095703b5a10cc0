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

// Differentiable operations over Tensor<T>. Exactly the kernels the encoder,
// quantizer, losses and classifier need; each op records its adjoint.

#ifndef MELVEC_OPS_HPP_
#define MELVEC_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "melvec/tensor.hpp"

namespace melvec {

namespace detail {

template <typename T>
void check_rank2(const Tensor<T>& x, const char* who) {
  if (x.ndim() != 2) {
    throw ShapeError(str_cat(who, ": expected a rank-2 tensor, got ",
                             shape_str(x.shape())));
  }
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw ShapeError(str_cat(who, ": shape mismatch ", shape_str(a.shape()),
                             " vs ", shape_str(b.shape())));
  }
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  const std::size_t grain = std::max<std::size_t>(1, 32768 / (k * n + 1));
  parallel_for(m, grain, [=](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      T* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = a[i * k + p];
        if (aip == T(0)) continue;
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  });
}

// C[m x n] += A[m x k] * B^T, B stored [n x k]
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  const std::size_t grain = std::max<std::size_t>(1, 32768 / (k * n + 1));
  parallel_for(m, grain, [=](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const T* arow = a + i * k;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T acc = T(0);
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        crow[j] += acc;
      }
    }
  });
}

// C[k x n] += A^T * B, A stored [m x k], B stored [m x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  for (std::size_t p = 0; p < m; ++p) {
    const T* arow = a + p * k;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < k; ++i) {
      const T aip = arow[i];
      if (aip == T(0)) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op<T>(a.shape(), std::move(out), {a, b},
                    [](detail::Node<T>& node) {
                      const std::size_t n = node.grad.size();
                      detail::accumulate_grad(*node.parents[0], node.grad.data(), n);
                      detail::accumulate_grad(*node.parents[1], node.grad.data(), n);
                    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op<T>(a.shape(), std::move(out), {a, b},
                    [](detail::Node<T>& node) {
                      const std::size_t n = node.grad.size();
                      detail::accumulate_grad(*node.parents[0], node.grad.data(), n);
                      auto& b_node = *node.parents[1];
                      if (b_node.requires_grad) {
                        b_node.ensure_grad();
                        for (std::size_t i = 0; i < n; ++i) {
                          b_node.grad[i] -= node.grad[i];
                        }
                      }
                    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op<T>(a.shape(), std::move(out), {a, b},
                    [](detail::Node<T>& node) {
                      const std::size_t n = node.grad.size();
                      auto& an = *node.parents[0];
                      auto& bn = *node.parents[1];
                      if (an.requires_grad) {
                        an.ensure_grad();
                        for (std::size_t i = 0; i < n; ++i) {
                          an.grad[i] += node.grad[i] * bn.value[i];
                        }
                      }
                      if (bn.requires_grad) {
                        bn.ensure_grad();
                        for (std::size_t i = 0; i < n; ++i) {
                          bn.grad[i] += node.grad[i] * an.value[i];
                        }
                      }
                    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  return make_op<T>(a.shape(), std::move(out), {a},
                    [c](detail::Node<T>& node) {
                      auto& an = *node.parents[0];
                      if (!an.requires_grad) return;
                      an.ensure_grad();
                      for (std::size_t i = 0; i < node.grad.size(); ++i) {
                        an.grad[i] += node.grad[i] * c;
                      }
                    });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  return make_op<T>(a.shape(), std::move(out), {a},
                    [](detail::Node<T>& node) {
                      detail::accumulate_grad(*node.parents[0], node.grad.data(),
                                              node.grad.size());
                    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  return make_op<T>({}, {acc}, {a}, [](detail::Node<T>& node) {
    auto& an = *node.parents[0];
    if (!an.requires_grad) return;
    an.ensure_grad();
    const T g = node.grad[0];
    for (auto& gi : an.grad) gi += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  T acc = T(0);
  for (T v : a.values()) acc += v;
  const T inv = T(1) / static_cast<T>(a.size());
  return make_op<T>({}, {acc * inv}, {a}, [inv](detail::Node<T>& node) {
    auto& an = *node.parents[0];
    if (!an.requires_grad) return;
    an.ensure_grad();
    const T g = node.grad[0] * inv;
    for (auto& gi : an.grad) gi += g;
  });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// Standard matrix product [m x k] * [k x n] -> [m x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_rank2(a, "matmul");
  detail::check_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError(str_cat("matmul: inner dimensions disagree, ",
                             shape_str(a.shape()), " vs ",
                             shape_str(b.shape())));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(m, k, n, a.values().data(), b.values().data(), out.data());
  return make_op<T>({m, n}, std::move(out), {a, b},
                    [m, k, n](detail::Node<T>& node) {
                      auto& an = *node.parents[0];
                      auto& bn = *node.parents[1];
                      if (an.requires_grad) {
                        an.ensure_grad();
                        detail::gemm_nt(m, n, k, node.grad.data(),
                                        bn.value.data(), an.grad.data());
                      }
                      if (bn.requires_grad) {
                        bn.ensure_grad();
                        detail::gemm_tn(m, k, n, an.value.data(),
                                        node.grad.data(), bn.grad.data());
                      }
                    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::check_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m * n);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  }
  return make_op<T>({n, m}, std::move(out), {a},
                    [m, n](detail::Node<T>& node) {
                      auto& an = *node.parents[0];
                      if (!an.requires_grad) return;
                      an.ensure_grad();
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) {
                          an.grad[i * n + j] += node.grad[j * m + i];
                        }
                      }
                    });
}

/// Adds a row vector [n] to every row of [m x n].
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& b) {
  detail::check_rank2(x, "add_rowvec");
  if (b.ndim() != 1 || b.size() != x.cols()) {
    throw ShapeError(str_cat("add_rowvec: vector ", shape_str(b.shape()),
                             " does not match columns of ",
                             shape_str(x.shape())));
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(m * n);
  auto xv = x.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  }
  return make_op<T>({m, n}, std::move(out), {x, b},
                    [m, n](detail::Node<T>& node) {
                      detail::accumulate_grad(*node.parents[0],
                                              node.grad.data(), m * n);
                      auto& bn = *node.parents[1];
                      if (!bn.requires_grad) return;
                      bn.ensure_grad();
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) {
                          bn.grad[j] += node.grad[i * n + j];
                        }
                      }
                    });
}

/// x * W + b with W stored [in x out]; b may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Tensor<T> y = matmul(x, w);
  return b.defined() ? add_rowvec(y, b) : y;
}

// ---------------------------------------------------------------------------
// Activations and normalization
// ---------------------------------------------------------------------------

/// Exact-erf GELU: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  std::vector<T> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(xv[i]);
    out[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
  }
  return make_op<T>(x.shape(), std::move(out), {x},
                    [](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      for (std::size_t i = 0; i < node.grad.size(); ++i) {
                        const double v = static_cast<double>(xn.value[i]);
                        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                        xn.grad[i] += node.grad[i] * static_cast<T>(cdf + v * pdf);
                      }
                    });
}

namespace detail {

template <typename T>
void softmax_row(const T* x, T* y, std::size_t n) {
  T mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  T denom = T(0);
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    denom += y[j];
  }
  const T inv = T(1) / denom;
  for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
}

template <typename T>
std::pair<std::size_t, std::size_t> row_view(const Tensor<T>& x,
                                             const char* who) {
  if (x.ndim() == 1) return {std::size_t(1), x.size()};
  check_rank2(x, who);
  return {x.rows(), x.cols()};
}

}  // namespace detail

/// Row-wise softmax with max-subtraction; accepts rank-1 or rank-2 input.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  auto [m, n] = detail::row_view(x, "softmax");
  std::vector<T> out(m * n);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    detail::softmax_row(xv.data() + i * n, out.data() + i * n, n);
  }
  return make_op<T>(x.shape(), std::move(out), {x},
                    [m, n](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      for (std::size_t i = 0; i < m; ++i) {
                        const T* y = node.value.data() + i * n;
                        const T* g = node.grad.data() + i * n;
                        T dot = T(0);
                        for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                        T* gx = xn.grad.data() + i * n;
                        for (std::size_t j = 0; j < n; ++j) {
                          gx[j] += y[j] * (g[j] - dot);
                        }
                      }
                    });
}

/// Row-wise log-softmax; accepts rank-1 or rank-2 input.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  auto [m, n] = detail::row_view(x, "log_softmax");
  std::vector<T> out(m * n);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xv.data() + i * n;
    T mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(row[j] - mx);
    const T lse = mx + std::log(denom);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  return make_op<T>(x.shape(), std::move(out), {x},
                    [m, n](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      for (std::size_t i = 0; i < m; ++i) {
                        const T* y = node.value.data() + i * n;
                        const T* g = node.grad.data() + i * n;
                        T gsum = T(0);
                        for (std::size_t j = 0; j < n; ++j) gsum += g[j];
                        T* gx = xn.grad.data() + i * n;
                        for (std::size_t j = 0; j < n; ++j) {
                          gx[j] += g[j] - std::exp(y[j]) * gsum;
                        }
                      }
                    });
}

/// Layer normalization over the last dimension of a rank-2 tensor, followed
/// by the per-dimension affine (gain, bias). Statistics use the population
/// convention; gradients flow through mean and variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  detail::check_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError(str_cat("layer_norm: affine size ", gain.size(), "/",
                             bias.size(), " does not match width ", d));
  }
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  std::vector<T> out(m * d);
  std::vector<T> inv_std(m);
  std::vector<T> x_hat(m * d);
  auto xv = x.values(), gv = gain.values(), bv = bias.values();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xv.data() + i * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T xh = (row[j] - mu) * is;
      x_hat[i * d + j] = xh;
      out[i * d + j] = gv[j] * xh + bv[j];
    }
  }
  return make_op<T>(
      {m, d}, std::move(out), {x, gain, bias},
      [m, d, inv_std = std::move(inv_std),
       x_hat = std::move(x_hat)](detail::Node<T>& node) {
        auto& xn = *node.parents[0];
        auto& gn = *node.parents[1];
        auto& bn = *node.parents[2];
        if (gn.requires_grad) gn.ensure_grad();
        if (bn.requires_grad) bn.ensure_grad();
        if (xn.requires_grad) xn.ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          const T* g = node.grad.data() + i * d;
          const T* xh = x_hat.data() + i * d;
          if (gn.requires_grad || bn.requires_grad) {
            for (std::size_t j = 0; j < d; ++j) {
              if (gn.requires_grad) gn.grad[j] += g[j] * xh[j];
              if (bn.requires_grad) bn.grad[j] += g[j];
            }
          }
          if (!xn.requires_grad) continue;
          T mean_gm = T(0), mean_gmxh = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T gm = g[j] * gn.value[j];
            mean_gm += gm;
            mean_gmxh += gm * xh[j];
          }
          mean_gm /= static_cast<T>(d);
          mean_gmxh /= static_cast<T>(d);
          T* gx = xn.grad.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) {
            const T gm = g[j] * gn.value[j];
            gx[j] += inv_std[i] * (gm - mean_gm - xh[j] * mean_gmxh);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Grouped temporal convolution
// ---------------------------------------------------------------------------

/// Same-padded temporal convolution over [T x d] with channel groups.
/// Weight layout: [d, d/groups, kernel]; bias (length d) may be undefined.
/// For even kernels padding is split (k-1)/2 left, k/2 right, so the output
/// length always equals the input length.
template <typename T>
Tensor<T> conv1d_grouped(const Tensor<T>& x, const Tensor<T>& weight,
                         const Tensor<T>& bias, std::size_t kernel,
                         std::size_t groups) {
  detail::check_rank2(x, "conv1d_grouped");
  const std::size_t len = x.rows(), d = x.cols();
  if (groups == 0 || d % groups != 0) {
    throw ConfigError(str_cat("conv1d_grouped: channels ", d,
                              " not divisible by groups ", groups));
  }
  const std::size_t cg = d / groups;
  if (weight.ndim() != 3 || weight.dim(0) != d || weight.dim(1) != cg ||
      weight.dim(2) != kernel) {
    throw ShapeError(str_cat("conv1d_grouped: weight ",
                             shape_str(weight.shape()), " does not match [",
                             d, "x", cg, "x", kernel, "]"));
  }
  if (bias.defined() && bias.size() != d) {
    throw ShapeError(str_cat("conv1d_grouped: bias length ", bias.size(),
                             " does not match channels ", d));
  }
  const std::size_t pad_left = (kernel - 1) / 2;
  std::vector<T> out(len * d, T(0));
  auto xv = x.values(), wv = weight.values();
  if (bias.defined()) {
    auto bv = bias.values();
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t oc = 0; oc < d; ++oc) out[t * d + oc] = bv[oc];
    }
  }
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t oc = 0; oc < d; ++oc) {
      const std::size_t group_base = (oc / cg) * cg;
      T acc = out[t * d + oc];
      for (std::size_t j = 0; j < kernel; ++j) {
        const std::ptrdiff_t s =
            static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad_left);
        if (s < 0 || s >= static_cast<std::ptrdiff_t>(len)) continue;
        const T* xrow = xv.data() + static_cast<std::size_t>(s) * d + group_base;
        const T* wrow = wv.data() + (oc * cg + 0) * kernel + j;
        for (std::size_t ic = 0; ic < cg; ++ic) {
          acc += xrow[ic] * wrow[ic * kernel];
        }
      }
      out[t * d + oc] = acc;
    }
  }
  std::vector<Tensor<T>> inputs = bias.defined()
                                      ? std::vector<Tensor<T>>{x, weight, bias}
                                      : std::vector<Tensor<T>>{x, weight};
  const bool has_bias = bias.defined();
  return make_op<T>(
      {len, d}, std::move(out), std::move(inputs),
      [len, d, cg, kernel, pad_left, has_bias](detail::Node<T>& node) {
        auto& xn = *node.parents[0];
        auto& wn = *node.parents[1];
        if (xn.requires_grad) xn.ensure_grad();
        if (wn.requires_grad) wn.ensure_grad();
        for (std::size_t t = 0; t < len; ++t) {
          for (std::size_t oc = 0; oc < d; ++oc) {
            const T g = node.grad[t * d + oc];
            if (g == T(0)) continue;
            const std::size_t group_base = (oc / cg) * cg;
            for (std::size_t j = 0; j < kernel; ++j) {
              const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + j) -
                                       static_cast<std::ptrdiff_t>(pad_left);
              if (s < 0 || s >= static_cast<std::ptrdiff_t>(len)) continue;
              const std::size_t srow = static_cast<std::size_t>(s) * d + group_base;
              for (std::size_t ic = 0; ic < cg; ++ic) {
                if (wn.requires_grad) {
                  wn.grad[(oc * cg + ic) * kernel + j] +=
                      g * xn.value[srow + ic];
                }
                if (xn.requires_grad) {
                  xn.grad[srow + ic] += g * wn.value[(oc * cg + ic) * kernel + j];
                }
              }
            }
          }
        }
        if (has_bias) {
          auto& bn = *node.parents[2];
          if (!bn.requires_grad) return;
          bn.ensure_grad();
          for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t oc = 0; oc < d; ++oc) {
              bn.grad[oc] += node.grad[t * d + oc];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Cosine similarity
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
struct CosineParts {
  T sim;
  T norm_a;
  T norm_b;
};

template <typename T>
CosineParts<T> cosine_parts(const T* a, const T* b, std::size_t d) {
  T dot = T(0), na = T(0), nb = T(0);
  for (std::size_t j = 0; j < d; ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na == T(0) || nb == T(0)) return {T(0), na, nb};
  return {dot / (na * nb), na, nb};
}

// d sim / d a = b / (|a||b|) - sim * a / |a|^2 (and symmetrically for b).
template <typename T>
void cosine_backprop(const T* a, const T* b, std::size_t d,
                     const CosineParts<T>& parts, T g, T* ga, T* gb) {
  if (parts.norm_a == T(0) || parts.norm_b == T(0)) return;  // defined grad 0
  const T inv_ab = T(1) / (parts.norm_a * parts.norm_b);
  const T inv_aa = parts.sim / (parts.norm_a * parts.norm_a);
  const T inv_bb = parts.sim / (parts.norm_b * parts.norm_b);
  for (std::size_t j = 0; j < d; ++j) {
    if (ga) ga[j] += g * (b[j] * inv_ab - a[j] * inv_aa);
    if (gb) gb[j] += g * (a[j] * inv_ab - b[j] * inv_bb);
  }
}

}  // namespace detail

/// Cosine similarity of two vectors. Zero-norm inputs yield 0 with zero
/// gradient rather than NaN.
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 1 || b.ndim() != 1 || a.size() != b.size()) {
    throw ShapeError(str_cat("cosine_similarity: expected equal-length vectors, got ",
                             shape_str(a.shape()), " and ", shape_str(b.shape())));
  }
  const std::size_t d = a.size();
  const auto parts = detail::cosine_parts(a.values().data(), b.values().data(), d);
  return make_op<T>({}, {parts.sim}, {a, b},
                    [d, parts](detail::Node<T>& node) {
                      auto& an = *node.parents[0];
                      auto& bn = *node.parents[1];
                      if (an.requires_grad) an.ensure_grad();
                      if (bn.requires_grad) bn.ensure_grad();
                      detail::cosine_backprop(
                          an.value.data(), bn.value.data(), d, parts,
                          node.grad[0],
                          an.requires_grad ? an.grad.data() : nullptr,
                          bn.requires_grad ? bn.grad.data() : nullptr);
                    });
}

/// Row-paired cosine similarity of two [n x d] tensors -> [n].
template <typename T>
Tensor<T> row_cosine(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_rank2(a, "row_cosine");
  detail::check_same_shape(a, b, "row_cosine");
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<T> out(n);
  std::vector<detail::CosineParts<T>> parts(n);
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    parts[i] = detail::cosine_parts(av.data() + i * d, bv.data() + i * d, d);
    out[i] = parts[i].sim;
  }
  return make_op<T>({n}, std::move(out), {a, b},
                    [n, d, parts = std::move(parts)](detail::Node<T>& node) {
                      auto& an = *node.parents[0];
                      auto& bn = *node.parents[1];
                      if (an.requires_grad) an.ensure_grad();
                      if (bn.requires_grad) bn.ensure_grad();
                      for (std::size_t i = 0; i < n; ++i) {
                        detail::cosine_backprop(
                            an.value.data() + i * d, bn.value.data() + i * d, d,
                            parts[i], node.grad[i],
                            an.requires_grad ? an.grad.data() + i * d : nullptr,
                            bn.requires_grad ? bn.grad.data() + i * d : nullptr);
                      }
                    });
}

// ---------------------------------------------------------------------------
// Structure: slicing, gathering, stacking
// ---------------------------------------------------------------------------

/// Gathers rows of x by index: out[i] = x[indices[i]]. Repeated indices
/// accumulate gradient.
template <typename T>
Tensor<T> take_rows(const Tensor<T>& x, std::vector<std::size_t> indices) {
  detail::check_rank2(x, "take_rows");
  const std::size_t d = x.cols();
  for (auto r : indices) {
    if (r >= x.rows()) {
      throw ShapeError(str_cat("take_rows: index ", r, " out of range for ",
                               shape_str(x.shape())));
    }
  }
  const std::size_t n = indices.size();
  std::vector<T> out(n * d);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(xv.data() + indices[i] * d, d, out.data() + i * d);
  }
  return make_op<T>({n, d}, std::move(out), {x},
                    [d, indices = std::move(indices)](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      for (std::size_t i = 0; i < indices.size(); ++i) {
                        const T* g = node.grad.data() + i * d;
                        T* gx = xn.grad.data() + indices[i] * d;
                        for (std::size_t j = 0; j < d; ++j) gx[j] += g[j];
                      }
                    });
}

/// out = x[row] as a vector of length d.
template <typename T>
Tensor<T> row_at(const Tensor<T>& x, std::size_t row) {
  detail::check_rank2(x, "row_at");
  if (row >= x.rows()) {
    throw ShapeError(str_cat("row_at: row ", row, " out of range for ",
                             shape_str(x.shape())));
  }
  const std::size_t d = x.cols();
  std::vector<T> out(x.values().begin() + row * d,
                     x.values().begin() + (row + 1) * d);
  return make_op<T>({d}, std::move(out), {x},
                    [row, d](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      for (std::size_t j = 0; j < d; ++j) {
                        xn.grad[row * d + j] += node.grad[j];
                      }
                    });
}

/// Contiguous row slice [begin, begin + count).
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  detail::check_rank2(x, "slice_rows");
  if (begin + count > x.rows()) {
    throw ShapeError(str_cat("slice_rows: range [", begin, ", ", begin + count,
                             ") out of bounds for ", shape_str(x.shape())));
  }
  const std::size_t d = x.cols();
  std::vector<T> out(x.values().begin() + begin * d,
                     x.values().begin() + (begin + count) * d);
  return make_op<T>({count, d}, std::move(out), {x},
                    [begin, d](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      const std::size_t n = node.grad.size();
                      T* gx = xn.grad.data() + begin * d;
                      for (std::size_t i = 0; i < n; ++i) gx[i] += node.grad[i];
                    });
}

/// Contiguous column slice [begin, begin + count).
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  detail::check_rank2(x, "slice_cols");
  if (begin + count > x.cols()) {
    throw ShapeError(str_cat("slice_cols: range [", begin, ", ", begin + count,
                             ") out of bounds for ", shape_str(x.shape())));
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(m * count);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(xv.data() + i * n + begin, count, out.data() + i * count);
  }
  return make_op<T>({m, count}, std::move(out), {x},
                    [m, n, begin, count](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < count; ++j) {
                          xn.grad[i * n + begin + j] += node.grad[i * count + j];
                        }
                      }
                    });
}

/// Horizontal concatenation of rank-2 tensors with equal row counts.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check_rank2(p, "concat_cols");
    if (p.rows() != m) {
      throw ShapeError(str_cat("concat_cols: row mismatch ", m, " vs ",
                               p.rows()));
    }
    total += p.cols();
  }
  std::vector<T> out(m * total);
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    auto pv = p.values();
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(pv.data() + i * w, w, out.data() + i * total + offset);
    }
    widths.push_back(w);
    offset += w;
  }
  return make_op<T>({m, total}, std::move(out), parts,
                    [m, total, widths = std::move(widths)](detail::Node<T>& node) {
                      std::size_t offset = 0;
                      for (std::size_t p = 0; p < widths.size(); ++p) {
                        auto& pn = *node.parents[p];
                        const std::size_t w = widths[p];
                        if (pn.requires_grad) {
                          pn.ensure_grad();
                          for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < w; ++j) {
                              pn.grad[i * w + j] +=
                                  node.grad[i * total + offset + j];
                            }
                          }
                        }
                        offset += w;
                      }
                    });
}

/// Stacks equal-length vectors as the rows of a matrix.
template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  const std::size_t d = rows[0].size();
  for (const auto& r : rows) {
    if (r.ndim() != 1 || r.size() != d) {
      throw ShapeError(str_cat("stack_rows: expected vectors of length ", d,
                               ", got ", shape_str(r.shape())));
    }
  }
  const std::size_t m = rows.size();
  std::vector<T> out(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    auto rv = rows[i].values();
    std::copy_n(rv.data(), d, out.data() + i * d);
  }
  return make_op<T>({m, d}, std::move(out), rows,
                    [d](detail::Node<T>& node) {
                      for (std::size_t i = 0; i < node.parents.size(); ++i) {
                        detail::accumulate_grad(*node.parents[i],
                                                node.grad.data() + i * d, d);
                      }
                    });
}

/// Stacks equal-length vectors as the columns of a matrix.
template <typename T>
Tensor<T> stack_cols(const std::vector<Tensor<T>>& cols) {
  if (cols.empty()) throw ShapeError("stack_cols: no inputs");
  const std::size_t m = cols[0].size();
  for (const auto& c : cols) {
    if (c.ndim() != 1 || c.size() != m) {
      throw ShapeError(str_cat("stack_cols: expected vectors of length ", m,
                               ", got ", shape_str(c.shape())));
    }
  }
  const std::size_t n = cols.size();
  std::vector<T> out(m * n);
  for (std::size_t j = 0; j < n; ++j) {
    auto cv = cols[j].values();
    for (std::size_t i = 0; i < m; ++i) out[i * n + j] = cv[i];
  }
  return make_op<T>({m, n}, std::move(out), cols,
                    [m, n](detail::Node<T>& node) {
                      for (std::size_t j = 0; j < n; ++j) {
                        auto& cn = *node.parents[j];
                        if (!cn.requires_grad) continue;
                        cn.ensure_grad();
                        for (std::size_t i = 0; i < m; ++i) {
                          cn.grad[i] += node.grad[i * n + j];
                        }
                      }
                    });
}

/// Concatenates vectors end to end.
template <typename T>
Tensor<T> concat_vectors(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_vectors: no inputs");
  std::vector<T> out;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (p.ndim() != 1) {
      throw ShapeError(str_cat("concat_vectors: expected vectors, got ",
                               shape_str(p.shape())));
    }
    out.insert(out.end(), p.values().begin(), p.values().end());
    sizes.push_back(p.size());
  }
  const std::size_t total = out.size();
  return make_op<T>({total}, std::move(out), parts,
                    [sizes = std::move(sizes)](detail::Node<T>& node) {
                      std::size_t offset = 0;
                      for (std::size_t p = 0; p < sizes.size(); ++p) {
                        detail::accumulate_grad(*node.parents[p],
                                                node.grad.data() + offset,
                                                sizes[p]);
                        offset += sizes[p];
                      }
                    });
}

/// Stacks scalar tensors into a vector.
template <typename T>
Tensor<T> stack_scalars(const std::vector<Tensor<T>>& scalars) {
  if (scalars.empty()) throw ShapeError("stack_scalars: no inputs");
  std::vector<T> out(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].size() != 1) {
      throw ShapeError(str_cat("stack_scalars: input ", i, " has shape ",
                               shape_str(scalars[i].shape())));
    }
    out[i] = scalars[i].at(0);
  }
  return make_op<T>({scalars.size()}, std::move(out), scalars,
                    [](detail::Node<T>& node) {
                      for (std::size_t i = 0; i < node.parents.size(); ++i) {
                        detail::accumulate_grad(*node.parents[i],
                                                node.grad.data() + i, 1);
                      }
                    });
}

/// Element i of a vector as a scalar tensor.
template <typename T>
Tensor<T> element_at(const Tensor<T>& x, std::size_t i) {
  if (x.ndim() != 1 || i >= x.size()) {
    throw ShapeError(str_cat("element_at: index ", i, " invalid for ",
                             shape_str(x.shape())));
  }
  return make_op<T>({}, {x.at(i)}, {x}, [i](detail::Node<T>& node) {
    auto& xn = *node.parents[0];
    if (!xn.requires_grad) return;
    xn.ensure_grad();
    xn.grad[i] += node.grad[0];
  });
}

/// Column j of a rank-2 tensor as a vector.
template <typename T>
Tensor<T> select_col(const Tensor<T>& x, std::size_t col) {
  detail::check_rank2(x, "select_col");
  if (col >= x.cols()) {
    throw ShapeError(str_cat("select_col: column ", col, " out of range for ",
                             shape_str(x.shape())));
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(m);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) out[i] = xv[i * n + col];
  return make_op<T>({m}, std::move(out), {x},
                    [m, n, col](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      for (std::size_t i = 0; i < m; ++i) {
                        xn.grad[i * n + col] += node.grad[i];
                      }
                    });
}

/// out[i] = x[i, targets[i]] for a rank-2 tensor.
template <typename T>
Tensor<T> select_per_row(const Tensor<T>& x, std::vector<std::size_t> targets) {
  detail::check_rank2(x, "select_per_row");
  const std::size_t m = x.rows(), n = x.cols();
  if (targets.size() != m) {
    throw ShapeError(str_cat("select_per_row: ", targets.size(),
                             " targets for ", m, " rows"));
  }
  for (auto t : targets) {
    if (t >= n) {
      throw ShapeError(str_cat("select_per_row: target ", t,
                               " out of range for ", shape_str(x.shape())));
    }
  }
  std::vector<T> out(m);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) out[i] = xv[i * n + targets[i]];
  return make_op<T>({m}, std::move(out), {x},
                    [n, targets = std::move(targets)](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      for (std::size_t i = 0; i < targets.size(); ++i) {
                        xn.grad[i * n + targets[i]] += node.grad[i];
                      }
                    });
}

/// Replaces the listed rows of x with a shared embedding vector; the
/// remaining rows pass through untouched (bitwise).
template <typename T>
Tensor<T> replace_rows(const Tensor<T>& x, std::vector<std::size_t> rows,
                       const Tensor<T>& embedding) {
  detail::check_rank2(x, "replace_rows");
  const std::size_t d = x.cols();
  if (embedding.ndim() != 1 || embedding.size() != d) {
    throw ShapeError(str_cat("replace_rows: embedding ",
                             shape_str(embedding.shape()),
                             " does not match row width ", d));
  }
  for (auto r : rows) {
    if (r >= x.rows()) {
      throw ShapeError(str_cat("replace_rows: row index ", r,
                               " out of range for ", shape_str(x.shape())));
    }
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  auto ev = embedding.values();
  for (auto r : rows) std::copy_n(ev.data(), d, out.data() + r * d);
  std::vector<char> is_replaced(x.rows(), 0);
  for (auto r : rows) is_replaced[r] = 1;
  return make_op<T>(
      x.shape(), std::move(out), {x, embedding},
      [d, rows = std::move(rows),
       is_replaced = std::move(is_replaced)](detail::Node<T>& node) {
        auto& xn = *node.parents[0];
        auto& en = *node.parents[1];
        if (xn.requires_grad) {
          xn.ensure_grad();
          const std::size_t m = is_replaced.size();
          for (std::size_t i = 0; i < m; ++i) {
            if (is_replaced[i]) continue;
            const T* g = node.grad.data() + i * d;
            T* gx = xn.grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) gx[j] += g[j];
          }
        }
        if (en.requires_grad) {
          en.ensure_grad();
          for (auto r : rows) {
            const T* g = node.grad.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) en.grad[j] += g[j];
          }
        }
      });
}

/// Prepends one row to a [T x d] tensor -> [(T+1) x d].
template <typename T>
Tensor<T> prepend_row(const Tensor<T>& row, const Tensor<T>& x) {
  detail::check_rank2(x, "prepend_row");
  const std::size_t d = x.cols();
  if (row.ndim() != 1 || row.size() != d) {
    throw ShapeError(str_cat("prepend_row: row ", shape_str(row.shape()),
                             " does not match width ", d));
  }
  std::vector<T> out;
  out.reserve((x.rows() + 1) * d);
  out.insert(out.end(), row.values().begin(), row.values().end());
  out.insert(out.end(), x.values().begin(), x.values().end());
  return make_op<T>({x.rows() + 1, d}, std::move(out), {row, x},
                    [d](detail::Node<T>& node) {
                      detail::accumulate_grad(*node.parents[0],
                                              node.grad.data(), d);
                      detail::accumulate_grad(*node.parents[1],
                                              node.grad.data() + d,
                                              node.grad.size() - d);
                    });
}

// ---------------------------------------------------------------------------
// Temporal pooling (first `valid` rows only)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_valid_rows(const Tensor<T>& x, std::size_t valid, const char* who) {
  check_rank2(x, who);
  if (valid == 0) throw ShapeError(str_cat(who, ": valid length must be >= 1"));
  if (valid > x.rows()) {
    throw ShapeError(str_cat(who, ": valid length ", valid,
                             " exceeds rows of ", shape_str(x.shape())));
  }
}

}  // namespace detail

/// Per-dimension average of the first `valid` rows.
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x, std::size_t valid) {
  detail::check_valid_rows(x, valid, "mean_rows");
  const std::size_t d = x.cols();
  std::vector<T> out(d, T(0));
  auto xv = x.values();
  for (std::size_t i = 0; i < valid; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += xv[i * d + j];
  }
  const T inv = T(1) / static_cast<T>(valid);
  for (auto& v : out) v *= inv;
  return make_op<T>({d}, std::move(out), {x},
                    [valid, d, inv](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      for (std::size_t i = 0; i < valid; ++i) {
                        for (std::size_t j = 0; j < d; ++j) {
                          xn.grad[i * d + j] += node.grad[j] * inv;
                        }
                      }
                    });
}

namespace detail {

// Shared extremum pooling; cmp returns true when `candidate` replaces `best`.
// Ties keep the earliest row, so gradients route deterministically.
template <typename T, typename Cmp>
Tensor<T> extremum_rows(const Tensor<T>& x, std::size_t valid, Cmp cmp,
                        const char* who) {
  check_valid_rows(x, valid, who);
  const std::size_t d = x.cols();
  std::vector<T> out(d);
  std::vector<std::size_t> arg(d, 0);
  auto xv = x.values();
  for (std::size_t j = 0; j < d; ++j) out[j] = xv[j];
  for (std::size_t i = 1; i < valid; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (cmp(xv[i * d + j], out[j])) {
        out[j] = xv[i * d + j];
        arg[j] = i;
      }
    }
  }
  return make_op<T>({d}, std::move(out), {x},
                    [d, arg = std::move(arg)](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      for (std::size_t j = 0; j < d; ++j) {
                        xn.grad[arg[j] * d + j] += node.grad[j];
                      }
                    });
}

}  // namespace detail

/// Per-dimension max over the first `valid` rows (ties -> earliest row).
template <typename T>
Tensor<T> max_rows(const Tensor<T>& x, std::size_t valid) {
  return detail::extremum_rows(
      x, valid, [](T cand, T best) { return cand > best; }, "max_rows");
}

/// Per-dimension min over the first `valid` rows (ties -> earliest row).
template <typename T>
Tensor<T> min_rows(const Tensor<T>& x, std::size_t valid) {
  return detail::extremum_rows(
      x, valid, [](T cand, T best) { return cand < best; }, "min_rows");
}

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

/// Elementwise x * ln(x) with 0 ln 0 := 0 and zero gradient there.
template <typename T>
Tensor<T> xlogx(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] > T(0) ? xv[i] * std::log(xv[i]) : T(0);
  }
  return make_op<T>(x.shape(), std::move(out), {x},
                    [](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      for (std::size_t i = 0; i < node.grad.size(); ++i) {
                        if (xn.value[i] > T(0)) {
                          xn.grad[i] +=
                              node.grad[i] * (std::log(xn.value[i]) + T(1));
                        }
                      }
                    });
}

/// Inverted dropout. In training mode each element is zeroed with
/// probability p and survivors are scaled by 1/(1-p); evaluation mode is the
/// identity (no node recorded).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, Rng& rng) {
  if (!train || p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout: probability must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < p ? T(0) : keep_scale;
  std::vector<T> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return make_op<T>(x.shape(), std::move(out), {x},
                    [mask = std::move(mask)](detail::Node<T>& node) {
                      auto& xn = *node.parents[0];
                      if (!xn.requires_grad) return;
                      xn.ensure_grad();
                      for (std::size_t i = 0; i < node.grad.size(); ++i) {
                        xn.grad[i] += node.grad[i] * mask[i];
                      }
                    });
}

/// Stacks R consecutive rows of [T x F] into single rows -> [T/R x F*R].
/// Trailing T mod R rows are dropped.
template <typename T>
Tensor<T> time_stack(const Tensor<T>& x, std::size_t stack_factor) {
  detail::check_rank2(x, "time_stack");
  if (stack_factor == 0) throw ConfigError("time_stack: factor must be >= 1");
  const std::size_t t = x.rows(), f = x.cols();
  if (t < stack_factor) {
    throw ShapeError(str_cat("time_stack: sequence length ", t,
                             " shorter than stack factor ", stack_factor));
  }
  const std::size_t t_out = t / stack_factor;
  const std::size_t kept = t_out * stack_factor * f;
  std::vector<T> out(x.values().begin(), x.values().begin() + kept);
  return make_op<T>({t_out, f * stack_factor}, std::move(out), {x},
                    [kept](detail::Node<T>& node) {
                      detail::accumulate_grad(*node.parents[0],
                                              node.grad.data(), kept);
                    });
}

}  // namespace melvec

#endif  // MELVEC_OPS_HPP_
