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

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor<T> is a cheap handle onto a graph node. Every operation records
// the adjoint closure needed to replay gradients; backward() replays the
// recorded tape in reverse execution order. T is float for training and
// double for gradient verification.

#ifndef MELVEC_TENSOR_HPP_
#define MELVEC_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "melvec/common.hpp"

namespace melvec {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {

inline std::uint64_t next_node_seq() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  bool backward_done = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node<T>&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Accumulates `incoming` into the node's grad buffer if it participates in
// differentiation; silently ignored for constants.
template <typename T>
void accumulate_grad(Node<T>& node, const T* incoming, std::size_t n) {
  if (!node.requires_grad) return;
  node.ensure_grad();
  T* g = node.grad.data();
  for (std::size_t i = 0; i < n; ++i) g[i] += incoming[i];
}

}  // namespace detail

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<T> data) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError(str_cat("Tensor: shape ", shape_str(shape),
                               " does not match data length ", data.size()));
    }
    Tensor t;
    t.n_ = std::make_shared<detail::Node<T>>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    t.n_->seq = detail::next_node_seq();
    return t;
  }

  static Tensor zeros(Shape shape) {
    return full(std::move(shape), T(0));
  }

  static Tensor full(Shape shape, T v) {
    std::vector<T> data(shape_numel(shape), v);
    return from_data(std::move(shape), std::move(data));
  }

  static Tensor scalar(T v) { return from_data({}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
    std::vector<T> data(shape_numel(shape));
    for (auto& x : data) x = static_cast<T>(rng.normal()) * stddev;
    return from_data(std::move(shape), std::move(data));
  }

  static Tensor rand_uniform(Shape shape, Rng& rng, T lo, T hi) {
    std::vector<T> data(shape_numel(shape));
    for (auto& x : data) x = static_cast<T>(rng.uniform(lo, hi));
    return from_data(std::move(shape), std::move(data));
  }

  bool defined() const { return n_ != nullptr; }

  const Shape& shape() const { return node_ref().shape; }
  std::size_t size() const { return node_ref().value.size(); }
  std::size_t ndim() const { return node_ref().shape.size(); }
  std::size_t dim(std::size_t i) const { return node_ref().shape.at(i); }
  /// First / second dimension of a rank-2 tensor.
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<const T> values() const {
    return {node_ref().value.data(), node_ref().value.size()};
  }

  T item() const {
    if (size() != 1) {
      throw ShapeError(str_cat("Tensor::item: tensor has shape ",
                               shape_str(shape()), ", expected a scalar"));
    }
    return node_ref().value[0];
  }

  T at(std::size_t flat_index) const { return node_ref().value.at(flat_index); }

  Tensor& set_requires_grad(bool v = true) {
    auto& n = node_ref();
    if (v && !n.parents.empty()) {
      throw Error("set_requires_grad: only leaf tensors may be marked");
    }
    n.requires_grad = v;
    return *this;
  }

  bool requires_grad() const { return node_ref().requires_grad; }

  bool has_grad() const {
    return defined() && node_ref().grad.size() == node_ref().value.size();
  }

  std::span<const T> grad() const {
    const auto& n = node_ref();
    if (n.grad.size() != n.value.size()) {
      throw Error("Tensor::grad: gradient not populated; run backward first");
    }
    return {n.grad.data(), n.grad.size()};
  }

  void zero_grad() {
    auto& n = node_ref();
    n.grad.assign(n.value.size(), T(0));
  }

  /// Unrecorded mutation; reserved for initialization and optimizer updates
  /// between steps, never while a recorded graph referencing this tensor is
  /// still to be differentiated.
  std::span<T> mutable_values() {
    return {node_ref().value.data(), node_ref().value.size()};
  }

  std::span<T> mutable_grad() {
    auto& n = node_ref();
    n.ensure_grad();
    return {n.grad.data(), n.grad.size()};
  }

  /// Value copy with a different scalar type (drops the graph).
  template <typename U>
  Tensor<U> cast() const {
    const auto& n = node_ref();
    std::vector<U> data(n.value.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] = static_cast<U>(n.value[i]);
    }
    return Tensor<U>::from_data(n.shape, std::move(data));
  }

  /// Same values, detached from the recorded graph.
  Tensor detach() const {
    const auto& n = node_ref();
    return from_data(n.shape, n.value);
  }

  std::shared_ptr<detail::Node<T>> node() const { return n_; }

 private:
  detail::Node<T>& node_ref() {
    if (!n_) throw Error("Tensor: operation on an undefined tensor");
    return *n_;
  }
  const detail::Node<T>& node_ref() const {
    if (!n_) throw Error("Tensor: operation on an undefined tensor");
    return *n_;
  }

  std::shared_ptr<detail::Node<T>> n_;

  template <typename U>
  friend Tensor<U> make_op(Shape, std::vector<U>, std::vector<Tensor<U>>,
                           std::function<void(detail::Node<U>&)>);
};

/// Creates the output of a differentiable operation. The backprop closure
/// receives the finished output node (to read its gradient) and accumulates
/// into the captured parents. Recording happens only when an input
/// participates in differentiation.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(detail::Node<T>&)> backprop) {
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), std::move(value));
  bool tracked = false;
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) tracked = true;
  }
  if (tracked) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) {
      if (in.defined()) node->parents.push_back(in.node());
    }
    node->backprop = std::move(backprop);
  }
  return out;
}

// ---------------------------------------------------------------------------
// GradTape and backward
// ---------------------------------------------------------------------------

/// The ordered record of operations reachable from one loss. Replaying runs
/// every adjoint in reverse execution order; replay is idempotent (grads are
/// reset and recomputed each time).
template <typename T>
class GradTape {
 public:
  static GradTape from_loss(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ShapeError("backward: loss must be a defined scalar tensor");
    }
    if (!loss.requires_grad()) {
      throw Error(
          "backward: loss is detached from any recorded graph "
          "(no tensor on its path requires grad)");
    }
    GradTape tape;
    tape.root_ = loss.node();
    std::unordered_set<const detail::Node<T>*> seen;
    std::vector<std::shared_ptr<detail::Node<T>>> stack{tape.root_};
    while (!stack.empty()) {
      auto node = std::move(stack.back());
      stack.pop_back();
      if (!node->requires_grad) continue;
      if (!seen.insert(node.get()).second) continue;
      for (const auto& p : node->parents) stack.push_back(p);
      tape.order_.push_back(std::move(node));
    }
    // Execution order is a valid topological order, so reverse-seq replay
    // visits every node after all of its consumers.
    std::sort(tape.order_.begin(), tape.order_.end(),
              [](const auto& a, const auto& b) { return a->seq > b->seq; });
    return tape;
  }

  void replay() {
    for (auto& node : order_) {
      node->grad.assign(node->value.size(), T(0));
    }
    root_->grad[0] = T(1);
    for (auto& node : order_) {
      if (node->backprop) node->backprop(*node);
    }
  }

  std::size_t num_recorded() const { return order_.size(); }

 private:
  GradTape() = default;
  std::shared_ptr<detail::Node<T>> root_;
  std::vector<std::shared_ptr<detail::Node<T>>> order_;
};

/// Populates gradients for every requires-grad tensor reachable from `loss`.
/// A second call on the same loss is an error; rebuild the graph instead.
template <typename T>
void backward(const Tensor<T>& loss) {
  auto tape = GradTape<T>::from_loss(loss);
  if (loss.node()->backward_done) {
    throw Error(
        "backward: gradients for this loss were already computed; "
        "rebuild the graph before differentiating again");
  }
  tape.replay();
  loss.node()->backward_done = true;
}

}  // namespace melvec

#endif  // MELVEC_TENSOR_HPP_
