// Copyright 2026 The fastaudio Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense row-major tensors with a reverse-mode tape.
//
// Every differentiable op appends one backward closure to the calling
// thread's Tape when at least one input requires a gradient. backward()
// replays the tape newest-first and then clears it. Recording order is a
// topological order of the graph, so each node's gradient is complete before
// its closure runs.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fast/errors.hpp"

namespace fast {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables tape recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  static Tape& active() {
    thread_local Tape tape;
    return tape;
  }

  void record(BackwardFn fn) { entries_.push_back(std::move(fn)); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  void replay_reverse() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

 private:
  std::vector<BackwardFn> entries_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<detail::Node<T>>()) {
    node_->data.assign(numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<detail::Node<T>>()) {
    if (numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  static Tensor parameter(Shape shape, std::vector<T> data) {
    Tensor t(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t extent(std::ptrdiff_t axis) const {
    const auto r = static_cast<std::ptrdiff_t>(rank());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError("axis out of range for shape " + to_string(shape()));
    return node_->shape[static_cast<std::size_t>(axis)];
  }

  std::span<const T> data() const { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T item() const {
    if (size() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }

  /// In-place access for leaves (initialisation, optimiser updates).
  std::span<T> mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }

  /// Accumulated gradient; zeros when nothing reached this tensor.
  std::vector<T> grad() const {
    if (node_->grad.empty()) return std::vector<T>(size(), T(0));
    return node_->grad;
  }
  std::span<const T> grad_span() const { return node_->grad; }

  void zero_grad() { node_->grad.clear(); }

  /// Deep copy of the values with no tape history.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  const NodePtr& node() const { return node_; }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return Tensor<U>(shape(), std::move(out));
  }

 private:
  NodePtr node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_mode_enabled()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

/// Marks `out` as differentiable and records `fn` if any input needs a gradient.
/// `fn` receives the output gradient; it is skipped when no gradient arrived.
template <typename T, typename Fn>
void record_op(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs, Fn fn) {
  if (!any_requires_grad<T>(inputs)) return;
  out.node()->requires_grad = true;
  std::weak_ptr<Node<T>> weak_out = out.node();
  Tape<T>::active().record([weak_out, fn = std::move(fn)]() mutable {
    auto o = weak_out.lock();
    if (!o || o->grad.empty()) return;
    fn(std::span<const T>(o->grad));
  });
}

/// Adds `g` into the gradient of `t` if it participates in differentiation.
template <typename T>
inline std::vector<T>* grad_sink(const typename Tensor<T>::NodePtr& node) {
  if (!node->requires_grad) return nullptr;
  return &node->ensure_grad();
}

}  // namespace detail

/// Reverse pass from a scalar loss. Gradients accumulate into every
/// grad-enabled leaf; the tape is cleared afterwards.
template <typename T>
void backward(const Tensor<T>& loss) {
  auto& tape = Tape<T>::active();
  if (loss.size() != 1) {
    tape.clear();
    throw UsageError("backward() requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    tape.clear();
    return;
  }
  loss.node()->ensure_grad()[0] += T(1);
  tape.replay_reverse();
  tape.clear();
}

}  // namespace fast
