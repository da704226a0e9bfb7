// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Values are fixed at
// construction; only gradient buffers and, for parameter leaves, the values
// updated by an optimizer are mutated afterwards. Operations that take an
// input requiring gradients record a backward closure, and backward() on a
// scalar walks the recorded graph in reverse topological order.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uattn {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Thread-local switch for graph recording. Forward passes run under a
/// NoGradGuard build no backward closures and keep no parents alive.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data,
                          bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros when nothing has been accumulated yet.
  std::vector<T> grad() const;
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  /// New leaf holding a copy of the values, cut from the graph.
  Tensor detach() const;
  /// Deep copy of the values with an independent node (same requires_grad).
  Tensor clone() const;

  /// Seeds d(self)/d(self) = 1 and accumulates into every reachable leaf that
  /// requires gradients. Requires a single-element tensor.
  void backward() const;

  /// True when every value is finite.
  bool all_finite() const;

  NodeT* node() const { return node_.get(); }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<NodeT> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Converts values between precisions; the result is a fresh leaf.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& src, bool requires_grad = false) {
  std::vector<To> out(src.data().begin(), src.data().end());
  return Tensor<To>::from_data(src.shape(), std::move(out), requires_grad);
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace uattn
