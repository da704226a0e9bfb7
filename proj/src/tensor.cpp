// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "uattn/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace uattn {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  for (auto e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + to_string(shape));
  }
  const auto n = static_cast<std::size_t>(uattn::numel(shape));
  return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  for (auto e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + to_string(shape));
  }
  if (uattn::numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<NodeT>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

template <typename T>
std::int64_t Tensor<T>::dim(std::int64_t axis) const {
  const auto r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis out of range for shape " + to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<std::int64_t>(index.size()) != rank()) {
    throw ShapeError("index rank mismatch for shape " + to_string(shape()));
  }
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    const auto extent = node_->shape[axis++];
    if (i < 0 || i >= extent) throw ShapeError("index out of range");
    flat = flat * extent + i;
  }
  return node_->data[static_cast<std::size_t>(flat)];
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (node_->grad.empty()) return std::vector<T>(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return from_data(shape(), node_->data, requires_grad());
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (const T v : node_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() requires a single-element output, got " +
                     to_string(shape()));
  }
  // Iterative post-order DFS; reversed, it visits every node before its parents.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += T(1);
  std::unordered_set<NodeT*> done;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    for (const auto& child_parent : node->parents) {
      if (done.count(child_parent.get())) {
        throw Error("autodiff graph visited a node before its dependents");
      }
    }
    if (!node->is_leaf() && !node->grad.empty()) {
      node->backward_fn(*node);
      // Intermediate gradients are not observable; release them eagerly.
      std::vector<T>().swap(node->grad);
    }
    done.insert(node);
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace uattn
