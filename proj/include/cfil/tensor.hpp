#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cfil/shape.hpp"

namespace cfil {

template <typename T>
class Tensor;

namespace detail {

/// Storage and graph record behind a Tensor handle. A node that was produced
/// by a differentiable op keeps its inputs alive and knows how to push its
/// gradient back into them.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;
  std::uint64_t sequence = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
};

std::uint64_t next_sequence();

}  // namespace detail

/// Dense row-major array with an optional gradient accumulator.
///
/// Tensor is a cheap shared handle. Copies alias the same storage; use
/// clone() for a deep copy. Values written by an op are never modified
/// afterwards except for leaf parameters updated by an optimizer.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index numel() const { return node_->shape.numel(); }
  Index dim(Index axis) const { return node_->shape[axis]; }

  std::span<const T> values() const { return node_->values; }
  /// Mutable access for leaves (initialisation, optimizer updates, FD probes).
  std::span<T> mutable_values() { return node_->values; }
  T item() const;
  T at(Index flat) const { return node_->values[static_cast<std::size_t>(flat)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);

  /// Gradient accumulated by backward(); all-zero when nothing reached it.
  std::span<const T> grad() const;
  bool has_grad() const { return node_->grad.size() == node_->values.size(); }
  void zero_grad();

  Tensor clone() const;
  /// Same values, detached from the graph.
  Tensor detach() const;

  template <typename U>
  Tensor<U> cast() const;

  // Used by op implementations.
  static Tensor from_node(std::shared_ptr<detail::Node<T>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> out(node_->values.begin(), node_->values.end());
  return Tensor<U>::from(node_->shape, std::move(out), node_->requires_grad);
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cfil
