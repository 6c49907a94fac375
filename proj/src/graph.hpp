#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <vector>

#include "cfil/tensor.hpp"

namespace cfil::detail {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// Wraps freshly computed values as an op output. The backward closure and
/// inputs are only kept when some input needs a gradient.
template <typename T>
Tensor<T> make_output(const Shape& shape, std::vector<T> values, std::vector<NodePtr<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->values = std::move(values);
  node->sequence = next_sequence();
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const NodePtr<T>& in) { return in->requires_grad; });
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

}  // namespace cfil::detail
