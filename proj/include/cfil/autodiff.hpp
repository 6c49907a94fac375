#pragma once

#include <memory>
#include <vector>

#include "cfil/tensor.hpp"

namespace cfil {

/// Executed differentiable ops reachable from a root, in execution order.
/// Every node's inputs precede it, so replaying back to front visits each
/// node once with its full output gradient already accumulated.
template <typename T>
class ComputationTrace {
 public:
  static ComputationTrace collect(const Tensor<T>& root);

  std::size_t size() const { return nodes_.size(); }
  bool contains(const Tensor<T>& t) const;
  /// Nodes in execution order (oldest first).
  const std::vector<std::shared_ptr<detail::Node<T>>>& nodes() const { return nodes_; }

 private:
  std::vector<std::shared_ptr<detail::Node<T>>> nodes_;
};

/// Seeds d(root)/d(root) = 1 and replays the trace in reverse. Gradients
/// accumulate into every requires_grad tensor on the trace; leaves keep
/// their gradient until zero_grad().
template <typename T>
void backward(const ComputationTrace<T>& trace, const Tensor<T>& root);

template <typename T>
void backward(const Tensor<T>& root) {
  backward(ComputationTrace<T>::collect(root), root);
}

extern template class ComputationTrace<float>;
extern template class ComputationTrace<double>;

}  // namespace cfil
