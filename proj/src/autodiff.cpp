#include "cfil/autodiff.hpp"

#include <algorithm>
#include <unordered_set>

#include "cfil/error.hpp"

namespace cfil {

template <typename T>
ComputationTrace<T> ComputationTrace<T>::collect(const Tensor<T>& root) {
  ComputationTrace trace;
  std::unordered_set<const detail::Node<T>*> seen;
  std::vector<std::shared_ptr<detail::Node<T>>> stack{root.node()};
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    if (!node || !node->backward || !seen.insert(node.get()).second) continue;
    for (const auto& in : node->inputs) stack.push_back(in);
    trace.nodes_.push_back(std::move(node));
  }
  // Sequence numbers are assigned at creation, so they are a topological order.
  std::sort(trace.nodes_.begin(), trace.nodes_.end(),
            [](const auto& a, const auto& b) { return a->sequence < b->sequence; });
  return trace;
}

template <typename T>
bool ComputationTrace<T>::contains(const Tensor<T>& t) const {
  return std::any_of(nodes_.begin(), nodes_.end(), [&](const auto& n) { return n == t.node(); });
}

template <typename T>
void backward(const ComputationTrace<T>& trace, const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward() needs a scalar root, got shape " +
                        (root.defined() ? root.shape().to_string() : std::string("<undefined>")));
  }
  if (!root.requires_grad()) {
    throw ContractError("backward() root does not depend on any tensor that requires a gradient");
  }
  if (root.node()->backward && !trace.contains(root)) {
    throw ContractError("backward() root is not on the supplied trace");
  }
  auto& root_node = *root.node();
  root_node.ensure_grad();
  root_node.grad[0] += T(1);
  const auto& nodes = trace.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node<T>& node = **it;
    node.ensure_grad();
    for (auto& in : node.inputs) {
      if (in->requires_grad) in->ensure_grad();
    }
    node.backward(node);
  }
}

template class ComputationTrace<float>;
template class ComputationTrace<double>;
template void backward(const ComputationTrace<float>&, const Tensor<float>&);
template void backward(const ComputationTrace<double>&, const Tensor<double>&);

}  // namespace cfil
