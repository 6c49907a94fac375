#include "cfil/tensor.hpp"

#include <atomic>

#include "cfil/error.hpp"

namespace cfil {

namespace detail {

std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return from(shape, std::vector<T>(static_cast<std::size_t>(shape.numel()), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(const Shape& shape, std::vector<T> values, bool requires_grad) {
  if (static_cast<Index>(values.size()) != shape.numel()) {
    throw DimensionError("tensor of shape " + shape.to_string() + " needs " +
                         std::to_string(shape.numel()) + " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape;
  node->values = std::move(values);
  node->sequence = detail::next_sequence();
  Tensor t = from_node(std::move(node));
  t.set_requires_grad(requires_grad);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from(Shape{1}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().to_string());
  return node_->values[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on) node_->ensure_grad();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out = from(node_->shape, node_->values, node_->requires_grad);
  if (has_grad()) out.node_->grad = node_->grad;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(node_->shape, node_->values, false);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace cfil
