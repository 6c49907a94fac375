#pragma once

#include <vector>

#include "cfil/tensor.hpp"

/// Differentiable tensor operations. All ops are row-major, N x C x H x W
/// where images are involved, and record themselves for backward() whenever
/// any input requires a gradient.
namespace cfil::ops {

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// y = x * w^T + b for x [N x in], w [out x in], b [out].
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, Index stride,
                 Index padding);

/// Square-window max pooling; ties send the gradient to the first maximum in
/// scan order.
template <typename T> Tensor<T> maxpool2d(const Tensor<T>& input, Index window, Index stride);

template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& input);
template <typename T> Tensor<T> global_max_pool(const Tensor<T>& input);

/// Row-wise softmax over the last axis of a rank-2 tensor, max-shifted.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& logits);

template <typename T> Tensor<T> reshape(const Tensor<T>& t, const Shape& shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, Index axis);

template <typename T> Tensor<T> relu(const Tensor<T>& t);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& t, T factor);
template <typename T> Tensor<T> sum(const Tensor<T>& t);
template <typename T> Tensor<T> log(const Tensor<T>& t);

/// Mean over rows of -log(max(probs[i, labels[i]], 1e-12)) for probs [N x C].
template <typename T> Tensor<T> nll_mean(const Tensor<T>& probs, const std::vector<int>& labels);

}  // namespace cfil::ops
