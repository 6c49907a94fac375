#pragma once

#include <vector>

#include "cfil/weighted_ops.hpp"

namespace cfil::weighted::kernels {

/// out_i = sum_j softmax_j(psi(q_i, k_j)) v_j for one slice of length n.
template <typename T>
void weighted_forward(const T* q, const T* k, const T* v, Index n, DistanceKernel kernel, T* out,
                      std::vector<T>& scratch);

/// Accumulates gradients w.r.t. q, k, v given the output gradient. The
/// weights are recomputed row by row, so memory stays O(n). Gradient
/// pointers may alias each other or be null.
template <typename T>
void weighted_backward(const T* q, const T* k, const T* v, const T* out, const T* gout, Index n,
                       DistanceKernel kernel, T* dq, T* dk, T* dv, std::vector<T>& scratch);

}  // namespace cfil::weighted::kernels
