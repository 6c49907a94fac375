#include "kernels.hpp"

#include <algorithm>
#include <cmath>

// Built with fast-math so the exp loops vectorise. Callers validate inputs
// (finite, within budget) before reaching these loops.
namespace cfil::weighted::kernels {

namespace {

inline std::size_t sz(Index i) { return static_cast<std::size_t>(i); }

/// One row of softmax weights for query value qi against all keys. Writes
/// unnormalised exponentials into `e` and returns their sum.
template <typename T>
T weight_row(T qi, const T* keys, Index n, DistanceKernel kernel, T* e) {
  const T s = kernel.sign_mode == SignMode::Positive ? T(1) : T(-1);
  const T qq = qi * qi;
  for (Index j = 0; j < n; ++j) {
    const T d = qi - keys[j];
    e[j] = s * (d * d) + (qq - keys[j] * keys[j]);
  }
  T peak = e[0];
  for (Index j = 1; j < n; ++j) peak = std::max(peak, e[j]);
  T total = T(0);
  for (Index j = 0; j < n; ++j) {
    e[j] = std::exp(e[j] - peak);
    total += e[j];
  }
  return total;
}

}  // namespace

template <typename T>
void weighted_forward(const T* q, const T* k, const T* v, Index n, DistanceKernel kernel, T* out,
                      std::vector<T>& scratch) {
  scratch.resize(sz(n));
  T* e = scratch.data();
  for (Index i = 0; i < n; ++i) {
    const T total = weight_row(q[i], k, n, kernel, e);
    T acc = T(0);
    for (Index j = 0; j < n; ++j) acc += e[j] * v[j];
    out[i] = acc / total;
  }
}

/// Accumulates gradients w.r.t. q, k, v given the output gradient. The
/// weights are recomputed row by row, so memory stays O(n). Gradient
/// pointers may alias each other; key and value gradients are gathered in
/// scratch and added at the end.
template <typename T>
void weighted_backward(const T* q, const T* k, const T* v, const T* out, const T* gout, Index n,
                       DistanceKernel kernel, T* dq, T* dk, T* dv, std::vector<T>& scratch) {
  scratch.assign(sz(3 * n), T(0));
  T* e = scratch.data();
  T* dk_acc = e + n;
  T* dv_acc = e + 2 * n;
  std::vector<T> dq_acc(sz(n), T(0));
  const T s2 = kernel.sign_mode == SignMode::Positive ? T(2) : T(-2);
  for (Index i = 0; i < n; ++i) {
    const T gi = gout[i];
    if (gi == T(0)) continue;
    const T inv = T(1) / weight_row(q[i], k, n, kernel, e);
    const T fi = out[i];
    const T qi = q[i];
    T dqi = T(0);
    for (Index j = 0; j < n; ++j) {
      const T w = e[j] * inv;
      dv_acc[j] += gi * w;
      const T dlogit = w * gi * (v[j] - fi);
      const T d = qi - k[j];
      dqi += dlogit * (s2 * d + T(2) * qi);
      dk_acc[j] += dlogit * (-s2 * d - T(2) * k[j]);
    }
    dq_acc[sz(i)] = dqi;
  }
  for (Index j = 0; j < n; ++j) {
    if (dq) dq[j] += dq_acc[sz(j)];
    if (dk) dk[j] += dk_acc[j];
    if (dv) dv[j] += dv_acc[j];
  }
}

template void weighted_forward<float>(const float*, const float*, const float*, Index, DistanceKernel, float*,
                                      std::vector<float>&);
template void weighted_forward<double>(const double*, const double*, const double*, Index, DistanceKernel, double*,
                                       std::vector<double>&);
template void weighted_backward<float>(const float*, const float*, const float*, const float*, const float*, Index,
                                       DistanceKernel, float*, float*, float*, std::vector<float>&);
template void weighted_backward<double>(const double*, const double*, const double*, const double*, const double*,
                                        Index, DistanceKernel, double*, double*, double*, std::vector<double>&);

}  // namespace cfil::weighted::kernels
