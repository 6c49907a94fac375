#pragma once

#include <cstddef>

#include "cfil/shape.hpp"

namespace cfil::detail {

// Row-major kernels; each accumulates into c.

/// c[m x n] += a[m x k] * b[k x n]
template <typename T>
void gemm_nn(Index m, Index n, Index k, const T* a, const T* b, T* c) {
  for (Index i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (Index p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (Index j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// c[m x n] += a[m x k] * b[n x k]^T
template <typename T>
void gemm_nt(Index m, Index n, Index k, const T* a, const T* b, T* c) {
  for (Index i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (Index j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (Index p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

/// c[m x n] += a[k x m]^T * b[k x n]
template <typename T>
void gemm_tn(Index m, Index n, Index k, const T* a, const T* b, T* c) {
  for (Index p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (Index i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (Index j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace cfil::detail
