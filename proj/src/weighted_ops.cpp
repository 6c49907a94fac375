#include "cfil/weighted_ops.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <type_traits>

#include "cfil/error.hpp"
#include "cfil/ops.hpp"
#include "graph.hpp"
#include "kernels.hpp"

namespace cfil::weighted {

const char* to_string(SignMode mode) {
  return mode == SignMode::Positive ? "positive" : "negated-square";
}

SignMode parse_sign_mode(const std::string& text) {
  if (text == "positive") return SignMode::Positive;
  if (text == "negated-square") return SignMode::NegatedSquare;
  throw ConfigError("unknown sign mode '" + text + "' (expected positive or negated-square)");
}

double psi(double a, double b, DistanceKernel kernel) { return kernel(a, b); }

template <typename T>
WeightMatrix<T>::WeightMatrix(Tensor<T> rows) : rows_(std::move(rows)) {
  if (rows_.shape().rank() != 2 || rows_.dim(0) != rows_.dim(1)) {
    throw DimensionError("weight matrix must be square, got " + rows_.shape().to_string());
  }
  n_ = rows_.dim(0);
}

template <typename T>
double WeightMatrix<T>::max_row_sum_error() const {
  double worst = 0.0;
  for (Index i = 0; i < n_; ++i) {
    double total = 0.0;
    for (Index j = 0; j < n_; ++j) total += static_cast<double>((*this)(i, j));
    worst = std::max(worst, std::abs(total - 1.0));
  }
  return worst;
}

template <typename T>
bool WeightMatrix<T>::entries_in_unit_interval() const {
  for (T v : rows_.values()) {
    if (!(v >= T(0) && v <= T(1))) return false;
  }
  return true;
}

namespace {

inline std::size_t sz(Index i) { return static_cast<std::size_t>(i); }

template <typename T>
void check_inputs(std::span<const T> values, Index n, Index budget, const char* op) {
  if (n > budget) {
    throw CapacityError(std::string(op) + ": flattened length " + std::to_string(n) + " exceeds the budget of " +
                        std::to_string(budget) + "; reduce the spatial size or channel width before this op");
  }
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
    if constexpr (std::is_same_v<T, float>) {
      if (std::abs(v) > static_cast<T>(kSinglePrecisionLimit)) {
        throw NumericError(std::string(op) + ": |input| " + std::to_string(v) +
                           " above the single-precision limit of 1e3");
      }
    }
  }
}

template <typename T>
T* grad_or_null(detail::Node<T>& node) {
  return node.requires_grad ? node.grad.data() : nullptr;
}

/// Non-local op over `batch` contiguous slices of length n.
template <typename T>
Tensor<T> nonlocal_impl(const Tensor<T>& x, Index batch, DistanceKernel kernel, Index budget) {
  const Index n = x.numel() / batch;
  check_inputs(x.values(), n, budget, "nonlocal_apply");
  std::vector<T> out(sz(x.numel()));
  std::vector<T> scratch;
  const T* xv = x.values().data();
  for (Index b = 0; b < batch; ++b) {
    kernels::weighted_forward(xv + b * n, xv + b * n, xv + b * n, n, kernel, out.data() + b * n, scratch);
  }
  return detail::make_output<T>(x.shape(), std::move(out), {x.node()}, [batch, n, kernel](detail::Node<T>& self) {
    auto& xn = *self.inputs[0];
    std::vector<T> scratch;
    for (Index b = 0; b < batch; ++b) {
      const T* xs = xn.values.data() + b * n;
      T* dx = xn.grad.data() + b * n;
      kernels::weighted_backward(xs, xs, xs, self.values.data() + b * n, self.grad.data() + b * n, n, kernel, dx, dx, dx,
                        scratch);
    }
  });
}

/// Cross op: output slices use (queries, keys, values) = (a, b, a).
template <typename T>
Tensor<T> cross_impl(const Tensor<T>& a, const Tensor<T>& b, Index batch, DistanceKernel kernel) {
  const Index n = a.numel() / batch;
  std::vector<T> out(sz(a.numel()));
  std::vector<T> scratch;
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (Index s = 0; s < batch; ++s) {
    kernels::weighted_forward(av + s * n, bv + s * n, av + s * n, n, kernel, out.data() + s * n, scratch);
  }
  return detail::make_output<T>(
      a.shape(), std::move(out), {a.node(), b.node()}, [batch, n, kernel](detail::Node<T>& self) {
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        T* da = grad_or_null(an);
        T* db = grad_or_null(bn);
        std::vector<T> scratch;
        for (Index s = 0; s < batch; ++s) {
          const Index off = s * n;
          kernels::weighted_backward(an.values.data() + off, bn.values.data() + off, an.values.data() + off,
                            self.values.data() + off, self.grad.data() + off, n, kernel, da ? da + off : nullptr,
                            db ? db + off : nullptr, da ? da + off : nullptr, scratch);
        }
      });
}

template <typename T>
Index leading_batch(const Tensor<T>& x, const char* op) {
  if (x.shape().rank() < 2) {
    throw DimensionError(std::string(op) + " needs a leading batch axis, got " + x.shape().to_string());
  }
  return x.dim(0);
}

template <typename T>
void require_same_shape(const Tensor<T>& x, const Tensor<T>& y, const char* op) {
  if (x.shape() != y.shape()) {
    throw DimensionError(std::string(op) + ": x " + x.shape().to_string() + " and y " + y.shape().to_string() +
                         " differ");
  }
}

}  // namespace

template <typename T>
Tensor<T> pairwise_kernel(const Tensor<T>& queries, const Tensor<T>& keys, DistanceKernel kernel) {
  const Index n = queries.numel(), m = keys.numel();
  std::vector<T> out(sz(n * m));
  const T* q = queries.values().data();
  const T* k = keys.values().data();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) out[sz(i * m + j)] = kernel(q[i], k[j]);
  return detail::make_output<T>(Shape{n, m}, std::move(out), {queries.node(), keys.node()},
                                [n, m, kernel](detail::Node<T>& self) {
                                  auto& qn = *self.inputs[0];
                                  auto& kn = *self.inputs[1];
                                  for (Index i = 0; i < n; ++i) {
                                    for (Index j = 0; j < m; ++j) {
                                      const T g = self.grad[sz(i * m + j)];
                                      const T qi = qn.values[sz(i)], kj = kn.values[sz(j)];
                                      if (qn.requires_grad) qn.grad[sz(i)] += g * kernel.d_first(qi, kj);
                                      if (kn.requires_grad) kn.grad[sz(j)] += g * kernel.d_second(qi, kj);
                                    }
                                  }
                                });
}

template <typename T>
WeightMatrix<T> nonlocal_weights(const Tensor<T>& x, DistanceKernel kernel, Index budget) {
  check_inputs(x.values(), x.numel(), budget, "nonlocal_weights");
  return WeightMatrix<T>(ops::softmax_rows(pairwise_kernel(x, x, kernel)));
}

template <typename T>
std::pair<WeightMatrix<T>, WeightMatrix<T>> local_weights(const Tensor<T>& x, const Tensor<T>& y,
                                                          DistanceKernel kernel, Index budget) {
  if (x.numel() != y.numel()) {
    throw DimensionError("local_weights: lengths differ, " + x.shape().to_string() + " vs " + y.shape().to_string());
  }
  check_inputs(x.values(), x.numel(), budget, "local_weights");
  check_inputs(y.values(), y.numel(), budget, "local_weights");
  return {WeightMatrix<T>(ops::softmax_rows(pairwise_kernel(x, y, kernel))),
          WeightMatrix<T>(ops::softmax_rows(pairwise_kernel(y, x, kernel)))};
}

template <typename T>
Tensor<T> nonlocal_apply(const Tensor<T>& x, DistanceKernel kernel, Index budget) {
  return nonlocal_impl(x, 1, kernel, budget);
}

template <typename T>
Tensor<T> nonlocal_apply_batched(const Tensor<T>& x, DistanceKernel kernel, Index budget) {
  return nonlocal_impl(x, leading_batch(x, "nonlocal_apply_batched"), kernel, budget);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> local_apply(const Tensor<T>& x, const Tensor<T>& y, DistanceKernel kernel,
                                            Index budget) {
  require_same_shape(x, y, "local_apply");
  check_inputs(x.values(), x.numel(), budget, "local_apply");
  check_inputs(y.values(), y.numel(), budget, "local_apply");
  return {cross_impl(x, y, 1, kernel), cross_impl(y, x, 1, kernel)};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> local_apply_batched(const Tensor<T>& x, const Tensor<T>& y, DistanceKernel kernel,
                                                    Index budget) {
  require_same_shape(x, y, "local_apply_batched");
  const Index batch = leading_batch(x, "local_apply_batched");
  check_inputs(x.values(), x.numel() / batch, budget, "local_apply_batched");
  check_inputs(y.values(), y.numel() / batch, budget, "local_apply_batched");
  return {cross_impl(x, y, batch, kernel), cross_impl(y, x, batch, kernel)};
}

template <typename T>
Tensor<T> nonlocal_apply_composed(const Tensor<T>& x, DistanceKernel kernel) {
  const auto weights = nonlocal_weights(x, kernel);
  const Tensor<T> column = ops::reshape(x, Shape{x.numel(), 1});
  return ops::reshape(ops::matmul(weights.tensor(), column), x.shape());
}

std::vector<double> reference_weights(std::span<const double> queries, std::span<const double> keys,
                                      DistanceKernel kernel) {
  const std::size_t n = queries.size(), m = keys.size();
  std::vector<double> w(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) peak = std::max(peak, psi(queries[i], keys[j], kernel));
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) total += std::exp(psi(queries[i], keys[j], kernel) - peak);
    for (std::size_t j = 0; j < m; ++j) w[i * m + j] = std::exp(psi(queries[i], keys[j], kernel) - peak) / total;
  }
  return w;
}

std::vector<double> reference_nonlocal(std::span<const double> x, DistanceKernel kernel) {
  const std::vector<double> w = reference_weights(x, x, kernel);
  const std::size_t n = x.size();
  std::vector<double> f(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < n; ++m) f[i] += w[i * n + m] * x[m];
  return f;
}

std::pair<std::vector<double>, std::vector<double>> reference_local(std::span<const double> x,
                                                                    std::span<const double> y,
                                                                    DistanceKernel kernel) {
  if (x.size() != y.size()) throw DimensionError("reference_local: lengths differ");
  const std::size_t n = x.size();
  const std::vector<double> wx = reference_weights(x, y, kernel);
  const std::vector<double> wy = reference_weights(y, x, kernel);
  std::vector<double> fx(n, 0.0), fy(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      fx[i] += wx[i * n + j] * x[j];
      fy[i] += wy[i * n + j] * y[j];
    }
  }
  return {fx, fy};
}

#define CFIL_INSTANTIATE_WEIGHTED(T)                                                                           \
  template class WeightMatrix<T>;                                                                              \
  template Tensor<T> pairwise_kernel(const Tensor<T>&, const Tensor<T>&, DistanceKernel);                      \
  template WeightMatrix<T> nonlocal_weights(const Tensor<T>&, DistanceKernel, Index);                          \
  template std::pair<WeightMatrix<T>, WeightMatrix<T>> local_weights(const Tensor<T>&, const Tensor<T>&,       \
                                                                     DistanceKernel, Index);                   \
  template Tensor<T> nonlocal_apply(const Tensor<T>&, DistanceKernel, Index);                                  \
  template Tensor<T> nonlocal_apply_batched(const Tensor<T>&, DistanceKernel, Index);                          \
  template std::pair<Tensor<T>, Tensor<T>> local_apply(const Tensor<T>&, const Tensor<T>&, DistanceKernel,     \
                                                       Index);                                                 \
  template std::pair<Tensor<T>, Tensor<T>> local_apply_batched(const Tensor<T>&, const Tensor<T>&,             \
                                                               DistanceKernel, Index);                         \
  template Tensor<T> nonlocal_apply_composed(const Tensor<T>&, DistanceKernel);

CFIL_INSTANTIATE_WEIGHTED(float)
CFIL_INSTANTIATE_WEIGHTED(double)

}  // namespace cfil::weighted
