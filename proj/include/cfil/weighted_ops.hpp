#pragma once

#include <span>
#include <utility>
#include <vector>

#include "cfil/tensor.hpp"

/// Softmax-normalised distance-kernel weighting.
///
/// Given query values q, key values k and value values v (all length n), the
/// weighted operation produces
///
///     f_i = sum_j w_ij v_j,   w_ij = exp(psi(q_i, k_j)) / sum_m exp(psi(q_i, k_m))
///
/// The non-local operation uses q = k = v = x. The local (cross-pair)
/// operation weights x against y and y against x, but each side aggregates
/// its own values: f_x uses (x, y, x) and f_y uses (y, x, y).
namespace cfil::weighted {

enum class SignMode {
  /// psi(a, b) = (a - b)^2 + (a^2 - b^2)
  Positive,
  /// psi(a, b) = -(a - b)^2 + (a^2 - b^2)
  NegatedSquare,
};

const char* to_string(SignMode mode);
SignMode parse_sign_mode(const std::string& text);

/// The quadratic distance kernel. psi(a, a) = 0 and psi is asymmetric:
/// psi(a, b) - psi(b, a) = 2 (a^2 - b^2).
struct DistanceKernel {
  SignMode sign_mode = SignMode::Positive;

  template <typename T>
  T operator()(T a, T b) const {
    const T d = a - b;
    const T square = sign_mode == SignMode::Positive ? d * d : -(d * d);
    return square + (a * a - b * b);
  }
  /// d psi / d a
  template <typename T>
  T d_first(T a, T b) const {
    const T s = sign_mode == SignMode::Positive ? T(2) : T(-2);
    return s * (a - b) + T(2) * a;
  }
  /// d psi / d b
  template <typename T>
  T d_second(T a, T b) const {
    const T s = sign_mode == SignMode::Positive ? T(2) : T(-2);
    return -s * (a - b) - T(2) * b;
  }
};

double psi(double a, double b, DistanceKernel kernel = {});

/// Largest flattened length the weighted ops accept. The weights are dense
/// n x n; the composed route materialises them.
inline constexpr Index kDefaultBudget = 8192;

/// Inputs above this magnitude are rejected on single-precision paths, where
/// the quadratic kernel would overflow the exponent.
inline constexpr double kSinglePrecisionLimit = 1e3;

/// Row-stochastic n x n weights. Row i holds the weights used to update
/// position i; the matrix is not symmetric in general.
template <typename T>
class WeightMatrix {
 public:
  explicit WeightMatrix(Tensor<T> rows);

  Index n() const { return n_; }
  T operator()(Index i, Index j) const { return rows_.at(i * n_ + j); }
  const Tensor<T>& tensor() const { return rows_; }

  /// max_i |sum_j w_ij - 1|
  double max_row_sum_error() const;
  bool entries_in_unit_interval() const;

 private:
  Tensor<T> rows_;
  Index n_;
};

/// n x m matrix psi(q_i, k_j); differentiable in both arguments.
template <typename T>
Tensor<T> pairwise_kernel(const Tensor<T>& queries, const Tensor<T>& keys, DistanceKernel kernel = {});

/// W with w_im = softmax over m of psi(x_i, x_m). x is flattened.
template <typename T>
WeightMatrix<T> nonlocal_weights(const Tensor<T>& x, DistanceKernel kernel = {}, Index budget = kDefaultBudget);

/// (W_x, W_y): W_x rows are softmax over j of psi(x_i, y_j); W_y rows are
/// softmax over i of psi(y_j, x_i).
template <typename T>
std::pair<WeightMatrix<T>, WeightMatrix<T>> local_weights(const Tensor<T>& x, const Tensor<T>& y,
                                                          DistanceKernel kernel = {},
                                                          Index budget = kDefaultBudget);

/// f = W x over the whole flattened tensor; output keeps x's shape.
template <typename T>
Tensor<T> nonlocal_apply(const Tensor<T>& x, DistanceKernel kernel = {}, Index budget = kDefaultBudget);

/// Same as nonlocal_apply, independently for each slice along axis 0.
template <typename T>
Tensor<T> nonlocal_apply_batched(const Tensor<T>& x, DistanceKernel kernel = {}, Index budget = kDefaultBudget);

/// (f_x, f_y) = (W_x x, W_y y); both outputs keep the input shape.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> local_apply(const Tensor<T>& x, const Tensor<T>& y, DistanceKernel kernel = {},
                                            Index budget = kDefaultBudget);

template <typename T>
std::pair<Tensor<T>, Tensor<T>> local_apply_batched(const Tensor<T>& x, const Tensor<T>& y,
                                                    DistanceKernel kernel = {}, Index budget = kDefaultBudget);

/// Composed route: softmax_rows(pairwise_kernel) followed by matmul. Used as
/// a second algebraic route in tests; the fused ops above never materialise W.
template <typename T>
Tensor<T> nonlocal_apply_composed(const Tensor<T>& x, DistanceKernel kernel = {});

// Plain double loops with per-row max subtraction. Ground truth for tests.
std::vector<double> reference_nonlocal(std::span<const double> x, DistanceKernel kernel = {});
std::pair<std::vector<double>, std::vector<double>> reference_local(std::span<const double> x,
                                                                    std::span<const double> y,
                                                                    DistanceKernel kernel = {});
std::vector<double> reference_weights(std::span<const double> queries, std::span<const double> keys,
                                      DistanceKernel kernel = {});

}  // namespace cfil::weighted
