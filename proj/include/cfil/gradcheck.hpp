#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cfil/rng.hpp"
#include "cfil/tensor.hpp"

namespace cfil {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element
/// of x. x is probed on a private copy; the caller's tensor is untouched.
template <typename T>
Tensor<T> finite_difference_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T h);

/// |analytic - numeric| / max(|analytic|, |numeric|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradCheckOptions {
  double step = 1e-5;
  /// Probe at most this many coordinates per tensor (0 = all).
  Index max_probes_per_tensor = 0;
  double denominator_floor = 1e-6;
  /// A coordinate whose one-sided differences disagree by more than this
  /// (relative to the central estimate) sits on a kink of a piecewise
  /// op such as relu or max pooling and is not differentiable there.
  double kink_threshold = 1e-3;
  /// Only coordinates whose error exceeds this are screened for kinks.
  double kink_screen_above = 1e-7;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  Index probed = 0;
  Index kinks = 0;
  /// "<tensor name>[index]" of the worst coordinate.
  std::string worst;
};

/// Compares backward() against central differences for every named leaf.
/// `loss` must rebuild the graph from the leaves' current values each call
/// and return a scalar.
GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss,
                                std::vector<std::pair<std::string, Tensor<double>>> leaves,
                                const GradCheckOptions& options = {});

}  // namespace cfil
