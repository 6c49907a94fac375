#include "cfil/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfil/autodiff.hpp"
#include "cfil/error.hpp"

namespace cfil {

template <typename T>
Tensor<T> finite_difference_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T h) {
  if (!(h > T(0))) throw ContractError("finite_difference_grad: step must be positive");
  Tensor<T> probe = x.detach();
  std::vector<T> grad(static_cast<std::size_t>(x.numel()));
  auto values = probe.mutable_values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T original = values[i];
    values[i] = original + h;
    const T plus = f(probe);
    values[i] = original - h;
    const T minus = f(probe);
    values[i] = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("finite_difference_grad: non-finite evaluation at element " + std::to_string(i));
    }
    grad[i] = (plus - minus) / (T(2) * h);
  }
  return Tensor<T>::from(x.shape(), std::move(grad));
}

template Tensor<float> finite_difference_grad(const std::function<float(const Tensor<float>&)>&,
                                              const Tensor<float>&, float);
template Tensor<double> finite_difference_grad(const std::function<double(const Tensor<double>&)>&,
                                               const Tensor<double>&, double);

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss,
                                std::vector<std::pair<std::string, Tensor<double>>> leaves,
                                const GradCheckOptions& options) {
  for (auto& [name, leaf] : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  const Tensor<double> root = loss();
  const double base = root.item();
  backward(root);

  SeededRng rng(options.seed);
  GradCheckResult result;
  const double h = options.step;
  for (auto& [name, leaf] : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    std::vector<Index> coords(static_cast<std::size_t>(leaf.numel()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (options.max_probes_per_tensor > 0 && leaf.numel() > options.max_probes_per_tensor) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(static_cast<std::size_t>(options.max_probes_per_tensor));
      std::sort(coords.begin(), coords.end());
    }
    auto values = leaf.mutable_values();
    for (Index c : coords) {
      const auto i = static_cast<std::size_t>(c);
      const double original = values[i];
      values[i] = original + h;
      const double plus = loss().item();
      values[i] = original - h;
      const double minus = loss().item();
      values[i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("gradient check: non-finite loss probing " + name + "[" + std::to_string(c) + "]");
      }
      const double central = (plus - minus) / (2.0 * h);
      const double err = relative_error(analytic[i], central, options.denominator_floor);
      if (err > options.kink_screen_above) {
        const double forward = (plus - base) / h;
        const double backward_diff = (base - minus) / h;
        const double spread = std::abs(forward - backward_diff) /
                              std::max(std::abs(central), options.denominator_floor);
        if (spread > options.kink_threshold) {
          ++result.kinks;
          continue;
        }
      }
      ++result.probed;
      if (err >= result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = name + "[" + std::to_string(c) + "]";
      }
    }
  }
  return result;
}

}  // namespace cfil
