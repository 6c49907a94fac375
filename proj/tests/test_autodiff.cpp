#include <cmath>
#include <functional>

#include "cfil/autodiff.hpp"
#include "cfil/error.hpp"
#include "cfil/gradcheck.hpp"
#include "cfil/ops.hpp"
#include "cfil/selfcheck.hpp"
#include "doctest.h"

using namespace cfil;
using D = Tensor<double>;

TEST_CASE("backward through a product accumulates over shared inputs") {
  auto x = D::from(Shape{2}, {3, -2}, true);
  // L = sum(x * x) + sum(x)
  auto loss = ops::add(ops::sum(ops::mul(x, x)), ops::sum(x));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(7.0));
  CHECK(x.grad()[1] == doctest::Approx(-3.0));
}

TEST_CASE("backward contract violations") {
  auto x = D::from(Shape{2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(ops::mul(x, x)), ContractError);
  auto c = D::from(Shape{2}, {1, 2});
  CHECK_THROWS_AS(backward(ops::sum(c)), ContractError);

  auto other = ops::sum(ops::mul(x, x));
  auto trace = ComputationTrace<double>::collect(ops::sum(x));
  CHECK_FALSE(trace.contains(other));
  CHECK_THROWS_AS(backward(trace, other), ContractError);
}

TEST_CASE("trace contains each node once, in creation order") {
  auto x = D::from(Shape{2}, {1, 2}, true);
  auto y = ops::mul(x, x);
  auto loss = ops::sum(ops::add(y, y));
  auto trace = ComputationTrace<double>::collect(loss);
  CHECK(trace.size() == 3);
  CHECK(trace.contains(y));
  CHECK(trace.contains(loss));
}

TEST_CASE("gradients accumulate across two backward passes until reset") {
  auto x = D::from(Shape{1}, {2}, true);
  backward(ops::sum(ops::scale(x, 3.0)));
  backward(ops::sum(ops::scale(x, 3.0)));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("detached tensors block gradient flow") {
  auto x = D::from(Shape{2}, {1, 2}, true);
  auto y = ops::mul(x, x.detach());
  backward(ops::sum(y));
  CHECK(x.grad()[0] == doctest::Approx(1.0));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("finite differences of a quadratic") {
  auto x = D::from(Shape{2}, {1.5, -0.5});
  auto g = finite_difference_grad<double>(
      [](const D& t) { return t.at(0) * t.at(0) + 3.0 * t.at(1); }, x, 1e-5);
  CHECK(g.at(0) == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(g.at(1) == doctest::Approx(3.0).epsilon(1e-8));
  CHECK_THROWS_AS(finite_difference_grad<double>([](const D&) { return 0.0; }, x, 0.0), ContractError);
  CHECK_THROWS_AS(finite_difference_grad<double>([](const D&) { return std::nan(""); }, x, 1e-5), NumericError);
}

TEST_CASE("relative error uses a denominator floor") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(1e-3));
}

TEST_CASE("check_gradients flags a wrong backward rule") {
  auto x = D::from(Shape{3}, {0.3, -0.7, 1.1});
  // The detached factor hides half of d(x^2)/dx from the graph.
  auto mismatch = check_gradients([&] { return ops::sum(ops::mul(x, x.detach())); }, {{"x", x}}, {});
  CHECK(mismatch.max_relative_error == doctest::Approx(0.5).epsilon(1e-6));
  auto fine = check_gradients([&] { return ops::sum(ops::mul(x, x)); }, {{"x", x}}, {});
  CHECK(fine.max_relative_error < 1e-7);
  CHECK(fine.probed == 3);
}

TEST_CASE("every tensor op passes the finite-difference check") {
  selfcheck::SuiteOptions options;
  options.trials = 100;
  for (const auto& r : selfcheck::numerics_suite(options)) {
    INFO(r.name << " worst at " << r.worst);
    CHECK(r.max_relative_error < 1e-5);
    CHECK(r.probed > 0);
  }
}

TEST_CASE("closed-form logit gradient equals autodiff") {
  selfcheck::SuiteOptions options;
  options.trials = 20;
  CHECK(selfcheck::loss_closed_form_suite(options).max_relative_error < 1e-8);
}
