#include "cfil/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "cfil/autodiff.hpp"
#include "cfil/network.hpp"
#include "cfil/ops.hpp"
#include "cfil/rng.hpp"
#include "cfil/weighted_ops.hpp"

namespace cfil::selfcheck {

namespace {

using D = Tensor<double>;
using Leaves = std::vector<std::pair<std::string, D>>;

D random_tensor(const Shape& shape, SeededRng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape.numel()));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return D::from(shape, std::move(v));
}

Index pick(SeededRng& rng, Index lo, Index hi) { return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

/// Scalarises an op output with a fixed random projection so that every
/// output element contributes a distinct weight to the gradient.
D project(const D& out, SeededRng& rng) {
  return ops::sum(ops::mul(out, random_tensor(out.shape(), rng)));
}

struct OpCase {
  std::string name;
  /// Piecewise ops (relu, max pooling) may land a probe on a kink.
  bool piecewise;
  /// Builds fresh leaves for one trial and returns (leaves, loss builder).
  std::function<std::pair<Leaves, std::function<D()>>(SeededRng&)> make;
};

void absorb(SuiteResult& suite, const GradCheckResult& r, const std::string& label) {
  suite.probed += r.probed;
  suite.kinks += r.kinks;
  if (r.max_relative_error >= suite.max_relative_error) {
    suite.max_relative_error = r.max_relative_error;
    suite.worst = label + " " + r.worst;
  }
}

SuiteResult run_case(const OpCase& c, const SuiteOptions& options, SeededRng& rng) {
  SuiteResult suite{c.name, 0.0, "", 0, 0};
  GradCheckOptions gc;
  gc.step = options.step;
  if (!c.piecewise) gc.kink_threshold = std::numeric_limits<double>::infinity();
  for (int t = 0; t < options.trials; ++t) {
    auto [leaves, loss] = c.make(rng);
    gc.seed = rng.next_u64();
    absorb(suite, check_gradients(loss, leaves, gc), c.name);
  }
  return suite;
}

std::vector<OpCase> numerics_cases() {
  std::vector<OpCase> cases;
  cases.push_back({"matmul", false, [](SeededRng& rng) {
                     const Index p = pick(rng, 1, 4), q = pick(rng, 1, 4), r = pick(rng, 1, 4);
                     D a = random_tensor(Shape{p, q}, rng), b = random_tensor(Shape{q, r}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"a", a}, {"b", b}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::matmul(a, b), pr);
                                      })};
                   }});
  cases.push_back({"linear", false, [](SeededRng& rng) {
                     const Index n = pick(rng, 1, 4), in = pick(rng, 1, 5), out = pick(rng, 1, 4);
                     D x = random_tensor(Shape{n, in}, rng), w = random_tensor(Shape{out, in}, rng),
                       b = random_tensor(Shape{out}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"x", x}, {"w", w}, {"b", b}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::linear(x, w, b), pr);
                                      })};
                   }});
  cases.push_back({"conv2d", false, [](SeededRng& rng) {
                     const Index c = pick(rng, 1, 2), h = pick(rng, 3, 4), w = pick(rng, 3, 4), k = pick(rng, 1, 3);
                     const Index f = pick(rng, 1, 2), stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
                     D x = random_tensor(Shape{1, c, h, w}, rng), ker = random_tensor(Shape{f, c, k, k}, rng),
                       b = random_tensor(Shape{f}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"input", x}, {"kernel", ker}, {"bias", b}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::conv2d(x, ker, b, stride, pad), pr);
                                      })};
                   }});
  cases.push_back({"maxpool2d", true, [](SeededRng& rng) {
                     const Index c = pick(rng, 1, 3), side = pick(rng, 2, 4), window = pick(rng, 1, 2),
                                 stride = pick(rng, 1, 2);
                     D x = random_tensor(Shape{1, c, side, side}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"input", x}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::maxpool2d(x, window, stride), pr);
                                      })};
                   }});
  cases.push_back({"global_avg_pool", false, [](SeededRng& rng) {
                     D x = random_tensor(Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"input", x}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::global_avg_pool(x), pr);
                                      })};
                   }});
  cases.push_back({"global_max_pool", true, [](SeededRng& rng) {
                     D x = random_tensor(Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"input", x}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::global_max_pool(x), pr);
                                      })};
                   }});
  cases.push_back({"softmax_rows", false, [](SeededRng& rng) {
                     D x = random_tensor(Shape{pick(rng, 1, 4), pick(rng, 1, 8)}, rng, -3.0, 3.0);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"logits", x}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::softmax_rows(x), pr);
                                      })};
                   }});
  cases.push_back({"reshape", false, [](SeededRng& rng) {
                     const Index a = pick(rng, 1, 4), b = pick(rng, 1, 4);
                     D x = random_tensor(Shape{a, b}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"input", x}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::reshape(x, Shape{b, a}), pr);
                                      })};
                   }});
  cases.push_back({"concat", false, [](SeededRng& rng) {
                     const Index rows = pick(rng, 1, 3), axis = pick(rng, 0, 1);
                     D a = random_tensor(axis == 1 ? Shape{rows, pick(rng, 1, 4)} : Shape{pick(rng, 1, 4), rows}, rng);
                     D b = random_tensor(axis == 1 ? Shape{rows, pick(rng, 1, 4)} : Shape{pick(rng, 1, 4), rows}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"a", a}, {"b", b}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::concat<double>({a, b}, axis), pr);
                                      })};
                   }});
  cases.push_back({"relu", true, [](SeededRng& rng) {
                     D x = random_tensor(Shape{pick(rng, 1, 8), pick(rng, 1, 8)}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"input", x}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::relu(x), pr);
                                      })};
                   }});
  cases.push_back({"add", false, [](SeededRng& rng) {
                     const Shape sh{pick(rng, 1, 4), pick(rng, 1, 4)};
                     D a = random_tensor(sh, rng), b = random_tensor(sh, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"a", a}, {"b", b}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::add(a, b), pr);
                                      })};
                   }});
  cases.push_back({"mul", false, [](SeededRng& rng) {
                     const Shape sh{pick(rng, 1, 4), pick(rng, 1, 4)};
                     D a = random_tensor(sh, rng), b = random_tensor(sh, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"a", a}, {"b", b}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::mul(a, b), pr);
                                      })};
                   }});
  cases.push_back({"scale", false, [](SeededRng& rng) {
                     D x = random_tensor(Shape{pick(rng, 1, 16)}, rng);
                     const double factor = rng.uniform(-2.0, 2.0);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"input", x}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::scale(x, factor), pr);
                                      })};
                   }});
  cases.push_back({"sum", false, [](SeededRng& rng) {
                     D x = random_tensor(Shape{pick(rng, 1, 64)}, rng);
                     return std::pair{Leaves{{"input", x}}, std::function<D()>([=] { return ops::sum(x); })};
                   }});
  cases.push_back({"log", false, [](SeededRng& rng) {
                     D x = random_tensor(Shape{pick(rng, 1, 16)}, rng, 0.2, 2.0);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"input", x}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(ops::log(x), pr);
                                      })};
                   }});
  cases.push_back({"nll_mean", false, [](SeededRng& rng) {
                     const Index n = pick(rng, 1, 6), c = pick(rng, 2, 4);
                     D probs = random_tensor(Shape{n, c}, rng, 0.05, 1.0);
                     std::vector<int> labels(static_cast<std::size_t>(n));
                     for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
                     return std::pair{Leaves{{"probs", probs}},
                                      std::function<D()>([=] { return ops::nll_mean(probs, labels); })};
                   }});
  return cases;
}

std::vector<OpCase> weighted_cases(weighted::DistanceKernel kernel) {
  const std::string tag = std::string(" [") + weighted::to_string(kernel.sign_mode) + "]";
  std::vector<OpCase> cases;
  cases.push_back({"nonlocal_apply" + tag, false, [kernel](SeededRng& rng) {
                     D x = random_tensor(Shape{1, pick(rng, 1, 16)}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"x", x}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(weighted::nonlocal_apply(x, kernel), pr);
                                      })};
                   }});
  cases.push_back({"nonlocal_weights" + tag, false, [kernel](SeededRng& rng) {
                     D x = random_tensor(Shape{1, pick(rng, 1, 16)}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"x", x}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(weighted::nonlocal_weights(x, kernel).tensor(), pr);
                                      })};
                   }});
  cases.push_back({"local_apply" + tag, false, [kernel](SeededRng& rng) {
                     const Index n = pick(rng, 1, 16);
                     D x = random_tensor(Shape{1, n}, rng), y = random_tensor(Shape{1, n}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"x", x}, {"y", y}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        auto [fx, fy] = weighted::local_apply(x, y, kernel);
                                        return ops::add(project(fx, pr), project(fy, pr));
                                      })};
                   }});
  cases.push_back({"local_weights" + tag, false, [kernel](SeededRng& rng) {
                     const Index n = pick(rng, 1, 16);
                     D x = random_tensor(Shape{1, n}, rng), y = random_tensor(Shape{1, n}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"x", x}, {"y", y}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        auto [wx, wy] = weighted::local_weights(x, y, kernel);
                                        return ops::add(project(wx.tensor(), pr), project(wy.tensor(), pr));
                                      })};
                   }});
  cases.push_back({"nonlocal_apply_batched" + tag, false, [kernel](SeededRng& rng) {
                     D x = random_tensor(Shape{2, pick(rng, 1, 2), 2, 2}, rng);
                     const std::uint64_t s = rng.next_u64();
                     return std::pair{Leaves{{"x", x}}, std::function<D()>([=] {
                                        SeededRng pr(s);
                                        return project(weighted::nonlocal_apply_batched(x, kernel), pr);
                                      })};
                   }});
  return cases;
}

}  // namespace

std::vector<SuiteResult> numerics_suite(const SuiteOptions& options) {
  SeededRng rng(options.seed);
  std::vector<SuiteResult> results;
  for (const auto& c : numerics_cases()) results.push_back(run_case(c, options, rng));
  return results;
}

std::vector<SuiteResult> weighted_suite(const SuiteOptions& options) {
  SeededRng rng(options.seed ^ 0x5157u);
  std::vector<SuiteResult> results;
  for (auto mode : {weighted::SignMode::Positive, weighted::SignMode::NegatedSquare}) {
    for (const auto& c : weighted_cases({mode})) results.push_back(run_case(c, options, rng));
  }
  return results;
}

SuiteResult loss_closed_form_suite(const SuiteOptions& options) {
  SeededRng rng(options.seed ^ 0x1055u);
  SuiteResult suite{"loss closed form", 0.0, "", 0, 0};
  for (int t = 0; t < options.trials; ++t) {
    const Index n = pick(rng, 1, 16);
    D logits = random_tensor(Shape{n, 2}, rng, -4.0, 4.0);
    logits.set_requires_grad(true);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = static_cast<int>(rng.below(2));
    const D probs = ops::softmax_rows(logits);
    backward(net::loss(probs, labels));
    const D closed = net::loss_logit_grad_closed_form(probs.detach(), labels);
    for (Index i = 0; i < logits.numel(); ++i) {
      // backward() differentiates the batch mean; the closed form is per sample.
      const double autodiff = logits.grad()[static_cast<std::size_t>(i)] * static_cast<double>(n);
      const double err = std::abs(autodiff - closed.at(i));
      ++suite.probed;
      if (err >= suite.max_relative_error) {
        suite.max_relative_error = err;
        suite.worst = "trial " + std::to_string(t) + " logit[" + std::to_string(i) + "]";
      }
    }
  }
  return suite;
}

SuiteResult network_suite(const SuiteOptions& options, double width_scale, Index probes_per_tensor) {
  net::NetworkConfig config;
  config.nonlocal.width_scale = width_scale;
  // A zero classifier layer would zero every upstream gradient.
  config.zero_head = false;
  SeededRng rng(options.seed ^ 0x4E37u);
  const auto model = net::Model<double>::create(config, rng.next_u64());
  const Index side = config.image_size;
  D parent = random_tensor(Shape{2, 3, side, side}, rng, 0.0, 1.0);
  D child = random_tensor(Shape{2, 3, side, side}, rng, 0.0, 1.0);
  const std::vector<int> labels{1, 0};

  Leaves leaves(model.params().entries().begin(), model.params().entries().end());
  leaves.emplace_back("input.parent", parent);
  leaves.emplace_back("input.child", child);
  auto loss = [&] { return net::loss(model.forward(parent, child).probs, labels); };

  GradCheckOptions gc;
  gc.step = options.step;
  gc.max_probes_per_tensor = probes_per_tensor;
  gc.seed = rng.next_u64();
  SuiteResult suite{"network end-to-end", 0.0, "", 0, 0};
  absorb(suite, check_gradients(loss, leaves, gc), "loss");
  return suite;
}

SuiteResult worst_of(const std::string& name, const std::vector<SuiteResult>& results) {
  SuiteResult out{name, 0.0, "", 0, 0};
  for (const auto& r : results) {
    out.probed += r.probed;
    out.kinks += r.kinks;
    if (r.max_relative_error >= out.max_relative_error) {
      out.max_relative_error = r.max_relative_error;
      out.worst = r.worst;
    }
  }
  return out;
}

}  // namespace cfil::selfcheck
