#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfil/gradcheck.hpp"

/// Gradient verification suites run by tests and by `cfil gradcheck`.
/// Each suite compares reverse-mode gradients with central differences in
/// double precision and reports the worst relative error it saw.
namespace cfil::selfcheck {

struct SuiteResult {
  std::string name;
  double max_relative_error = 0.0;
  /// Op (and coordinate) that produced the worst error.
  std::string worst;
  Index probed = 0;
  Index kinks = 0;
};

struct SuiteOptions {
  int trials = 100;
  std::uint64_t seed = 42;
  double step = 1e-5;
};

/// One entry per differentiable op of the tensor library, each swept over
/// `trials` random inputs of at most 64 elements.
std::vector<SuiteResult> numerics_suite(const SuiteOptions& options);

/// Non-local and local weighted ops, their weight matrices, both sign modes,
/// n <= 16.
std::vector<SuiteResult> weighted_suite(const SuiteOptions& options);

/// Closed-form softmax cross-entropy logit gradient vs autodiff, `trials`
/// random batches. Reports absolute error (the check is absolute, 1e-8).
SuiteResult loss_closed_form_suite(const SuiteOptions& options);

/// loss(fuse(branches)) end to end at the given width scale, batch 2.
SuiteResult network_suite(const SuiteOptions& options, double width_scale, Index probes_per_tensor = 6);

/// Worst entry across results.
SuiteResult worst_of(const std::string& name, const std::vector<SuiteResult>& results);

}  // namespace cfil::selfcheck
