// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace gfss {

struct GradientCaseResult {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;  // worst instance
  bool passed = false;
};

struct GradientSuiteReport {
  std::vector<GradientCaseResult> cases;
  double tolerance = 0.0;
  double seconds = 0.0;

  bool passed() const;
};

/// Compares reverse-mode gradients with central differences on random small
/// instances of every differentiable op and of the loss compositions used in
/// adaptation (LDAM, L_pi, KD, transition branch, full objective).
GradientSuiteReport run_gradient_suite(std::size_t instances_per_case = 100, std::uint64_t seed = 0,
                                       double tolerance = 1e-4, double epsilon = 1e-5);

}  // namespace gfss
