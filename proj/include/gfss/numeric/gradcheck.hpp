// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "gfss/numeric/autodiff.hpp"

namespace gfss::ad {

struct GradCheckReport {
  /// max over entries of |g_ad - g_fd| / max(1, |g_fd|), one per parameter
  std::vector<double> per_param_max_rel_error;
  double max_rel_error = 0.0;
  double value = 0.0;
};

/// Compares reverse-mode gradients with central differences of step `epsilon`.
/// Throws ContractError unless 0 < epsilon <= 1e-2.
GradCheckReport finite_difference_check(const LossFn& fn, std::span<const Tensor> params, double epsilon = 1e-5);

}  // namespace gfss::ad
