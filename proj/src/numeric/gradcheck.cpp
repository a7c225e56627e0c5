// SPDX-License-Identifier: Apache-2.0
#include "gfss/numeric/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "gfss/errors.hpp"

namespace gfss::ad {

GradCheckReport finite_difference_check(const LossFn& fn, std::span<const Tensor> params, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw ContractError("finite_difference_check: epsilon must lie in (0, 1e-2]");
  const ValueAndGrad analytic = value_and_grad(fn, params);

  GradCheckReport report;
  report.value = analytic.value;
  std::vector<Tensor> probe(params.begin(), params.end());
  for (std::size_t p = 0; p < probe.size(); ++p) {
    double worst = 0.0;
    for (std::size_t i = 0; i < probe[p].size(); ++i) {
      const double saved = probe[p][i];
      probe[p][i] = saved + epsilon;
      const double up = evaluate(fn, probe);
      probe[p][i] = saved - epsilon;
      const double down = evaluate(fn, probe);
      probe[p][i] = saved;
      const double fd = (up - down) / (2.0 * epsilon);
      const double err = std::abs(analytic.grads[p][i] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
    report.per_param_max_rel_error.push_back(worst);
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  return report;
}

}  // namespace gfss::ad
