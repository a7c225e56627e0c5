// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "gfss/numeric/tensor.hpp"

namespace gfss {

/// Heavy-ball SGD: v <- momentum * v + g; p <- p - lr * v.
/// `velocity` is sized on first use. Throws ShapeError on any shape mismatch.
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, std::vector<Tensor>& velocity, double lr,
              double momentum);

}  // namespace gfss
