// SPDX-License-Identifier: Apache-2.0
#include "gfss/optim.hpp"

#include "gfss/errors.hpp"
#include "gfss/numeric/kernels.hpp"

namespace gfss {

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, std::vector<Tensor>& velocity, double lr,
              double momentum) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter and gradient counts differ");
  if (velocity.empty()) {
    velocity.reserve(params.size());
    for (const Tensor* p : params) velocity.emplace_back(p->shape());
  }
  if (velocity.size() != params.size()) throw ShapeError("sgd_step: velocity count differs from parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    require_same_shape(p.shape(), grads[i].shape(), "sgd_step");
    require_same_shape(p.shape(), velocity[i].shape(), "sgd_step");
    Tensor& v = velocity[i];
    kernels::scale(momentum, v.data(), v.data());
    kernels::axpy(1.0, grads[i].data(), v.data());
    kernels::axpy(-lr, v.data(), p.data());
  }
}

}  // namespace gfss
