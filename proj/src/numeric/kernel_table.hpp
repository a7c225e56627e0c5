// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace gfss::kernels::detail {

struct KernelTable {
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*add)(const double*, const double*, double*, std::size_t);
  void (*mul)(const double*, const double*, double*, std::size_t);
  void (*scale)(double, const double*, double*, std::size_t);
  void (*gemm_nn)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
  void (*gemm_nt)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
  void (*gemm_tn)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
};

const KernelTable& scalar_table();
#if defined(GFSS_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

}  // namespace gfss::kernels::detail
