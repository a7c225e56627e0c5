// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

// Dense float64 inner loops used by the tensor ops. Each kernel exists as a
// portable scalar reference and, on x86-64, an AVX2+FMA variant; the variant
// is picked once at startup from CPUID and may be overridden with
// GFSS_KERNELS=scalar|avx2 or set_backend(). Within one backend every kernel
// has a fixed reduction order, so results are bit-reproducible run to run.
// Backends agree to rounding only (FMA contraction and lane-split sums).

namespace gfss::kernels {

enum class Backend { kScalar, kAvx2 };

const char* backend_name(Backend b);
bool backend_available(Backend b);
Backend active_backend();
/// Throws ContractError if `b` is not available on this CPU.
void set_backend(Backend b);

/// RAII override of the active backend, restoring the previous one on exit.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : previous_(active_backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

double dot(std::span<const double> a, std::span<const double> b);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
/// out = a + b, out = a * b, out = alpha * x (out may alias an input)
void add(std::span<const double> a, std::span<const double> b, std::span<double> out);
void mul(std::span<const double> a, std::span<const double> b, std::span<double> out);
void scale(double alpha, std::span<const double> x, std::span<double> out);

// Row-major GEMMs that accumulate into C.
/// C(m x n) += A(m x k) * B(k x n)
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
/// C(m x n) += A(m x k) * B(n x k)^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
/// C(m x n) += A(k x m)^T * B(k x n)
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);

}  // namespace gfss::kernels
