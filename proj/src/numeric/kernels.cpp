// SPDX-License-Identifier: Apache-2.0
#include "gfss/numeric/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

#include "gfss/errors.hpp"
#include "kernel_table.hpp"

namespace gfss::kernels {
namespace {

using detail::KernelTable;

bool cpu_has_avx2() {
#if defined(GFSS_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& table_for(Backend b) {
#if defined(GFSS_HAVE_AVX2)
  if (b == Backend::kAvx2) return detail::avx2_table();
#endif
  (void)b;
  return detail::scalar_table();
}

Backend initial_backend() {
  if (const char* env = std::getenv("GFSS_KERNELS")) {
    const std::string_view v(env);
    if (v == "scalar") return Backend::kScalar;
    if (v == "avx2" && cpu_has_avx2()) return Backend::kAvx2;
  }
  return cpu_has_avx2() ? Backend::kAvx2 : Backend::kScalar;
}

struct State {
  std::atomic<Backend> backend{initial_backend()};
  std::atomic<const KernelTable*> table{&table_for(backend.load())};
};

State& state() {
  static State s;
  return s;
}

const KernelTable& active() { return *state().table.load(std::memory_order_acquire); }

void check_len(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": length mismatch");
}

}  // namespace

const char* backend_name(Backend b) { return b == Backend::kAvx2 ? "avx2" : "scalar"; }

bool backend_available(Backend b) { return b == Backend::kScalar || cpu_has_avx2(); }

Backend active_backend() { return state().backend.load(); }

void set_backend(Backend b) {
  if (!backend_available(b)) throw ContractError(std::string("kernel backend not available: ") + backend_name(b));
  state().backend.store(b);
  state().table.store(&table_for(b), std::memory_order_release);
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_len(a.size(), b.size(), "dot");
  return active().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_len(x.size(), y.size(), "axpy");
  active().axpy(alpha, x.data(), y.data(), x.size());
}

void add(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  check_len(a.size(), b.size(), "add");
  check_len(a.size(), out.size(), "add");
  active().add(a.data(), b.data(), out.data(), a.size());
}

void mul(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  check_len(a.size(), b.size(), "mul");
  check_len(a.size(), out.size(), "mul");
  active().mul(a.data(), b.data(), out.data(), a.size());
}

void scale(double alpha, std::span<const double> x, std::span<double> out) {
  check_len(x.size(), out.size(), "scale");
  active().scale(alpha, x.data(), out.data(), x.size());
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  active().gemm_nn(m, k, n, a, b, c);
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  active().gemm_nt(m, k, n, a, b, c);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  active().gemm_tn(m, k, n, a, b, c);
}

}  // namespace gfss::kernels
