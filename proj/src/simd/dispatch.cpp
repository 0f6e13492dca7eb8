#include <atomic>

#include "glt/errors.hpp"
#include "glt/simd/kernels.hpp"
#include "kernels_impl.hpp"

namespace glt::simd {

#ifndef GLT_HAVE_AVX2
const KernelTable* avx2_kernels() noexcept { return nullptr; }
#endif

namespace {

const KernelTable& table_for(Isa isa) noexcept {
  if (isa == Isa::Avx2 && avx2_kernels() != nullptr) return *avx2_kernels();
  return scalar_kernels();
}

std::atomic<Isa>& current() noexcept {
  static std::atomic<Isa> isa{detect_isa()};
  return isa;
}

const KernelTable& active() noexcept { return table_for(current().load(std::memory_order_relaxed)); }

}  // namespace

std::string_view isa_name(Isa isa) noexcept { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) noexcept {
  if (isa == Isa::Scalar) return true;
#if defined(GLT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect_isa() noexcept { return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar; }

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw ConfigError("ISA '" + std::string(isa_name(isa)) + "' is not supported on this CPU");
  }
  current().store(isa, std::memory_order_relaxed);
}

double dot(const double* a, const double* b, std::size_t n) noexcept { return active().dot(a, b, n); }

double max_dot(const double* q, const double* rows, std::size_t n_rows, std::size_t d,
               std::size_t* argmax) noexcept {
  return active().max_dot(q, rows, n_rows, d, argmax);
}

double maxsim(const double* q, std::size_t n_q, const double* doc, std::size_t n_d,
              std::size_t d) noexcept {
  return active().maxsim(q, n_q, doc, n_d, d);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept {
  active().axpy(alpha, x, y, n);
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) noexcept {
  active().gemm_nn(a, b, c, m, k, n, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) noexcept {
  active().gemm_nt(a, b, c, m, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) noexcept {
  active().gemm_tn(a, b, c, m, k, n, accumulate);
}

}  // namespace glt::simd
