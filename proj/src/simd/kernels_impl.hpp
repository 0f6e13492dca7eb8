#pragma once

#include <cstddef>

// Per-ISA kernel tables. Only dispatch.cpp and the equivalence tests use these.

namespace glt::simd {

struct KernelTable {
  double (*dot)(const double*, const double*, std::size_t) noexcept;
  double (*max_dot)(const double*, const double*, std::size_t, std::size_t,
                    std::size_t*) noexcept;
  double (*maxsim)(const double*, std::size_t, const double*, std::size_t,
                   std::size_t) noexcept;
  void (*axpy)(double, const double*, double*, std::size_t) noexcept;
  void (*gemm_nn)(const double*, const double*, double*, std::size_t, std::size_t,
                  std::size_t, bool) noexcept;
  void (*gemm_nt)(const double*, const double*, double*, std::size_t, std::size_t,
                  std::size_t, bool) noexcept;
  void (*gemm_tn)(const double*, const double*, double*, std::size_t, std::size_t,
                  std::size_t, bool) noexcept;
};

const KernelTable& scalar_kernels() noexcept;
/// Null when the build has no AVX2 translation unit.
const KernelTable* avx2_kernels() noexcept;

}  // namespace glt::simd
