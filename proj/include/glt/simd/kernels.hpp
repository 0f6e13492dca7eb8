#pragma once

// Dense double-precision kernels behind late-interaction scoring and the
// encoder's matrix products. Every entry point has a portable scalar
// reference and an AVX2+FMA variant; the variant is chosen once at runtime
// from CPUID and can be pinned with set_isa() (tests compare the two).

#include <cstddef>
#include <string_view>

namespace glt::simd {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa) noexcept;
bool isa_supported(Isa isa) noexcept;

/// Best supported ISA on this CPU.
Isa detect_isa() noexcept;
Isa active_isa() noexcept;

/// Pins the dispatch target. Throws glt::ConfigError if the CPU lacks it.
void set_isa(Isa isa);

double dot(const double* a, const double* b, std::size_t n) noexcept;

/// max_j <q, rows_j> over n_rows contiguous rows of width d. Ties keep the
/// lowest row index; argmax may be null.
double max_dot(const double* q, const double* rows, std::size_t n_rows, std::size_t d,
               std::size_t* argmax) noexcept;

/// Sum over the n_q query rows (in row order) of max_dot against the n_d
/// document rows.
double maxsim(const double* q, std::size_t n_q, const double* doc, std::size_t n_d,
              std::size_t d) noexcept;

/// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;

/// C(m x n) (+)= A(m x k) * B(k x n), all row-major.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) noexcept;

/// C(m x n) (+)= A(m x k) * B(n x k)^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) noexcept;

/// C(k x n) (+)= A(m x k)^T * B(m x n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) noexcept;

}  // namespace glt::simd
