// Compiled with -mavx2 -mfma; only reached after CPUID confirms support.

#include <immintrin.h>

#include <algorithm>

#include "kernels_impl.hpp"

namespace glt::simd {
namespace {

inline double horizontal_add(__m256d v) noexcept {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
}

double dot(const double* a, const double* b, std::size_t n) noexcept {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  if (i + 4 <= n) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    i += 4;
  }
  double acc = horizontal_add(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double max_dot(const double* q, const double* rows, std::size_t n_rows, std::size_t d,
               std::size_t* argmax) noexcept {
  double best = dot(q, rows, d);
  std::size_t best_j = 0;
  for (std::size_t j = 1; j < n_rows; ++j) {
    const double s = dot(q, rows + j * d, d);
    if (s > best) {
      best = s;
      best_j = j;
    }
  }
  if (argmax) *argmax = best_j;
  return best;
}

double maxsim(const double* q, std::size_t n_q, const double* doc, std::size_t n_d,
              std::size_t d) noexcept {
  double total = 0.0;
  for (std::size_t i = 0; i < n_q; ++i) total += max_dot(q + i * d, doc, n_d, d, nullptr);
  return total;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) noexcept {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) axpy(a[i * k + p], b + p * n, ci, n);
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) noexcept {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double s = dot(a + i * k, b + j * k, k);
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) noexcept {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) axpy(a[i * k + p], b + i * n, c + p * n, n);
  }
}

constexpr KernelTable kTable{&dot, &max_dot, &maxsim, &axpy, &gemm_nn, &gemm_nt, &gemm_tn};

}  // namespace

const KernelTable* avx2_kernels() noexcept { return &kTable; }

}  // namespace glt::simd
