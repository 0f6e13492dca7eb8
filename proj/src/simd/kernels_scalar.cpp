#include <algorithm>
#include <cstring>

#include "kernels_impl.hpp"

namespace glt::simd {
namespace {

double dot(const double* a, const double* b, std::size_t n) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
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
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
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

const KernelTable& scalar_kernels() noexcept { return kTable; }

}  // namespace glt::simd
