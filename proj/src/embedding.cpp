#include "glt/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "glt/errors.hpp"
#include "glt/simd/kernels.hpp"

namespace glt {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  for (const auto& r : rows) append_row(std::span<const double>(r.begin(), r.size()));
}

void Matrix::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

void Matrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) {
    cols_ = values.size();
  } else if (values.size() != cols_) {
    throw DimensionError("append_row: expected " + std::to_string(cols_) + " columns, got " +
                         std::to_string(values.size()));
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

double l2_norm(std::span<const double> v) noexcept {
  return std::sqrt(simd::dot(v.data(), v.data(), v.size()));
}

NormalizeResult l2_normalize(std::span<const double> v) {
  NormalizeResult out{EmbeddingVector(v.begin(), v.end()), false};
  const double norm = l2_norm(v);
  if (!(norm > kDegenerateNorm)) {
    out.degenerate = true;
    return out;
  }
  if (std::abs(norm - 1.0) <= 1e-14) return out;
  for (double& x : out.vector) x /= norm;
  return out;
}

std::size_t normalize_rows(Matrix& m) noexcept {
  std::size_t degenerate = 0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double norm = l2_norm(row);
    if (!(norm > kDegenerateNorm)) {
      ++degenerate;
      continue;
    }
    if (std::abs(norm - 1.0) <= 1e-14) continue;
    for (double& x : row) x /= norm;
  }
  return degenerate;
}

CosineResult cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine: length mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na < kDegenerateNorm || nb < kDegenerateNorm) return {0.0, true};
  const double c = simd::dot(a.data(), b.data(), a.size()) / (na * nb);
  return {std::clamp(c, -1.0, 1.0), false};
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) throw ArgumentError("log_sum_exp: empty input");
  const double m = *std::max_element(xs.begin(), xs.end());
  if (std::isinf(m)) return m;
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - m);
  return m + std::log(sum);
}

void validate_embedding(const Matrix& rows, std::span<const double> global, std::size_t d,
                        double tol) {
  if (rows.rows() == 0) throw ArgumentError("embedding has no rows");
  if (rows.cols() != d || global.size() != d) {
    throw DimensionError("embedding width does not match retrieval dimension " +
                         std::to_string(d));
  }
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    if (std::abs(l2_norm(rows.row(r)) - 1.0) > tol) {
      throw ArgumentError("embedding row " + std::to_string(r) + " is not unit-norm");
    }
  }
  if (std::abs(l2_norm(global) - 1.0) > tol) {
    throw ArgumentError("global embedding is not unit-norm");
  }
}

}  // namespace glt
