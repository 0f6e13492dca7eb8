#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace glt {

/// Row-major dense matrix of doubles. Rows are contiguous so a row can be
/// handed to the SIMD kernels as a plain pointer.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  void fill(double v) noexcept;
  /// Appends one row; the first row fixes the column count.
  void append_row(std::span<const double> values);

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using EmbeddingVector = std::vector<double>;

/// Below this L2 norm a vector is treated as degenerate.
inline constexpr double kDegenerateNorm = 1e-12;

struct NormalizeResult {
  EmbeddingVector vector;
  bool degenerate = false;  // zero-norm input returned unchanged
};

struct CosineResult {
  double value = 0.0;
  bool degenerate = false;
};

double l2_norm(std::span<const double> v) noexcept;

/// v / ||v||. Inputs that are already unit length (to ~1e-14) come back
/// unchanged, which makes the operation exactly idempotent.
NormalizeResult l2_normalize(std::span<const double> v);

/// Normalizes every row in place; returns the number of degenerate rows.
std::size_t normalize_rows(Matrix& m) noexcept;

/// Clamped to [-1, 1]. Throws DimensionError on length mismatch.
CosineResult cosine(std::span<const double> a, std::span<const double> b);

/// Stable log(sum(exp(xs))). Throws ArgumentError on empty input.
double log_sum_exp(std::span<const double> xs);

struct DocumentEmbedding {
  std::uint32_t page_id = 0;
  Matrix patches;          // L_d x d
  EmbeddingVector global;  // d

  std::size_t dim() const noexcept { return patches.cols(); }
};

struct QueryEmbedding {
  std::uint32_t query_id = 0;
  Matrix tokens;           // L_q x d
  EmbeddingVector global;  // d

  std::size_t dim() const noexcept { return tokens.cols(); }
};

struct DescriptorEmbedding {
  std::uint32_t page_id = 0;
  Matrix tokens;           // L_g x d, contextualized descriptor states
  EmbeddingVector global;  // g_desc

  std::size_t dim() const noexcept { return tokens.cols(); }
};

/// Checks shape (>= 1 row, matching widths) and unit norms within tol.
/// Throws DimensionError / ArgumentError describing the first violation.
void validate_embedding(const Matrix& rows, std::span<const double> global, std::size_t d,
                        double tol = 1e-6);

}  // namespace glt
