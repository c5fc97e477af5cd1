#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lowrank/error.hpp"

namespace lowrank {

class Rng;

// Dense row-major matrix of doubles. The one carrier type for weights,
// activation/error blocks, singular-vector panels, and gradients.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0)
      throw ShapeError(strfmt("Matrix: negative shape %dx%d", rows, cols));
    data_.assign(static_cast<size_t>(rows) * cols, 0.0);
  }

  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix gaussian(int rows, int cols, Rng& rng);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  double* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
  const double* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

Matrix transpose(const Matrix& a);

// b += alpha * a
void add_scaled(Matrix& b, const Matrix& a, double alpha);

void scale(Matrix& a, double alpha);

// max |a - b| over entries; shapes must match
double max_abs_diff(const Matrix& a, const Matrix& b);

// Copy rows [row0, row0+count) of src into a new matrix.
Matrix copy_rows(const Matrix& src, int row0, int count);

// Gather the given rows of src into a new matrix, in index order.
Matrix gather_rows(const Matrix& src, std::span<const int32_t> indices);

}  // namespace lowrank
