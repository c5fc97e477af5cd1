#include "lowrank/matrix.hpp"

#include <cmath>

#include "lowrank/rng.hpp"

namespace lowrank {

Matrix Matrix::gaussian(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data_) v = rng.gaussian();
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

void add_scaled(Matrix& b, const Matrix& a, double alpha) {
  if (!b.same_shape(a))
    throw ShapeError(strfmt("add_scaled: %dx%d vs %dx%d", b.rows(), b.cols(), a.rows(), a.cols()));
  double* bp = b.data().data();
  const double* ap = a.data().data();
  for (size_t i = 0; i < b.size(); ++i) bp[i] += alpha * ap[i];
}

void scale(Matrix& a, double alpha) {
  for (double& v : a.data()) v *= alpha;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw ShapeError(strfmt("max_abs_diff: %dx%d vs %dx%d", a.rows(), a.cols(), b.rows(), b.cols()));
  double m = 0.0;
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(ap[i] - bp[i]));
  return m;
}

Matrix copy_rows(const Matrix& src, int row0, int count) {
  if (row0 < 0 || count < 0 || row0 + count > src.rows())
    throw ShapeError(strfmt("copy_rows: [%d, %d) out of %d rows", row0, row0 + count, src.rows()));
  Matrix out(count, src.cols());
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < src.cols(); ++j) out(i, j) = src(row0 + i, j);
  return out;
}

Matrix gather_rows(const Matrix& src, std::span<const int32_t> indices) {
  Matrix out(static_cast<int>(indices.size()), src.cols());
  for (size_t i = 0; i < indices.size(); ++i) {
    const int32_t r = indices[i];
    if (r < 0 || r >= src.rows())
      throw ShapeError(strfmt("gather_rows: index %d out of %d rows", r, src.rows()));
    const double* s = src.row(r);
    double* d = out.row(static_cast<int>(i));
    for (int j = 0; j < src.cols(); ++j) d[j] = s[j];
  }
  return out;
}

}  // namespace lowrank
