#include "lowrank/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "lowrank/cost.hpp"
#include "lowrank/error.hpp"

namespace lowrank {

namespace {

// c(m x n) += a(m x p) * b(p x n); ikj order so the inner loop runs over
// contiguous rows of b and c.
void gemm_nn_acc(const double* a, const double* b, double* c, int m, int p, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * p;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int k = 0; k < p; ++k) {
      const double aik = arow[k];
      const double* brow = b + static_cast<size_t>(k) * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c(m x n) = a(m x p) * b(n x p)^T; row-by-row dot products. Eight
// independent accumulator lanes per dot product: a fixed summation order
// the compiler can map onto vector FMAs without reassociating.
void gemm_nt_set(const double* a, const double* b, double* c, int m, int p, int n) {
  constexpr int kLanes = 8;
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * p;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<size_t>(j) * p;
      double lane[kLanes] = {};
      int k = 0;
      for (; k + kLanes <= p; k += kLanes)
        for (int l = 0; l < kLanes; ++l) lane[l] += arow[k + l] * brow[k + l];
      double tail = 0.0;
      for (; k < p; ++k) tail += arow[k] * brow[k];
      crow[j] = (((lane[0] + lane[1]) + (lane[2] + lane[3])) +
                 ((lane[4] + lane[5]) + (lane[6] + lane[7]))) +
                tail;
    }
  }
}

// c(m x n) += a(p x m)^T * b(p x n); rank-1 accumulation per row of a/b.
void gemm_tn_acc(const double* a, const double* b, double* c, int m, int p, int n) {
  for (int k = 0; k < p; ++k) {
    const double* arow = a + static_cast<size_t>(k) * m;
    const double* brow = b + static_cast<size_t>(k) * n;
    for (int i = 0; i < m; ++i) {
      const double aki = arow[i];
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += aki * brow[j];
    }
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ShapeError(strfmt("matmul: %dx%d * %dx%d (inner dimensions differ)",
                            a.rows(), a.cols(), b.rows(), b.cols()));
  Matrix c(a.rows(), b.cols());
  gemm_nn_acc(a.data().data(), b.data().data(), c.data().data(), a.rows(), a.cols(), b.cols());
  ledger_add(2ull * a.rows() * a.cols() * b.cols());
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw ShapeError(strfmt("matmul_nt: %dx%d * (%dx%d)^T (inner dimensions differ)",
                            a.rows(), a.cols(), b.rows(), b.cols()));
  Matrix c(a.rows(), b.rows());
  gemm_nt_set(a.data().data(), b.data().data(), c.data().data(), a.rows(), a.cols(), b.rows());
  ledger_add(2ull * a.rows() * a.cols() * b.rows());
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw ShapeError(strfmt("matmul_tn: (%dx%d)^T * %dx%d (inner dimensions differ)",
                            a.rows(), a.cols(), b.rows(), b.cols()));
  Matrix c(a.cols(), b.cols());
  gemm_tn_acc(a.data().data(), b.data().data(), c.data().data(), a.cols(), a.rows(), b.cols());
  ledger_add(2ull * a.cols() * a.rows() * b.cols());
  return c;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double orthonormality_deviation(const Matrix& q) {
  double dev = 0.0;
  for (int i = 0; i < q.cols(); ++i) {
    for (int j = i; j < q.cols(); ++j) {
      double dot = 0.0;
      for (int r = 0; r < q.rows(); ++r) dot += q(r, i) * q(r, j);
      dev = std::max(dev, std::fabs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  return dev;
}

/* Householder QR (Trefethen & Bau, Algorithm 10.1) with two additions:
   a deterministic completion for rank-deficient columns, and a sign pass
   that makes diag(R) non-negative so the factorization is unique. */
QrResult qr(const Matrix& a) {
  const int m = a.rows();
  const int k = a.cols();
  if (k < 1 || m < k)
    throw ShapeError(strfmt("qr: need rows >= cols >= 1, got %dx%d", m, k));

  constexpr double kDeficientTol = 1e-12;

  Matrix w = a;                       // working copy, reflected in place
  Matrix vs(m, k);                    // Householder vectors, column j in rows j..m-1
  std::vector<bool> deficient(k, false);
  uint64_t flops = 0;

  // Reflect columns j..k-1 of w by the reflector stored in vs column j.
  auto apply_reflector = [&](int j, Matrix& target, int first_col) {
    for (int c = first_col; c < target.cols(); ++c) {
      double dot = 0.0;
      for (int i = j; i < m; ++i) dot += vs(i, j) * target(i, c);
      for (int i = j; i < m; ++i) target(i, c) -= 2.0 * dot * vs(i, j);
    }
    flops += 4ull * (m - j) * (target.cols() - first_col);
  };

  for (int j = 0; j < k; ++j) {
    double norm_x = 0.0;
    for (int i = j; i < m; ++i) norm_x += w(i, j) * w(i, j);
    norm_x = std::sqrt(norm_x);
    flops += 2ull * (m - j);

    if (norm_x < kDeficientTol) {
      // Residual column is (numerically) in the span of prior columns.
      // Substitute the first canonical basis vector that still has mass in
      // the complement; reflecting e_c by the prior Householder vectors
      // orthogonalizes it against the prior columns.
      deficient[j] = true;
      int chosen = -1;
      Matrix cand(m, 1);
      for (int c = 0; c < m; ++c) {
        for (int i = 0; i < m; ++i) cand(i, 0) = (i == c) ? 1.0 : 0.0;
        for (int jj = 0; jj < j; ++jj) {
          double dot = 0.0;
          for (int i = jj; i < m; ++i) dot += vs(i, jj) * cand(i, 0);
          for (int i = jj; i < m; ++i) cand(i, 0) -= 2.0 * dot * vs(i, jj);
        }
        double tail = 0.0;
        for (int i = j; i < m; ++i) tail += cand(i, 0) * cand(i, 0);
        if (std::sqrt(tail) > 1e-6) {
          chosen = c;
          break;
        }
      }
      // The tails of the reflected canonical vectors span the whole
      // complement, so one of them always qualifies.
      (void)chosen;
      for (int i = j; i < m; ++i) w(i, j) = cand(i, 0);
      norm_x = 0.0;
      for (int i = j; i < m; ++i) norm_x += w(i, j) * w(i, j);
      norm_x = std::sqrt(norm_x);
    }

    const double head = w(j, j);
    const double sign = head >= 0.0 ? 1.0 : -1.0;
    double norm_v = 0.0;
    for (int i = j; i < m; ++i) {
      vs(i, j) = w(i, j);
      if (i == j) vs(i, j) += sign * norm_x;
      norm_v += vs(i, j) * vs(i, j);
    }
    norm_v = std::sqrt(norm_v);
    for (int i = j; i < m; ++i) vs(i, j) /= norm_v;
    flops += 3ull * (m - j);

    apply_reflector(j, w, j);
  }

  // R: upper triangle of the reflected matrix; deficient diagonals are
  // truncated to exactly zero (their true residual was below tolerance).
  Matrix r(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = i; j < k; ++j) r(i, j) = w(i, j);
  for (int j = 0; j < k; ++j)
    if (deficient[j]) r(j, j) = 0.0;

  // Explicit thin Q: apply reflectors in reverse to the thin identity.
  Matrix q(m, k);
  for (int j = 0; j < k; ++j) q(j, j) = 1.0;
  for (int j = k - 1; j >= 0; --j) apply_reflector(j, q, j);

  // Uniqueness: flip signs so diag(R) >= 0.
  for (int j = 0; j < k; ++j) {
    if (r(j, j) < 0.0) {
      for (int i = 0; i < m; ++i) q(i, j) = -q(i, j);
      for (int c = j; c < k; ++c) r(j, c) = -r(j, c);
    }
  }

  ledger_add(flops);

  QrResult out;
  out.q = std::move(q);
  out.r = std::move(r);
  out.degenerate = std::find(deficient.begin(), deficient.end(), true) != deficient.end();
  return out;
}

namespace {

// Hestenes one-sided Jacobi on the thin orientation (rows >= cols): rotate
// column pairs of the working copy until they are mutually orthogonal, which
// implicitly diagonalizes a^T a. Column norms become the singular values.
SvdResult svd_tall(const Matrix& a) {
  const int m = a.rows();
  const int n = a.cols();
  Matrix w = a;
  Matrix v = Matrix::identity(n);

  constexpr int kMaxSweeps = 100;
  constexpr double kOrthTol = 1e-14;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double worst = 0.0;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int i = 0; i < m; ++i) {
          app += w(i, p) * w(i, p);
          aqq += w(i, q) * w(i, q);
          apq += w(i, p) * w(i, q);
        }
        const double denom = std::sqrt(app * aqq);
        if (denom == 0.0 || std::fabs(apq) <= kOrthTol * denom) continue;
        worst = std::max(worst, std::fabs(apq) / denom);

        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (int i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (worst < kOrthTol) break;
  }

  // Column norms, sorted non-increasing.
  std::vector<int> order(n);
  std::vector<double> sigma(n);
  for (int j = 0; j < n; ++j) {
    order[j] = j;
    double s2 = 0.0;
    for (int i = 0; i < m; ++i) s2 += w(i, j) * w(i, j);
    sigma[j] = std::sqrt(s2);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return sigma[x] > sigma[y]; });

  SvdResult out;
  out.u = Matrix(m, n);
  out.v = Matrix(n, n);
  out.s.resize(n);
  const double smax = sigma[order[0]];
  const double tiny = std::max(smax, 1.0) * 1e-13;
  int completed = 0;
  for (int j = 0; j < n; ++j) {
    const int src = order[j];
    out.s[j] = sigma[src];
    for (int i = 0; i < n; ++i) out.v(i, j) = v(i, src);
    if (sigma[src] > tiny) {
      for (int i = 0; i < m; ++i) out.u(i, j) = w(i, src) / sigma[src];
    } else {
      completed++;
    }
  }
  if (completed > 0) {
    // Null-space columns of u: deterministic canonical completion. Reuse the
    // QR completion path by factoring the partially filled u.
    int next_canonical = 0;
    for (int j = 0; j < n; ++j) {
      if (out.s[j] > tiny) continue;
      for (int c = next_canonical; c < m; ++c) {
        // orthogonalize e_c against all current columns (two passes)
        std::vector<double> col(m, 0.0);
        col[c] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
          for (int jj = 0; jj < n; ++jj) {
            if (jj == j) continue;
            bool filled = out.s[jj] > tiny || jj < j;
            if (!filled) continue;
            double dot = 0.0;
            for (int i = 0; i < m; ++i) dot += out.u(i, jj) * col[i];
            for (int i = 0; i < m; ++i) col[i] -= dot * out.u(i, jj);
          }
        }
        double norm = 0.0;
        for (double x : col) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 1e-6) {
          for (int i = 0; i < m; ++i) out.u(i, j) = col[i] / norm;
          next_canonical = c + 1;
          break;
        }
      }
    }
  }
  return out;
}

}  // namespace

SvdResult svd_oracle(const Matrix& a) {
  if (a.rows() < 1 || a.cols() < 1)
    throw ShapeError(strfmt("svd_oracle: empty input %dx%d", a.rows(), a.cols()));
  if (std::min(a.rows(), a.cols()) > 512)
    throw ConfigError(strfmt(
        "svd_oracle: min(rows, cols) = %d exceeds the 512 oracle limit; "
        "this routine verifies small instances only",
        std::min(a.rows(), a.cols())));
  if (a.rows() >= a.cols()) return svd_tall(a);
  SvdResult t = svd_tall(transpose(a));
  SvdResult out;
  out.u = std::move(t.v);
  out.v = std::move(t.u);
  out.s = std::move(t.s);
  return out;
}

}  // namespace lowrank
