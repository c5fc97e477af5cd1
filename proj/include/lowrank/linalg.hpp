#pragma once

#include <vector>

#include "lowrank/matrix.hpp"

namespace lowrank {

// Matrix products. All variants report 2*rows*inner*cols FLOPs to the
// attached ledger (see cost.hpp).
Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b

double frobenius_norm(const Matrix& a);

// max |q^T q - I|; raw loops, never touches the ledger (instrumentation).
double orthonormality_deviation(const Matrix& q);

// Thin QR with the uniqueness convention diag(R) >= 0: whenever the raw
// factorization produces a negative diagonal entry, the corresponding Q
// column and R row are negated. If a column's residual drops below 1e-12
// the factorization substitutes the first canonical basis vector
// orthogonalized against the prior columns, zeroes that diagonal entry,
// and sets degenerate.
struct QrResult {
  Matrix q;  // m x k, orthonormal columns
  Matrix r;  // k x k, upper triangular, diag >= 0
  bool degenerate = false;
};

QrResult qr(const Matrix& a);  // requires a.rows >= a.cols >= 1

// Full SVD by one-sided Jacobi, for verification at small sizes only
// (min(rows, cols) <= 512). Not for the training path.
struct SvdResult {
  Matrix u;               // m x r
  std::vector<double> s;  // r, non-increasing, non-negative
  Matrix v;               // n x r
};

SvdResult svd_oracle(const Matrix& a);

}  // namespace lowrank
