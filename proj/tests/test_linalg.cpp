#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lowrank/cost.hpp"
#include "lowrank/error.hpp"
#include "lowrank/linalg.hpp"
#include "support/test_helpers.hpp"

using namespace lowrank;
using namespace testing_support;

TEST_CASE("matmul: identity passes operand through") {
  const Matrix a = random_matrix(3, 4, 11);
  const Matrix out = matmul(Matrix::identity(3), a);
  CHECK(max_abs_diff(out, a) == 0.0);
}

TEST_CASE("matmul: hand-checked 2x2 by 2x1") {
  Matrix a(2, 2);
  a(0, 0) = 1; a(0, 1) = 2; a(1, 0) = 3; a(1, 1) = 4;
  Matrix b(2, 1);
  b(0, 0) = 0; b(1, 0) = 1;
  const Matrix c = matmul(a, b);
  CHECK(c(0, 0) == 2.0);
  CHECK(c(1, 0) == 4.0);
}

TEST_CASE("matmul: matches the naive triple-loop oracle exactly") {
  const Matrix a = random_matrix(7, 5, 21);
  const Matrix b = random_matrix(5, 3, 22);
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) == 0.0);
}

TEST_CASE("matmul: transposed variants agree with explicit transposes") {
  const Matrix a = random_matrix(6, 4, 31);
  const Matrix b = random_matrix(5, 4, 32);
  CHECK(max_abs_diff(matmul_nt(a, b), naive_matmul(a, transpose(b))) < 1e-12);
  const Matrix c = random_matrix(6, 3, 33);
  CHECK(max_abs_diff(matmul_tn(a, c), naive_matmul(transpose(a), c)) < 1e-12);
}

TEST_CASE("matmul: dimension mismatch names both shapes") {
  const Matrix a = random_matrix(3, 4, 41);
  const Matrix b = random_matrix(5, 2, 42);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("3x4"), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("5x2"), ShapeError);
}

TEST_CASE("matmul: associativity on random triples") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    const Matrix a = random_matrix(6, 5, seed * 100 + 1);
    const Matrix b = random_matrix(5, 7, seed * 100 + 2);
    const Matrix c = random_matrix(7, 4, seed * 100 + 3);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    CHECK(rel_fro_err(left, right) < 1e-9);
  }
}

TEST_CASE("matmul: reports 2*m*k*n flops to the attached ledger") {
  CostLedger ledger;
  {
    LedgerScope scope(&ledger, FlopCategory::other);
    matmul(random_matrix(7, 5, 51), random_matrix(5, 3, 52));
  }
  CHECK(ledger.get(FlopCategory::other) == 2ull * 7 * 5 * 3);
}

TEST_CASE("qr: identity factors as identity") {
  const QrResult f = qr(Matrix::identity(4));
  CHECK(max_abs_diff(f.q, Matrix::identity(4)) < 1e-15);
  CHECK(max_abs_diff(f.r, Matrix::identity(4)) < 1e-15);
  CHECK_FALSE(f.degenerate);
}

TEST_CASE("qr: permutation matrix matches the Gram-Schmidt oracle") {
  Matrix a(2, 2);
  a(0, 1) = 1;
  a(1, 0) = 1;
  const QrResult f = qr(a);
  const GsQr oracle = gram_schmidt_qr(a);
  CHECK(max_abs_diff(f.q, oracle.q) < 1e-14);
  CHECK(max_abs_diff(f.r, oracle.r) < 1e-14);
  CHECK(max_abs_diff(f.q, a) < 1e-14);  // Q is the permutation itself
  CHECK(max_abs_diff(f.r, Matrix::identity(2)) < 1e-14);
}

TEST_CASE("qr: random panels match the Gram-Schmidt oracle") {
  for (uint64_t seed = 1; seed <= 4; ++seed) {
    const Matrix a = random_matrix(12, 5, 600 + seed);
    const QrResult f = qr(a);
    const GsQr oracle = gram_schmidt_qr(a);
    CHECK(max_abs_diff(f.q, oracle.q) < 1e-10);
    CHECK(max_abs_diff(f.r, oracle.r) < 1e-10);
  }
}

TEST_CASE("qr: contract invariants on a random 20x5 panel") {
  const Matrix a = random_matrix(20, 5, 71);
  const QrResult f = qr(a);
  CHECK(orthonormality_deviation(f.q) < 1e-10);
  CHECK(rel_fro_err(matmul(f.q, f.r), a) < 1e-10);
  for (int j = 0; j < f.r.cols(); ++j) CHECK(f.r(j, j) >= 0.0);
  for (int i = 1; i < f.r.rows(); ++i)
    for (int j = 0; j < i; ++j) CHECK(f.r(i, j) == 0.0);
}

TEST_CASE("qr: rank-deficient columns get a deterministic completion") {
  Matrix a = random_matrix(8, 3, 81);
  for (int i = 0; i < 8; ++i) a(i, 2) = a(i, 0) + a(i, 1);  // exact dependence
  const QrResult f = qr(a);
  CHECK(f.degenerate);
  CHECK(orthonormality_deviation(f.q) < 1e-10);
  CHECK(f.r(2, 2) == 0.0);
  CHECK(rel_fro_err(matmul(f.q, f.r), a) < 1e-10);
  // deterministic: identical factors on a second call
  const QrResult g = qr(a);
  CHECK(max_abs_diff(f.q, g.q) == 0.0);
  CHECK(max_abs_diff(f.r, g.r) == 0.0);
}

TEST_CASE("qr: all-zero input yields an orthonormal basis and zero R") {
  const QrResult f = qr(Matrix(5, 2));
  CHECK(f.degenerate);
  CHECK(orthonormality_deviation(f.q) < 1e-14);
  CHECK(frobenius_norm(f.r) == 0.0);
}

TEST_CASE("qr: rejects wide inputs") {
  CHECK_THROWS_AS(qr(random_matrix(3, 5, 91)), ShapeError);
}

TEST_CASE("svd_oracle: diagonal matrix") {
  Matrix a(3, 3);
  a(0, 0) = 3; a(1, 1) = 2; a(2, 2) = 1;
  const SvdResult s = svd_oracle(a);
  REQUIRE(s.s.size() == 3);
  CHECK(s.s[0] == doctest::Approx(3).epsilon(1e-12));
  CHECK(s.s[1] == doctest::Approx(2).epsilon(1e-12));
  CHECK(s.s[2] == doctest::Approx(1).epsilon(1e-12));
  for (int j = 0; j < 3; ++j) {
    // u and v columns equal the canonical basis up to a shared sign
    CHECK(std::fabs(s.u(j, j)) == doctest::Approx(1).epsilon(1e-12));
    CHECK(std::fabs(s.v(j, j)) == doctest::Approx(1).epsilon(1e-12));
    CHECK(s.u(j, j) * s.v(j, j) > 0.0);
  }
}

TEST_CASE("svd_oracle: rank-1 outer product has sigma_1 = |delta||x|") {
  Matrix delta(4, 1), x(5, 1);
  delta(0, 0) = 2.0;  // |delta| = 2
  x(0, 0) = 3.0;      // |x| = 3
  const Matrix outer = matmul_nt(delta, x);  // 4 x 5
  const SvdResult s = svd_oracle(outer);
  CHECK(s.s[0] == doctest::Approx(6).epsilon(1e-12));
  for (size_t j = 1; j < s.s.size(); ++j) CHECK(s.s[j] < 1e-12);
  CHECK(orthonormality_deviation(s.u) < 1e-8);
  CHECK(orthonormality_deviation(s.v) < 1e-8);
}

TEST_CASE("svd_oracle: reconstruction and orthonormality on random inputs") {
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    const Matrix a = random_matrix(10, 6, 1000 + seed);
    const SvdResult s = svd_oracle(a);
    CHECK(orthonormality_deviation(s.u) < 1e-8);
    CHECK(orthonormality_deviation(s.v) < 1e-8);
    for (size_t j = 1; j < s.s.size(); ++j) CHECK(s.s[j] <= s.s[j - 1]);
    CHECK(rel_fro_err(compose_svd(s.u, s.s, s.v), a) < 1e-8);
    // wide orientation
    const SvdResult t = svd_oracle(transpose(a));
    CHECK(rel_fro_err(compose_svd(t.u, t.s, t.v), transpose(a)) < 1e-8);
  }
}

TEST_CASE("svd_oracle: refuses oversized inputs") {
  CHECK_THROWS_AS(svd_oracle(Matrix(513, 513)), ConfigError);
  CHECK_NOTHROW(svd_oracle(random_matrix(4, 600, 3)));  // min dim within limit
}

TEST_CASE("frobenius_norm: trivial values") {
  CHECK(frobenius_norm(Matrix(3, 4)) == 0.0);
  Matrix a(1, 2);
  a(0, 0) = 3;
  a(0, 1) = 4;
  CHECK(frobenius_norm(a) == doctest::Approx(5).epsilon(1e-15));
}

TEST_CASE("frobenius_norm: matches the singular-value identity") {
  const Matrix a = random_matrix(8, 8, 1234);
  const SvdResult s = svd_oracle(a);
  double sum = 0.0;
  for (double v : s.s) sum += v * v;
  CHECK(frobenius_norm(a) == doctest::Approx(std::sqrt(sum)).epsilon(1e-8));
}
