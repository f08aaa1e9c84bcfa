#include "msar/tensor_ops.hpp"

#include "support/test_helpers.hpp"

#include <doctest.h>

using namespace msar;
using msar::testing::random_matrix;

TEST_CASE("kron identity blocks") {
  CHECK(kron(Matrix::Identity(2, 2), Matrix::Identity(3, 3))
            .isApprox(Matrix::Identity(6, 6)));
}

TEST_CASE("kron definition expansion") {
  Matrix a(2, 2), j(2, 2);
  a << 1, 2, 3, 4;
  j << 0, 1, 1, 0;
  const Matrix k = kron(a, j);
  REQUIRE(k.rows() == 4);
  for (Index bi = 0; bi < 2; ++bi)
    for (Index bj = 0; bj < 2; ++bj)
      CHECK(k.block(2 * bi, 2 * bj, 2, 2).isApprox(a(bi, bj) * j));
}

TEST_CASE("kron of a row vector against a square factor has the penalty shape") {
  const Index n = 3, q = 2;
  Rng rng(1);
  const Matrix yt = random_matrix(rng, 1, n * q);
  const Matrix omega = random_matrix(rng, n * q, n * q);
  const Matrix k = kron(yt, omega);
  CHECK(k.rows() == n * q);
  CHECK(k.cols() == (n * q) * (n * q));
}

TEST_CASE("kron is bilinear in its first argument") {
  Rng rng(2);
  const Matrix a = random_matrix(rng, 3, 2);
  const Matrix b = random_matrix(rng, 2, 4);
  CHECK(kron(2.5 * a, b).isApprox(2.5 * kron(a, b)));
}

TEST_CASE("kron respects the memory cap") {
  CHECK_THROWS_AS(kron(Matrix::Zero(600, 600), Matrix::Zero(600, 600), 1 << 20),
                  std::length_error);
}

TEST_CASE("vec stacks columns") {
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  Vector expect(4);
  expect << 1, 3, 2, 4;
  CHECK(vec(m).isApprox(expect));
  Vector id(4);
  id << 1, 0, 0, 1;
  CHECK(vec(Matrix::Identity(2, 2)).isApprox(id));
}

TEST_CASE("unvec inverts vec") {
  Rng rng(3);
  const Matrix m = random_matrix(rng, 4, 3);
  CHECK(unvec(vec(m), 4, 3).isApprox(m));
  CHECK_THROWS_AS(unvec(Vector::Zero(5), 2, 2), std::invalid_argument);
}

TEST_CASE("kron(A,B) vec(X) = vec(B X A^T)") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Index ra = 1 + static_cast<Index>(rng.next_u64() % 5);
    const Index ca = 1 + static_cast<Index>(rng.next_u64() % 5);
    const Index rb = 1 + static_cast<Index>(rng.next_u64() % 5);
    const Index cb = 1 + static_cast<Index>(rng.next_u64() % 5);
    const Matrix a = random_matrix(rng, ra, ca);
    const Matrix b = random_matrix(rng, rb, cb);
    const Matrix x = random_matrix(rng, cb, ca);
    CHECK((kron(a, b) * vec(x)).isApprox(vec(b * x * a.transpose()), 1e-12));
  }
}

TEST_CASE("kron_vec_apply equals the explicit Kronecker route") {
  Rng rng(5);
  SUBCASE("identity case") {
    Vector y(3);
    y << 1, 2, 3;
    CHECK(kron_vec_apply(Matrix::Identity(3, 3), y, Matrix::Identity(3, 3)).isApprox(y));
  }
  SUBCASE("zero matrix") {
    Vector y(4);
    y << 1, -1, 2, 0.5;
    CHECK(kron_vec_apply(random_matrix(rng, 4, 4), y, Matrix::Zero(4, 4)).norm() == 0.0);
  }
  SUBCASE("random instances up to nq = 12") {
    for (Index d : {4, 8, 12}) {
      const Matrix a = random_matrix(rng, d, d);
      const Matrix m = random_matrix(rng, d, d);
      const Vector y = random_matrix(rng, d, 1);
      const Vector direct = kron(Matrix(y.transpose()), a) * vec(m);
      const Vector fast = kron_vec_apply(a, y, m);
      CHECK(msar::testing::rel_error(fast, direct) < 1e-10);
    }
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(kron_vec_apply(Matrix::Zero(3, 3), Vector::Zero(4), Matrix::Zero(4, 4)),
                    std::invalid_argument);
  }
}

TEST_CASE("unit indicator") {
  const Matrix m = UnitIndicator{3, 2, 1}.dense();
  CHECK(m(2, 1) == 1.0);
  CHECK(m.sum() == 1.0);
  CHECK_THROWS_AS((UnitIndicator{2, 2, 0}.dense()), std::invalid_argument);
}

TEST_CASE("spectral radius") {
  Matrix d(2, 2);
  d << 0.3, -0.3, 0.5, 0.4;
  CHECK(spectral_radius(d) == doctest::Approx(std::sqrt(0.27)).epsilon(1e-10));
}
