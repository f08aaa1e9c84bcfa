#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace msar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Cap on explicitly materialized Kronecker products (bytes). Identity-based
/// paths must be used for anything bigger.
inline constexpr std::size_t kKronMemoryCap = std::size_t{2} * 1024 * 1024 * 1024;

/// Zero matrix of size dim x dim with a single 1 at (row, col).
struct UnitIndicator {
  Index dim = 0;
  Index row = 0;
  Index col = 0;

  Matrix dense() const;
};

/// Kronecker product A (x) B, materialized densely.
/// Throws std::length_error when the result would exceed cap_bytes.
Matrix kron(const Matrix& a, const Matrix& b, std::size_t cap_bytes = kKronMemoryCap);

/// Column-stacking vec operator. All Jacobian layouts in this library follow
/// this (column-major) convention.
Vector vec(const Matrix& m);

/// Inverse of vec: reshape a rows*cols vector back into a matrix.
Matrix unvec(const Vector& v, Index rows, Index cols);

/// (y^T (x) A) vec(M) = A * M * y without forming the nq x (nq)^2 Kronecker
/// factor. A and M must be square of size y.size().
Vector kron_vec_apply(const Matrix& a, const Vector& y, const Matrix& m);

/// Largest absolute eigenvalue of a square matrix.
double spectral_radius(const Matrix& m);

}  // namespace msar
