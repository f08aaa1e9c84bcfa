#pragma once

#include "msar/tensor_ops.hpp"
#include "msar/weights.hpp"

#include <cstdint>
#include <utility>

namespace msar {

/// Parameters of the model Y = W Y D + X B + E, with rows of E i.i.d.
/// mean-zero with covariance Sigma_e.
struct MsarParams {
  Matrix D;        // q x q, spectral radius strictly below 1
  Matrix B;        // p x q
  Matrix Sigma_e;  // q x q, symmetric positive definite

  Index q() const { return D.rows(); }
  Index p() const { return B.rows(); }
  void validate() const;
};

struct Dataset {
  Matrix Y;  // n x q responses
  Matrix X;  // n x p covariates

  Index n() const { return Y.rows(); }
  Index q() const { return Y.cols(); }
  Index p() const { return X.cols(); }
  Vector y() const { return vec(Y); }
};

struct ErrorLaw {
  enum class Kind {
    gaussian,
    student_t,
    none,  // test hook: disturbances identically zero
  };
  Kind kind = Kind::gaussian;
  double df = 5.0;  // student_t only; must exceed 2 so the variance is finite
  Matrix Sigma_e;   // scale matrix (equals the covariance for gaussian)

  void validate() const;
};

// The stacked response y = vec(Y) lists Y column by column, so block j of y
// is the j-th response over all units. The operators below use the identity
// (A (x) B) vec(V) = vec(B V A^T) instead of forming nq x nq matrices, and
// accept dense or sparse weights matrices.

/// (D^T (x) W) v = vec(W V D).
template <class WeightMat>
Vector apply_lag(const WeightMat& W, const Matrix& D, const Vector& v) {
  const Index q = D.rows();
  const auto V = Eigen::Map<const Matrix>(v.data(), v.size() / q, q);
  return vec(Matrix(W * (V * D)));
}

/// S v = v - (D^T (x) W) v.
template <class WeightMat>
Vector apply_S(const WeightMat& W, const Matrix& D, const Vector& v) {
  return v - apply_lag(W, D, v);
}

/// S^T v = v - (D (x) W^T) v.
template <class WeightMat>
Vector apply_St(const WeightMat& W, const Matrix& D, const Vector& v) {
  const Index q = D.rows();
  const auto V = Eigen::Map<const Matrix>(v.data(), v.size() / q, q);
  return v - vec(Matrix(W.transpose() * (V * D.transpose())));
}

/// S^T v given the already-transposed weights matrix.
template <class WeightMat>
Vector apply_St_pre(const WeightMat& Wt, const Matrix& D, const Vector& v) {
  const Index q = D.rows();
  const auto V = Eigen::Map<const Matrix>(v.data(), v.size() / q, q);
  return v - vec(Matrix(Wt * (V * D.transpose())));
}

/// (Sigma (x) I_n) v = vec(V Sigma) for symmetric Sigma.
Vector apply_sigma_kron(const Matrix& sigma, const Vector& v);

/// (I_{ab} (x) W) v: block a of the result is W times block b of v.
template <class WeightMat>
Vector apply_unit_kron(const WeightMat& W, Index a, Index b, const Vector& v) {
  const Index n = W.rows();
  const Index q = v.size() / n;
  const auto V = Eigen::Map<const Matrix>(v.data(), n, q);
  Vector out = Vector::Zero(v.size());
  out.segment(a * n, n) = W * V.col(b);
  return out;
}

/// Xtilde beta = vec(X B) with Xtilde = I_q (x) X.
Vector apply_xtilde(const Matrix& X, const Vector& beta, Index q);

/// Xtilde^T v = vec(X^T V).
Vector apply_xtilde_t(const Matrix& X, const Vector& v, Index q);

/// S = I_nq - D^T (x) W, materialized densely. Throws when the spectral
/// radius of D is not below 1.
Matrix build_S(const Matrix& D, const SpatialWeights& W);

/// mu = S^{-1} Xtilde beta and Omega = S^{-1} (Sigma_e (x) I_n) S^{-T}.
std::pair<Vector, Matrix> mean_and_cov(const MsarParams& params, const SpatialWeights& W,
                                       const Matrix& X);

/// Draw one dataset from the reduced form y = S^{-1}(Xtilde beta + eps).
/// Deterministic given the seed.
Dataset simulate(const MsarParams& params, const SpatialWeights& W, const Matrix& X,
                 const ErrorLaw& law, std::uint64_t seed);

/// Least-squares objective || M S^T (Sigma_e^{-1} (x) I_n) (S y - Xtilde beta) ||^2
/// with M the inverted diagonal of the precision matrix.
double objective_Q(const MsarParams& params, const SpatialWeights& W, const Dataset& data);

/// Diagonal of M as a vector; M^{-1} = diag(Sigma_e^{-1}) (x) I_n
///   + diag(D Sigma_e^{-1} D^T) (x) diag(W^T W).
Vector m_diagonal(const Matrix& D, const Matrix& sigma_e_inv, const Vector& wtw_diag);

/// diag(W^T W) as a vector.
Vector wtw_diagonal(const SpatialWeights& W);

/// OLS-type coefficient (Xtilde^T Xtilde)^{-1} Xtilde^T S y given D_hat.
Vector beta_tilde_of(const Matrix& D_hat, const SpatialWeights& W, const Dataset& data);

/// Fitted mean S^{-1} P S y where P projects onto the columns of Xtilde.
Vector mu_tilde_of(const Matrix& D_hat, const SpatialWeights& W, const Dataset& data);

}  // namespace msar
