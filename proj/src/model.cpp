#include "msar/model.hpp"

#include "msar/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <cmath>
#include <stdexcept>

namespace msar {

namespace {

Eigen::Map<const Matrix> as_cols(const Vector& v, Index q) {
  const Index n = v.size() / q;
  return Eigen::Map<const Matrix>(v.data(), n, q);
}

Matrix sigma_inverse(const Matrix& sigma_e) {
  Eigen::LLT<Matrix> llt(sigma_e);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("Sigma_e is not symmetric positive definite");
  return llt.solve(Matrix::Identity(sigma_e.rows(), sigma_e.cols()));
}

}  // namespace

void MsarParams::validate() const {
  if (D.rows() != D.cols()) throw std::invalid_argument("MsarParams: D not square");
  if (Sigma_e.rows() != Sigma_e.cols() || Sigma_e.rows() != D.rows())
    throw std::invalid_argument("MsarParams: Sigma_e shape mismatch");
  if (B.cols() != D.rows()) throw std::invalid_argument("MsarParams: B shape mismatch");
  if (!D.allFinite() || !B.allFinite() || !Sigma_e.allFinite())
    throw std::invalid_argument("MsarParams: non-finite entries");
  if (spectral_radius(D) >= 1.0)
    throw std::invalid_argument("MsarParams: spectral radius of D must be below 1");
  sigma_inverse(Sigma_e);  // SPD check
}

void ErrorLaw::validate() const {
  if (kind == Kind::student_t && !(df > 2.0))
    throw std::invalid_argument("ErrorLaw: student_t needs df > 2");
  if (kind != Kind::none) sigma_inverse(Sigma_e);
}

Vector apply_sigma_kron(const Matrix& sigma, const Vector& v) {
  const auto V = as_cols(v, sigma.rows());
  return vec(V * sigma);
}

Vector apply_xtilde(const Matrix& X, const Vector& beta, Index q) {
  const auto B = Eigen::Map<const Matrix>(beta.data(), X.cols(), q);
  return vec(X * B);
}

Vector apply_xtilde_t(const Matrix& X, const Vector& v, Index q) {
  const auto V = as_cols(v, q);
  return vec(X.transpose() * V);
}

Matrix build_S(const Matrix& D, const SpatialWeights& W) {
  if (spectral_radius(D) >= 1.0)
    throw std::invalid_argument("build_S: spectral radius of D must be below 1");
  const Index nq = W.size() * D.rows();
  return Matrix::Identity(nq, nq) - kron(D.transpose(), W.dense());
}

std::pair<Vector, Matrix> mean_and_cov(const MsarParams& params, const SpatialWeights& W,
                                       const Matrix& X) {
  params.validate();
  const Index n = W.size();
  const Matrix S = build_S(params.D, W);
  Eigen::PartialPivLU<Matrix> lu(S);
  const Vector mu = lu.solve(apply_xtilde(X, vec(params.B), params.q()));
  // Omega = S^{-1} (Sigma_e (x) I_n) S^{-T}
  const Matrix inner = kron(params.Sigma_e, Matrix::Identity(n, n));
  Matrix omega = lu.solve(lu.solve(inner).transpose());
  omega = 0.5 * (omega + omega.transpose()).eval();
  return {mu, omega};
}

Dataset simulate(const MsarParams& params, const SpatialWeights& W, const Matrix& X,
                 const ErrorLaw& law, std::uint64_t seed) {
  params.validate();
  law.validate();
  const Index n = W.size();
  const Index q = params.q();
  if (X.rows() != n) throw std::invalid_argument("simulate: X row count mismatch");

  Matrix E = Matrix::Zero(n, q);
  if (law.kind != ErrorLaw::Kind::none) {
    Rng rng(seed);
    const Matrix L = Eigen::LLT<Matrix>(law.Sigma_e).matrixL();
    Vector z(q);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < q; ++j) z(j) = rng.normal();
      Vector row = L * z;
      if (law.kind == ErrorLaw::Kind::student_t)
        row *= std::sqrt(law.df / rng.chi_squared(law.df));
      E.row(i) = row.transpose();
    }
  }

  const Matrix S = build_S(params.D, W);
  const Vector rhs = apply_xtilde(X, vec(params.B), q) + vec(E);
  const Vector y = Eigen::PartialPivLU<Matrix>(S).solve(rhs);
  return Dataset{unvec(y, n, q), X};
}

Vector wtw_diagonal(const SpatialWeights& W) {
  Vector d = Vector::Zero(W.size());
  for (const auto& t : W.entries()) d(t.col) += t.value * t.value;
  return d;
}

Vector m_diagonal(const Matrix& D, const Matrix& sigma_e_inv, const Vector& wtw_diag) {
  const Index n = wtw_diag.size();
  const Index q = D.rows();
  const Matrix dsd = D * sigma_e_inv * D.transpose();
  Vector m(n * q);
  for (Index j = 0; j < q; ++j)
    m.segment(j * n, n) =
        (sigma_e_inv(j, j) + dsd(j, j) * wtw_diag.array()).inverse().matrix();
  return m;
}

double objective_Q(const MsarParams& params, const SpatialWeights& W, const Dataset& data) {
  params.validate();
  const Matrix sigma_inv = sigma_inverse(params.Sigma_e);
  const Matrix Wd = W.dense();
  const Vector m = m_diagonal(params.D, sigma_inv, wtw_diagonal(W));
  const Vector resid = apply_S(Wd, params.D, data.y()) -
                       apply_xtilde(data.X, vec(params.B), params.q());
  const Vector f = m.asDiagonal() *
                   apply_St(Wd, params.D, apply_sigma_kron(sigma_inv, resid));
  return f.squaredNorm();
}

Vector beta_tilde_of(const Matrix& D_hat, const SpatialWeights& W, const Dataset& data) {
  Eigen::LLT<Matrix> llt(data.X.transpose() * data.X);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("beta_tilde_of: X^T X is singular");
  const Matrix SY = data.Y - W.dense() * data.Y * D_hat;
  return vec(llt.solve(data.X.transpose() * SY));
}

Vector mu_tilde_of(const Matrix& D_hat, const SpatialWeights& W, const Dataset& data) {
  const Vector beta = beta_tilde_of(D_hat, W, data);
  const Matrix S = build_S(D_hat, W);
  return Eigen::PartialPivLU<Matrix>(S).solve(
      apply_xtilde(data.X, beta, data.q()));
}

}  // namespace msar
