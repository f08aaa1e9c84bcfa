#pragma once

#include "msar/model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SparseCore>

#include <vector>

namespace msar {

/// How beta is profiled out of the objective inside the first-order
/// condition Qtilde(d, y) = dQ/dvec(D) = 0.
enum class BetaRule {
  /// Exact normal equations of the weighted least squares in beta; this is
  /// the rule fit() uses, so the fitted D_hat is a root of the system.
  normal_equations,
  /// Instrument-style rule beta = (A Xt)^{-1} A S y with
  /// A = Xt^T M S^T (Sigma^{-1} (x) I_n).
  gls_moment,
};

/// Immutable per-(candidate, dataset) inputs. The candidate matrix is held
/// sparse; every operator application is O(nnz * q).
struct CandidateContext {
  CandidateContext(const SpatialWeights& weights, const Dataset& data);

  Index n, p, q, nq, pq;
  Eigen::SparseMatrix<double> Ws;   // candidate matrix
  Eigen::SparseMatrix<double> Wst;  // its transpose
  Vector wtw;                       // diag(W^T W)
  Matrix X;
  Matrix Xt;  // I_q (x) X, nq x pq
  Vector y;
};

/// First-order condition of the least-squares objective in vec(D) with
/// Sigma_e frozen and beta profiled, together with its analytic derivatives
/// in vec(D) and in y. Component (i,j) of Qtilde is 2 F^T F_ij; vec(D) is
/// column-major so the flat index of (i,j) is j*q + i.
class StationaritySystem {
 public:
  StationaritySystem(const CandidateContext& ctx, const Matrix& sigma_e_hat,
                     BetaRule rule = BetaRule::normal_equations,
                     bool profile_beta_in_y = true);

  /// Everything reused between Qtilde and its derivatives at one (D, y).
  /// Derivative caches are filled lazily (line searches only need ||F||^2).
  struct State {
    Matrix D;
    Vector y;
    Vector m;  // diagonal of M
    Matrix CXt;                       // C applied to the columns of Xt
    Vector C_Sy;
    Eigen::LDLT<Matrix> gram;         // normal_equations: (CXt)^T CXt
    Eigen::PartialPivLU<Matrix> axt;  // gls_moment: Xt^T C Xt
    Vector beta;
    Vector r;      // S y - Xt beta
    Vector sig_r;  // (Sigma^{-1} (x) I) r
    Vector u0;     // S^T sig_r, so F = m . u0
    Vector F;

    bool has_derivatives = false;
    std::vector<Vector> dminv;  // q^2 diagonals of d(M^{-1})/dd_ij
    std::vector<Vector> dm;     // q^2 diagonals of dM/dd_ij
    std::vector<Vector> dS_y;   // q^2: dS/dd_ij y
    std::vector<Vector> t_ij;   // q^2: dS^T/dd_ij sig_r
    std::vector<Vector> w_ij;   // q^2: S^T Sigma~ dS_y
    std::vector<Vector> z_ij;   // q^2: Sigma~ dS_y
    std::vector<Vector> Fij;    // q^2
    Vector qtilde;              // q^2
  };

  State at(const Matrix& D, bool with_derivatives = true) const {
    return at(D, ctx_.y, with_derivatives);
  }
  State at(const Matrix& D, const Vector& y, bool with_derivatives = true) const;

  /// Fills the derivative caches of a state produced with
  /// with_derivatives = false.
  void add_derivatives(State& s) const;

  double objective(const State& s) const { return s.F.squaredNorm(); }

  /// d Qtilde / d vec(D)^T, q^2 x q^2. Includes the profiled beta's
  /// dependence on D through d beta / d d_st.
  Matrix dq_dd(const State& s) const;

  /// d Qtilde / d y^T, q^2 x nq. When profile_beta_in_y is set (the
  /// default) the profiled beta's dependence on y is included, so the
  /// matrix is the exact derivative of the system being solved.
  Matrix dq_dy(const State& s) const;

  /// d beta / d d_st for the active rule.
  Vector dbeta(const State& s, Index si, Index ti) const;

  /// Diagonal of d^2 M / dd_ij dd_st.
  Vector d2m_diag(const State& s, Index i, Index j, Index si, Index ti) const;

  /// d beta / d y^T, pq x nq (zero when profiling in y is disabled).
  Matrix beta_y_sensitivity(const State& s) const;

  const CandidateContext& context() const { return ctx_; }
  const Matrix& sigma_inv() const { return sigma_inv_; }
  BetaRule rule() const { return rule_; }

  // Operator helpers, exposed for the finite-difference tests.
  Vector apply_C(const State& s, const Vector& v) const;
  Vector apply_Ct(const State& s, const Vector& v) const;
  Vector apply_dC(const State& s, Index si, Index ti, const Vector& v) const;

 private:
  Vector dminv_diag(const Matrix& D, Index i, Index j) const;
  Vector d2minv_diag(Index i, Index j, Index si, Index ti) const;

  const CandidateContext& ctx_;
  Matrix sigma_inv_;
  BetaRule rule_;
  bool profile_beta_in_y_;
};

}  // namespace msar
