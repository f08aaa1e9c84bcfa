#pragma once

#include "msar/model.hpp"
#include "msar/stationarity.hpp"

namespace msar {

struct FitOptions {
  double tol = 1e-8;       // Frobenius change of D between block iterations
  int max_iter = 200;      // block iterations (D step + Sigma update)
  double grad_tol = 1e-6;  // infinity norm of dQ/dvec(D) at the returned point
  int max_inner_iter = 200;
};

/// Per-candidate estimation output. beta_gls minimizes the objective given
/// (D_hat, Sigma_hat); beta_tilde is the OLS-type coefficient that makes the
/// fitted mean a linear smoother mu_tilde = Ptilde y.
struct CandidateFit {
  int candidate_index = -1;
  Matrix D_hat;
  Matrix Sigma_hat;
  Vector beta_gls;
  Vector beta_tilde;
  Vector mu_tilde;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  double grad_norm = 0.0;

  Matrix B_tilde(Index p, Index q) const { return unvec(beta_tilde, p, q); }
};

/// Least-squares estimation of (D, B, Sigma_e) for one candidate weights
/// matrix: BFGS over vec(D) with beta profiled in closed form, alternated
/// with the residual-covariance update, from D = 0 and the OLS start.
CandidateFit fit(const Dataset& data, const SpatialWeights& W, const FitOptions& opts = {});

}  // namespace msar
