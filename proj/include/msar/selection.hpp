#pragma once

#include "msar/fit.hpp"
#include "msar/model.hpp"
#include "msar/stationarity.hpp"

#include <cstddef>
#include <vector>

namespace msar {

/// Reference covariance of the stacked response, built from one candidate's
/// fit (consistency of the source model is not required).
struct OmegaEstimate {
  Matrix Omega_hat;          // nq x nq, symmetric PSD
  int source_candidate = -1;
  bool fallback_used = false;
};

/// All q^2 blocks of dPtilde/dd_ij, in vec(D) column-major order.
struct DPtildeDd {
  Index n = 0;
  Index q = 0;
  std::vector<Matrix> blocks;

  const Matrix& block(Index i, Index j) const { return blocks[j * q + i]; }
};

struct JacobianOptions {
  BetaRule rule = BetaRule::normal_equations;
  bool profile_beta_in_y = true;
  /// Newton-refine D to the stationarity system's own root before
  /// differentiating (a no-op when fit() converged, since its first-order
  /// condition is the system being solved).
  bool newton_polish = true;
  int max_polish_steps = 5;
  double polish_tol = 1e-12;
  double condition_limit = 1e12;
};

/// dvec(D_hat)/dy^T from the implicit function theorem applied to the
/// Sigma-frozen first-order condition.
struct ImplicitJacobian {
  Matrix J;  // q^2 x nq
  double condition_number = 0.0;
  bool ill_conditioned = false;
  Matrix D_at;  // evaluation point after polishing
};

struct CriterionValue {
  int k = -1;
  double sse = 0.0;         // || Ptilde y - y ||^2
  double trace_term = 0.0;  // tr(Ptilde Omega_hat)
  double stein_term = 0.0;  // Jacobian trace correction
  double C_hat = 0.0;       // sse + 2 (trace_term + stein_term)
  bool warn_ill_conditioned = false;
};

/// dPtilde/dd_ij = S^{-1}(I_ji (x) W) S^{-1} P S - S^{-1} P (I_ji (x) W),
/// materialized densely (test and small-instance use).
DPtildeDd d_ptilde_d_d(const Matrix& D_hat, const SpatialWeights& W, const Matrix& X);

ImplicitJacobian implicit_jacobian(const CandidateFit& fit, const SpatialWeights& W,
                                   const Dataset& data, const JacobianOptions& opts = {});

/// Omega_hat = S^{-1} (Sigma_hat (x) I_n) S^{-T} from the given fit.
OmegaEstimate omega_hat(const CandidateFit& fit, const SpatialWeights& W);

/// Omega source selection: the requested candidate if its fit converged,
/// otherwise candidates by decreasing nonzero count until one converged
/// (flagged as a fallback). requested < 0 means densest-first.
OmegaEstimate omega_hat_auto(const std::vector<CandidateFit>& fits,
                             const std::vector<SpatialWeights>& candidates,
                             int requested = -1);

/// Feasible selection criterion for one candidate. The Jacobian penalty is
/// evaluated through A * M * y products; the nq x (nq)^2 Kronecker factor is
/// never materialized.
CriterionValue criterion(const CandidateFit& fit, const SpatialWeights& W,
                         const Dataset& data, const OmegaEstimate& omega,
                         const JacobianOptions& opts = {});

/// Index of the smallest criterion value; ties break to the smallest index.
std::size_t select(const std::vector<CriterionValue>& criteria);

}  // namespace msar
