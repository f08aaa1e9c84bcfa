#include "msar/selection.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace msar {

namespace {

// P v = vec(P_x V) with P_x the hat matrix of X, applied in economy form.
struct Projector {
  explicit Projector(const Matrix& X) : X_(X), llt_(X.transpose() * X) {
    if (llt_.info() != Eigen::Success)
      throw std::runtime_error("projector: X^T X is singular");
  }
  Vector apply(const Vector& v, Index q) const {
    const Index n = X_.rows();
    const auto V = Eigen::Map<const Matrix>(v.data(), n, q);
    return vec(X_ * llt_.solve(X_.transpose() * V));
  }
  const Matrix& X_;
  Eigen::LLT<Matrix> llt_;
};

}  // namespace

DPtildeDd d_ptilde_d_d(const Matrix& D_hat, const SpatialWeights& W, const Matrix& X) {
  const Index n = W.size();
  const Index q = D_hat.rows();
  const Matrix S = build_S(D_hat, W);
  Eigen::PartialPivLU<Matrix> lu(S);
  const Projector proj(X);

  // G = S^{-1} P S
  Matrix PS(n * q, n * q);
  for (Index c = 0; c < n * q; ++c) PS.col(c) = proj.apply(S.col(c), q);
  const Matrix G = lu.solve(PS);

  const Matrix Wd = W.dense();
  DPtildeDd out;
  out.n = n;
  out.q = q;
  out.blocks.resize(q * q);
  for (Index j = 0; j < q; ++j)
    for (Index i = 0; i < q; ++i) {
      const Matrix JW = kron(UnitIndicator{q, j, i}.dense(), Wd);
      Matrix PJW(n * q, n * q);
      for (Index c = 0; c < n * q; ++c) PJW.col(c) = proj.apply(JW.col(c), q);
      out.blocks[j * q + i] = lu.solve(JW * G) - lu.solve(PJW);
    }
  return out;
}

ImplicitJacobian implicit_jacobian(const CandidateFit& fit, const SpatialWeights& W,
                                   const Dataset& data, const JacobianOptions& opts) {
  const CandidateContext ctx(W, data);
  StationaritySystem sys(ctx, fit.Sigma_hat, opts.rule, opts.profile_beta_in_y);

  Matrix D = fit.D_hat;
  auto state = sys.at(D);
  if (opts.newton_polish) {
    const double scale = std::max(1.0, state.qtilde.cwiseAbs().maxCoeff());
    for (int step = 0; step < opts.max_polish_steps; ++step) {
      const double res = state.qtilde.cwiseAbs().maxCoeff();
      if (res <= opts.polish_tol * scale) break;
      const Matrix A = sys.dq_dd(state);
      const Vector delta = A.partialPivLu().solve(-state.qtilde);
      if (!delta.allFinite()) break;
      // Damped step: the stationarity also vanishes on the degenerate
      // large-D plateau, so only accept steps that reduce the residual and
      // stay in the stable region.
      bool accepted = false;
      double alpha = 1.0;
      for (int half = 0; half < 12; ++half, alpha *= 0.5) {
        Matrix Dc = D + unvec(alpha * delta, ctx.q, ctx.q);
        if (spectral_radius(Dc) >= 1.0) continue;
        auto candidate = sys.at(Dc);
        if (candidate.qtilde.cwiseAbs().maxCoeff() < res) {
          D = std::move(Dc);
          state = std::move(candidate);
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
  }

  const Matrix A = sys.dq_dd(state);
  const Matrix B = sys.dq_dy(state);

  Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  const double cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();

  ImplicitJacobian out;
  out.condition_number = cond;
  out.D_at = D;
  if (cond <= opts.condition_limit) {
    out.J = -A.partialPivLu().solve(B);
  } else {
    // Regularized pseudo-inverse solve; Remark-3-style rate is all the
    // criterion needs from this term.
    out.ill_conditioned = true;
    Vector inv = svd.singularValues();
    for (Index i = 0; i < inv.size(); ++i)
      inv(i) = svd.singularValues()(i) > smax / opts.condition_limit
                   ? 1.0 / svd.singularValues()(i)
                   : 0.0;
    out.J = -(svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * B);
  }
  return out;
}

OmegaEstimate omega_hat(const CandidateFit& fit, const SpatialWeights& W) {
  const Index n = W.size();
  const Matrix S = build_S(fit.D_hat, W);
  Eigen::PartialPivLU<Matrix> lu(S);
  const Matrix inner = kron(fit.Sigma_hat, Matrix::Identity(n, n));
  Matrix omega = lu.solve(lu.solve(inner).transpose());
  omega = 0.5 * (omega + omega.transpose()).eval();
  return {omega, fit.candidate_index, false};
}

OmegaEstimate omega_hat_auto(const std::vector<CandidateFit>& fits,
                             const std::vector<SpatialWeights>& candidates,
                             int requested) {
  if (fits.empty() || fits.size() != candidates.size())
    throw std::invalid_argument("omega_hat_auto: one fit per candidate required");

  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].nnz() > candidates[b].nnz();
  });
  if (requested >= 0) {
    auto it = std::find(order.begin(), order.end(), static_cast<std::size_t>(requested));
    if (it == order.end()) throw std::invalid_argument("omega_hat_auto: bad candidate index");
    order.erase(it);
    order.insert(order.begin(), static_cast<std::size_t>(requested));
  }

  for (std::size_t idx : order) {
    if (fits[idx].converged) {
      auto est = omega_hat(fits[idx], candidates[idx]);
      est.fallback_used = idx != order.front();
      return est;
    }
  }
  // No converged fit anywhere: fall back to the preferred source as-is.
  auto est = omega_hat(fits[order.front()], candidates[order.front()]);
  est.fallback_used = true;
  return est;
}

CriterionValue criterion(const CandidateFit& fit, const SpatialWeights& W,
                         const Dataset& data, const OmegaEstimate& omega,
                         const JacobianOptions& opts) {
  const Index n = data.n(), q = data.q();
  const Vector y = data.y();
  const Matrix S = build_S(fit.D_hat, W);
  Eigen::PartialPivLU<Matrix> lu(S);
  const Projector proj(data.X);
  const Matrix Wd = W.dense();

  const Vector mu = lu.solve(proj.apply(apply_S(Wd, fit.D_hat, y), q));

  CriterionValue out;
  out.k = fit.candidate_index;
  out.sse = (mu - y).squaredNorm();

  // tr(Ptilde Omega) = tr(Gx~^{-1} (Xt^T S) Omega (S^{-1} Xt))
  const Matrix Xt = kron(Matrix::Identity(q, q), data.X);
  Matrix StXt(n * q, Xt.cols());
  for (Index c = 0; c < Xt.cols(); ++c)
    StXt.col(c) = apply_St(Wd, fit.D_hat, Xt.col(c));
  const Matrix Sinv_Xt = lu.solve(Xt);
  const Matrix small = StXt.transpose() * (omega.Omega_hat * Sinv_Xt);
  out.trace_term =
      Eigen::LLT<Matrix>(Xt.transpose() * Xt).solve(small).trace();

  const ImplicitJacobian jac = implicit_jacobian(fit, W, data, opts);
  out.warn_ill_conditioned = jac.ill_conditioned;
  double stein = 0.0;
  for (Index j = 0; j < q; ++j)
    for (Index i = 0; i < q; ++i) {
      // dPtilde/dd_ij y = S^{-1}(I_ji (x) W) mu - S^{-1} P (I_ji (x) W) y
      const Vector t1 = lu.solve(apply_unit_kron(Wd, j, i, mu));
      const Vector t2 = lu.solve(proj.apply(apply_unit_kron(Wd, j, i, y), q));
      stein += jac.J.row(j * q + i).dot(omega.Omega_hat * (t1 - t2));
    }
  out.stein_term = stein;
  out.C_hat = out.sse + 2.0 * (out.trace_term + out.stein_term);
  return out;
}

std::size_t select(const std::vector<CriterionValue>& criteria) {
  if (criteria.empty()) throw std::invalid_argument("select: empty candidate list");
  std::size_t best = 0;
  for (std::size_t k = 1; k < criteria.size(); ++k)
    if (criteria[k].C_hat < criteria[best].C_hat) best = k;
  return best;
}

}  // namespace msar
