#pragma once

#include "msar/fit.hpp"
#include "msar/selection.hpp"
#include "msar/stationarity.hpp"

#include "test_helpers.hpp"

#include <cmath>
#include <stdexcept>

namespace msar::testing {

/// Newton-solve the Sigma-frozen stationarity Qtilde(d, y) = 0 in d.
inline Matrix solve_stationarity(const StationaritySystem& sys, const Matrix& D0,
                                 const Vector& y, double tol = 1e-13, int max_steps = 60) {
  Matrix D = D0;
  auto s = sys.at(D, y);
  const double scale = std::max(1.0, s.qtilde.cwiseAbs().maxCoeff());
  for (int it = 0; it < max_steps; ++it) {
    const double res = s.qtilde.cwiseAbs().maxCoeff();
    if (res <= tol * scale) return D;
    const Vector delta = sys.dq_dd(s).partialPivLu().solve(-s.qtilde);
    bool accepted = false;
    double alpha = 1.0;
    for (int half = 0; half < 12; ++half, alpha *= 0.5) {
      Matrix Dc = D + unvec(alpha * delta, D.rows(), D.cols());
      if (spectral_radius(Dc) >= 1.0) continue;
      auto sc = sys.at(Dc, y);
      if (sc.qtilde.cwiseAbs().maxCoeff() < res) {
        D = std::move(Dc);
        s = std::move(sc);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  if (s.qtilde.cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw std::runtime_error("solve_stationarity: Newton did not converge");
  return D;
}

/// Largest column-wise relative error between the analytic implicit Jacobian
/// and central finite differences of the re-solved stationary point, with
/// Sigma frozen at the unperturbed fit.
inline double implicit_jacobian_fd_error(const Dataset& data, const SpatialWeights& w,
                                         BetaRule rule) {
  const CandidateFit f = fit(data, w);
  if (!f.converged) throw std::runtime_error("fd oracle: fit did not converge");

  JacobianOptions opts;
  opts.rule = rule;
  const ImplicitJacobian jac = implicit_jacobian(f, w, data, opts);

  const CandidateContext ctx(w, data);
  const StationaritySystem sys(ctx, f.Sigma_hat, rule);
  const Vector y = data.y();

  double worst = 0.0;
  for (Index t = 0; t < ctx.nq; ++t) {
    const double h = 1e-5 * (1.0 + std::abs(y(t)));
    Vector yp = y, ym = y;
    yp(t) += h;
    ym(t) -= h;
    const Matrix dp = solve_stationarity(sys, jac.D_at, yp);
    const Matrix dm = solve_stationarity(sys, jac.D_at, ym);
    const Vector fd = (vec(dp) - vec(dm)) / (2.0 * h);
    const Vector col = jac.J.col(t);
    const double denom = std::max(col.norm(), 1e-12);
    worst = std::max(worst, (fd - col).norm() / denom);
  }
  return worst;
}

/// Largest relative error of the dPtilde/dd blocks against central finite
/// differences of the explicit similarity-transformed projector.
inline double dptilde_fd_error(const Matrix& D, const SpatialWeights& w, const Matrix& X,
                               double h = 1e-6) {
  const Index n = w.size();
  const Index q = D.rows();
  const Matrix Xt = kron(Matrix::Identity(q, q), X);
  const Matrix P = Xt * (Xt.transpose() * Xt).ldlt().solve(Xt.transpose());
  auto ptilde = [&](const Matrix& d) {
    const Matrix S = build_S(d, w);
    return Matrix(S.partialPivLu().solve(P * S));
  };
  const DPtildeDd blocks = d_ptilde_d_d(D, w, X);
  double worst = 0.0;
  for (Index j = 0; j < q; ++j)
    for (Index i = 0; i < q; ++i) {
      Matrix dp = D, dm = D;
      dp(i, j) += h;
      dm(i, j) -= h;
      const Matrix fd = (ptilde(dp) - ptilde(dm)) / (2.0 * h);
      worst = std::max(worst, rel_error(fd, blocks.block(i, j)));
    }
  (void)n;
  return worst;
}

}  // namespace msar::testing
