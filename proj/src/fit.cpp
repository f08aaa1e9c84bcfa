#include "msar/fit.hpp"

#include <cmath>
#include <stdexcept>

namespace msar {

namespace {

struct InnerResult {
  Matrix D;
  Vector beta;
  double objective = 0.0;
  double grad_norm = 0.0;
};

// Rescale into the stable region whenever a step leaves it.
Matrix stabilize(Matrix D) {
  const double rho = spectral_radius(D);
  if (rho >= 1.0) D *= 0.99 / rho;
  return D;
}

/// BFGS with Armijo backtracking on the profiled objective ||F(d)||^2,
/// followed by damped Newton on the stationarity, which tightens the
/// first-order condition well past what backtracking line searches reach.
/// Line-search evaluations skip the gradient caches.
InnerResult minimize_over_d(const StationaritySystem& sys, const Matrix& D0,
                            const FitOptions& opts) {
  const Index q = D0.rows();
  const Index dim = q * q;

  Matrix D = stabilize(D0);
  auto state = sys.at(D);
  double f = sys.objective(state);
  Vector g = state.qtilde;

  Matrix H = Matrix::Identity(dim, dim);
  bool scaled = false;
  const double gtol = std::min(opts.grad_tol, 1e-8);

  for (int it = 0; it < opts.max_inner_iter; ++it) {
    if (g.cwiseAbs().maxCoeff() <= gtol) break;

    Vector dir = -(H * g);
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {  // reset a corrupted metric
      H.setIdentity();
      scaled = false;
      dir = -g;
      slope = g.dot(dir);
    }

    double step = 1.0;
    bool accepted = false;
    Matrix D_new;
    StationaritySystem::State state_new;
    double f_new = f;
    for (int ls = 0; ls < 60; ++ls) {
      D_new = stabilize(D + unvec(step * dir, q, q));
      try {
        state_new = sys.at(D_new, /*with_derivatives=*/false);
        f_new = sys.objective(state_new);
      } catch (const std::exception&) {
        step *= 0.5;  // degenerate evaluation near the stability boundary
        continue;
      }
      if (f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // line search stalled at numerical precision
    sys.add_derivatives(state_new);

    const bool rescaled = spectral_radius(D + unvec(step * dir, q, q)) >= 1.0;
    const Vector g_new = state_new.qtilde;
    const Vector sk = vec(D_new) - vec(D);
    const Vector yk = g_new - g;
    const double sy = sk.dot(yk);
    if (rescaled) {
      H.setIdentity();  // the projection invalidated the quasi-Newton metric
      scaled = false;
    } else if (sy > 1e-12 * sk.norm() * yk.norm()) {
      if (!scaled) {  // calibrate the metric to the local curvature first
        H *= sy / yk.squaredNorm();
        scaled = true;
      }
      const Vector Hy = H * yk;
      const double yHy = yk.dot(Hy);
      H += ((sy + yHy) / (sy * sy)) * (sk * sk.transpose());
      H -= (Hy * sk.transpose() + sk * Hy.transpose()) / sy;
    }

    D = D_new;
    state = std::move(state_new);
    f = f_new;
    g = state.qtilde;
  }

  for (int it = 0; it < 8; ++it) {
    const double res = g.cwiseAbs().maxCoeff();
    if (res <= 1e-11) break;
    Vector delta;
    try {
      delta = sys.dq_dd(state).partialPivLu().solve(-g);
    } catch (const std::exception&) {
      break;
    }
    if (!delta.allFinite()) break;
    bool accepted = false;
    double alpha = 1.0;
    for (int half = 0; half < 12; ++half, alpha *= 0.5) {
      const Matrix Dc = D + unvec(alpha * delta, q, q);
      if (spectral_radius(Dc) >= 1.0) continue;
      StationaritySystem::State sc;
      try {
        sc = sys.at(Dc);
      } catch (const std::exception&) {
        continue;
      }
      if (sc.qtilde.cwiseAbs().maxCoeff() < res) {
        D = Dc;
        state = std::move(sc);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    f = sys.objective(state);
    g = state.qtilde;
  }

  return {D, state.beta, f, g.cwiseAbs().maxCoeff()};
}

}  // namespace

CandidateFit fit(const Dataset& data, const SpatialWeights& W, const FitOptions& opts) {
  const Index n = data.n(), p = data.p(), q = data.q();
  if (n <= p * q) throw std::invalid_argument("fit: need n > p*q");
  if (!W.normalized()) throw std::invalid_argument("fit: candidate matrix must be row-normalized");

  // OLS start: D = 0, B from the plain regression, Sigma from its residuals.
  Eigen::LLT<Matrix> xtx(data.X.transpose() * data.X);
  if (xtx.info() != Eigen::Success) throw std::runtime_error("fit: X^T X is singular");
  const Matrix B0 = xtx.solve(data.X.transpose() * data.Y);
  const Matrix resid0 = data.Y - data.X * B0;
  Matrix sigma = resid0.transpose() * resid0 / static_cast<double>(n);
  Matrix D = Matrix::Zero(q, q);

  const CandidateContext ctx(W, data);

  CandidateFit out;
  InnerResult inner;
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    out.iterations = iter;
    StationaritySystem sys(ctx, sigma, BetaRule::normal_equations);
    inner = minimize_over_d(sys, D, opts);

    const Matrix B = unvec(inner.beta, p, q);
    const Matrix E = data.Y - ctx.Ws * (data.Y * inner.D) - data.X * B;
    Matrix sigma_new = E.transpose() * E / static_cast<double>(n);
    // Floor keeps the weighting defined when the residuals collapse
    // (exactly interpolated data, e.g. the zero-noise hook).
    sigma_new += 1e-12 * std::max(1.0, sigma_new.trace()) * Matrix::Identity(q, q);

    const double dd = (inner.D - D).norm();
    D = inner.D;
    sigma = sigma_new;
    if (dd < opts.tol && iter > 1) {
      out.converged = true;
      break;
    }
  }

  // Re-polish at the final Sigma so the first-order condition holds at the
  // returned (D_hat, beta_gls, Sigma_hat) triple.
  StationaritySystem sys(ctx, sigma, BetaRule::normal_equations);
  inner = minimize_over_d(sys, D, opts);

  out.D_hat = inner.D;
  out.Sigma_hat = sigma;
  out.beta_gls = inner.beta;
  out.objective = inner.objective;
  out.grad_norm = inner.grad_norm;
  out.converged = out.converged && out.grad_norm < opts.grad_tol;
  out.beta_tilde = beta_tilde_of(out.D_hat, W, data);
  out.mu_tilde = mu_tilde_of(out.D_hat, W, data);
  return out;
}

}  // namespace msar
