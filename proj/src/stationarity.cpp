#include "msar/stationarity.hpp"

#include <stdexcept>

namespace msar {

namespace {

inline Index flat(Index i, Index j, Index q) { return j * q + i; }

}  // namespace

CandidateContext::CandidateContext(const SpatialWeights& weights, const Dataset& data)
    : n(data.n()),
      p(data.p()),
      q(data.q()),
      nq(data.n() * data.q()),
      pq(data.p() * data.q()),
      Ws(weights.sparse()),
      Wst(Ws.transpose()),
      wtw(wtw_diagonal(weights)),
      X(data.X),
      Xt(kron(Matrix::Identity(data.q(), data.q()), data.X)),
      y(data.y()) {
  if (weights.size() != n)
    throw std::invalid_argument("CandidateContext: weights size mismatch");
  if (n <= pq) throw std::invalid_argument("CandidateContext: need n > p*q");
}

StationaritySystem::StationaritySystem(const CandidateContext& ctx, const Matrix& sigma_e_hat,
                                       BetaRule rule, bool profile_beta_in_y)
    : ctx_(ctx), rule_(rule), profile_beta_in_y_(profile_beta_in_y) {
  Eigen::LLT<Matrix> llt(sigma_e_hat);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("StationaritySystem: Sigma_e estimate not SPD");
  sigma_inv_ = llt.solve(Matrix::Identity(ctx.q, ctx.q));
}

Vector StationaritySystem::dminv_diag(const Matrix& D, Index i, Index j) const {
  const Index q = ctx_.q;
  // d(D Sigma^{-1} D^T)/dd_ij = I_ij Sigma^{-1} D^T + D Sigma^{-1} I_ji
  Matrix P = Matrix::Zero(q, q);
  P.row(i) += (sigma_inv_ * D.transpose()).row(j);
  P.col(i) += (D * sigma_inv_).col(j);
  Vector out(ctx_.nq);
  for (Index l = 0; l < q; ++l)
    out.segment(l * ctx_.n, ctx_.n) = P(l, l) * ctx_.wtw;
  return out;
}

Vector StationaritySystem::d2minv_diag(Index i, Index j, Index si, Index ti) const {
  const Index q = ctx_.q;
  // I_ij Sigma^{-1} I_ts + I_st Sigma^{-1} I_ji
  Matrix T = Matrix::Zero(q, q);
  T(i, si) += sigma_inv_(j, ti);
  T(si, i) += sigma_inv_(ti, j);
  Vector out(ctx_.nq);
  for (Index l = 0; l < q; ++l)
    out.segment(l * ctx_.n, ctx_.n) = T(l, l) * ctx_.wtw;
  return out;
}

Vector StationaritySystem::apply_C(const State& s, const Vector& v) const {
  return s.m.cwiseProduct(
      apply_St_pre(ctx_.Wst, s.D, apply_sigma_kron(sigma_inv_, v)));
}

Vector StationaritySystem::apply_Ct(const State& s, const Vector& v) const {
  return apply_sigma_kron(sigma_inv_, apply_S(ctx_.Ws, s.D, s.m.cwiseProduct(v)));
}

Vector StationaritySystem::apply_dC(const State& s, Index si, Index ti,
                                    const Vector& v) const {
  const Vector sv = apply_sigma_kron(sigma_inv_, v);
  const Index st = flat(si, ti, ctx_.q);
  // dS^T/dd_st = -(I_st (x) W^T)
  return s.dm[st].cwiseProduct(apply_St_pre(ctx_.Wst, s.D, sv)) -
         s.m.cwiseProduct(apply_unit_kron(ctx_.Wst, si, ti, sv));
}

StationaritySystem::State StationaritySystem::at(const Matrix& D, const Vector& y,
                                                 bool with_derivatives) const {
  State s;
  s.D = D;
  s.y = y;
  s.m = m_diagonal(D, sigma_inv_, ctx_.wtw);

  const Vector Sy = apply_S(ctx_.Ws, D, y);
  s.CXt.resize(ctx_.nq, ctx_.pq);
  for (Index c = 0; c < ctx_.pq; ++c) s.CXt.col(c) = apply_C(s, ctx_.Xt.col(c));
  s.C_Sy = apply_C(s, Sy);

  if (rule_ == BetaRule::normal_equations) {
    s.gram.compute(s.CXt.transpose() * s.CXt);
    s.beta = s.gram.solve(s.CXt.transpose() * s.C_Sy);
  } else {
    s.axt.compute(ctx_.Xt.transpose() * s.CXt);
    s.beta = s.axt.solve(ctx_.Xt.transpose() * s.C_Sy);
  }
  if (!s.beta.allFinite())
    throw std::runtime_error("StationaritySystem: profiled beta is not finite");

  s.r = Sy - ctx_.Xt * s.beta;
  s.sig_r = apply_sigma_kron(sigma_inv_, s.r);
  s.u0 = apply_St_pre(ctx_.Wst, D, s.sig_r);
  s.F = s.m.cwiseProduct(s.u0);

  if (with_derivatives) add_derivatives(s);
  return s;
}

void StationaritySystem::add_derivatives(State& s) const {
  if (s.has_derivatives) return;
  const Index q = ctx_.q;
  s.dminv.resize(q * q);
  s.dm.resize(q * q);
  s.dS_y.resize(q * q);
  s.t_ij.resize(q * q);
  s.z_ij.resize(q * q);
  s.w_ij.resize(q * q);
  s.Fij.resize(q * q);
  s.qtilde.resize(q * q);
  for (Index j = 0; j < q; ++j)
    for (Index i = 0; i < q; ++i) {
      const Index ij = flat(i, j, q);
      s.dminv[ij] = dminv_diag(s.D, i, j);
      s.dm[ij] = -s.m.cwiseProduct(s.dminv[ij]).cwiseProduct(s.m);
      // dS/dd_ij = -(I_ji (x) W), dS^T/dd_ij = -(I_ij (x) W^T)
      s.dS_y[ij] = -apply_unit_kron(ctx_.Ws, j, i, s.y);
      s.t_ij[ij] = -apply_unit_kron(ctx_.Wst, i, j, s.sig_r);
      s.z_ij[ij] = apply_sigma_kron(sigma_inv_, s.dS_y[ij]);
      s.w_ij[ij] = apply_St_pre(ctx_.Wst, s.D, s.z_ij[ij]);
      s.Fij[ij] = s.dm[ij].cwiseProduct(s.u0) + s.m.cwiseProduct(s.t_ij[ij]) +
                  s.m.cwiseProduct(s.w_ij[ij]);
      s.qtilde(ij) = 2.0 * s.F.dot(s.Fij[ij]);
    }
  s.has_derivatives = true;
}

Vector StationaritySystem::d2m_diag(const State& s, Index i, Index j, Index si,
                                    Index ti) const {
  const Index st = flat(si, ti, ctx_.q);
  const Index ij = flat(i, j, ctx_.q);
  return -2.0 * s.m.cwiseProduct(s.dm[st]).cwiseProduct(s.dminv[ij]) -
         s.m.cwiseProduct(s.m).cwiseProduct(d2minv_diag(i, j, si, ti));
}

Vector StationaritySystem::dbeta(const State& s, Index si, Index ti) const {
  const Index st = flat(si, ti, ctx_.q);
  Matrix dCXt(ctx_.nq, ctx_.pq);
  for (Index c = 0; c < ctx_.pq; ++c)
    dCXt.col(c) = apply_dC(s, si, ti, ctx_.Xt.col(c));
  const Vector Sy = s.r + ctx_.Xt * s.beta;
  const Vector dC_Sy = apply_dC(s, si, ti, Sy);
  const Vector C_dSy = apply_C(s, s.dS_y[st]);

  if (rule_ == BetaRule::normal_equations) {
    const Matrix dG = dCXt.transpose() * s.CXt + s.CXt.transpose() * dCXt;
    const Vector db =
        dCXt.transpose() * s.C_Sy + s.CXt.transpose() * (dC_Sy + C_dSy);
    return s.gram.solve(db - dG * s.beta);
  }
  const Matrix dAXt = ctx_.Xt.transpose() * dCXt;
  const Vector rhs = ctx_.Xt.transpose() * (C_dSy + dC_Sy) - dAXt * s.beta;
  return s.axt.solve(rhs);
}

Matrix StationaritySystem::beta_y_sensitivity(const State& s) const {
  if (!profile_beta_in_y_) return Matrix::Zero(ctx_.pq, ctx_.nq);
  Matrix Z(ctx_.nq, ctx_.pq);
  if (rule_ == BetaRule::normal_equations) {
    // d beta/dy^T = G^{-1} (C Xt)^T C S
    for (Index c = 0; c < ctx_.pq; ++c)
      Z.col(c) = apply_St_pre(ctx_.Wst, s.D, apply_Ct(s, s.CXt.col(c)));
    return s.gram.solve(Z.transpose());
  }
  // d beta/dy^T = (A Xt)^{-1} A S
  for (Index c = 0; c < ctx_.pq; ++c)
    Z.col(c) = apply_St_pre(ctx_.Wst, s.D, apply_Ct(s, ctx_.Xt.col(c)));
  return s.axt.solve(Z.transpose());
}

Matrix StationaritySystem::dq_dd(const State& s) const {
  const Index q = ctx_.q;
  Matrix out(q * q, q * q);
  for (Index ti = 0; ti < q; ++ti)
    for (Index si = 0; si < q; ++si) {
      const Index st = flat(si, ti, q);
      const Vector dbeta_st = dbeta(s, si, ti);
      const Vector dr = s.dS_y[st] - ctx_.Xt * dbeta_st;
      const Vector sig_dr = apply_sigma_kron(sigma_inv_, dr);
      const Vector St_sig_dr = apply_St_pre(ctx_.Wst, s.D, sig_dr);
      // Total derivative of the outer F factor; the profiled beta moves with
      // d, so dF/dd_st picks up -C Xt dbeta_st on top of F_st.
      const Vector dF_st = s.Fij[st] - s.CXt * dbeta_st;
      for (Index j = 0; j < q; ++j)
        for (Index i = 0; i < q; ++i) {
          const Index ij = flat(i, j, q);
          Vector dFij = d2m_diag(s, i, j, si, ti).cwiseProduct(s.u0);
          dFij += s.dm[ij].cwiseProduct(s.t_ij[st]);
          dFij += s.dm[ij].cwiseProduct(St_sig_dr);
          dFij += s.dm[st].cwiseProduct(s.t_ij[ij]);
          dFij -= s.m.cwiseProduct(apply_unit_kron(ctx_.Wst, i, j, sig_dr));
          dFij += s.dm[st].cwiseProduct(s.w_ij[ij]);
          dFij -= s.m.cwiseProduct(apply_unit_kron(ctx_.Wst, si, ti, s.z_ij[ij]));
          out(ij, st) = 2.0 * dF_st.dot(s.Fij[ij]) + 2.0 * s.F.dot(dFij);
        }
    }
  return out;
}

Matrix StationaritySystem::dq_dy(const State& s) const {
  const Index q = ctx_.q;
  const Matrix By = beta_y_sensitivity(s);  // pq x nq
  const Vector gF = apply_Ct(s, s.F);
  const bool project = profile_beta_in_y_;

  auto ct_diag = [&](const Vector& diag, const Vector& v) {
    return apply_sigma_kron(sigma_inv_,
                            apply_S(ctx_.Ws, s.D, diag.cwiseProduct(v)));
  };

  Matrix out(q * q, ctx_.nq);
  for (Index j = 0; j < q; ++j)
    for (Index i = 0; i < q; ++i) {
      const Index ij = flat(i, j, q);
      // (dF/dy)^T F_ij and the residual-path parts of (dF_ij/dy)^T F share
      // the factor (S - Xt By)^T Sigma~ ... ; collect them before applying it.
      Vector gg = apply_Ct(s, s.Fij[ij]);
      gg += ct_diag(s.dm[ij], s.F);
      gg += apply_sigma_kron(sigma_inv_,
                             -apply_unit_kron(ctx_.Ws, j, i, s.m.cwiseProduct(s.F)));
      Vector row = apply_St_pre(ctx_.Wst, s.D, gg);
      if (project) row -= By.transpose() * (ctx_.Xt.transpose() * gg);
      row -= apply_unit_kron(ctx_.Wst, i, j, gF);
      out.row(ij) = 2.0 * row;
    }
  return out;
}

}  // namespace msar
