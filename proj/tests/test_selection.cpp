#include "msar/selection.hpp"

#include "msar/averaging.hpp"
#include "support/jacobian_oracle.hpp"
#include "support/test_helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace msar;
using msar::testing::random_matrix;
using msar::testing::small_lattice;

namespace {

MsarParams case1_params() {
  MsarParams p;
  p.D.resize(2, 2);
  p.D << 0.3, -0.3, 0.5, 0.4;
  p.B.resize(2, 2);
  p.B << -0.5, 1.0, 1.3, 0.3;
  p.Sigma_e.resize(2, 2);
  p.Sigma_e << 0.5, 0.3, 0.3, 0.8;
  return p;
}

// Small-n instances need a clear signal so the least-squares optimum stays
// interior; otherwise the boundary of the stable region attracts the fit.
Dataset sim_dataset(const SpatialWeights& w, Index p_dim, std::uint64_t seed,
                    double noise = 0.05) {
  MsarParams p = case1_params();
  p.Sigma_e *= noise;
  p.B = Matrix::Zero(p_dim, 2);
  p.B(0, 0) = 1.2;
  p.B(0, 1) = -0.9;
  if (p_dim > 1) {
    p.B(1, 0) = 0.5;
    p.B(1, 1) = 0.8;
  }
  Rng rng(seed);
  const Matrix X = random_matrix(rng, w.size(), p_dim);
  return simulate(p, w, X, {ErrorLaw::Kind::gaussian, 5.0, p.Sigma_e}, seed + 3);
}

}  // namespace

TEST_CASE("dPtilde blocks vanish for an empty weights matrix") {
  const auto w0 = SpatialWeights::from_triplets(4, {});
  Rng rng(31);
  const Matrix X = random_matrix(rng, 4, 1);
  const Matrix D = msar::testing::random_stable_D(rng, 2, 0.5);
  const auto blocks = d_ptilde_d_d(D, w0, X);
  for (const auto& b : blocks.blocks) CHECK(b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dPtilde matches finite differences at n=6, q=2") {
  const auto w = small_lattice(2, 3);
  Rng rng(32);
  const Matrix X = random_matrix(rng, 6, 2);
  const Matrix D = msar::testing::random_stable_D(rng, 2, 0.5);
  CHECK(msar::testing::dptilde_fd_error(D, w, X) < 1e-6);
}

TEST_CASE("dPtilde at q=1 reduces to the univariate formula") {
  const auto w = small_lattice(2, 3);
  Rng rng(33);
  const Matrix X = random_matrix(rng, 6, 2);
  const Matrix D = Matrix::Constant(1, 1, 0.55);
  const auto blocks = d_ptilde_d_d(D, w, X);

  const Matrix Wd = w.dense();
  const Matrix S = Matrix::Identity(6, 6) - 0.55 * Wd;
  const Matrix P = X * (X.transpose() * X).ldlt().solve(X.transpose());
  const Matrix Sinv = S.inverse();
  const Matrix expect = Sinv * Wd * Sinv * P * S - Sinv * P * Wd;
  CHECK(msar::testing::rel_error(blocks.block(0, 0), expect) < 1e-10);
}

TEST_CASE("implicit Jacobian matches finite differences of the re-solved root") {
  const auto w = small_lattice(2, 4);  // n = 8
  const auto data = sim_dataset(w, 1, 78, 0.01);
  SUBCASE("normal-equations profiling") {
    CHECK(msar::testing::implicit_jacobian_fd_error(data, w, BetaRule::normal_equations) <
          1e-4);
  }
  SUBCASE("instrument-style profiling") {
    CHECK(msar::testing::implicit_jacobian_fd_error(data, w, BetaRule::gls_moment) < 1e-4);
  }
}

TEST_CASE("implicit Jacobian at q=1 matches a dense finite-difference oracle") {
  // Independent route: Sigma frozen at 1, the profiled objective assembled
  // from explicit dense matrices, all derivatives by finite differences.
  const auto w = small_lattice(2, 4);
  const Index n = 8;
  MsarParams p;
  p.D = Matrix::Constant(1, 1, 0.4);
  p.B = (Matrix(2, 1) << 1.0, -0.7).finished();
  p.Sigma_e = Matrix::Constant(1, 1, 0.3);
  Rng rng(35);
  const Matrix X = random_matrix(rng, n, 2);
  const auto data = simulate(p, w, X, {ErrorLaw::Kind::gaussian, 5.0, p.Sigma_e}, 36);

  CandidateFit f = fit(data, w);
  f.Sigma_hat = Matrix::Identity(1, 1);  // freeze at unit variance
  JacobianOptions opts;
  const ImplicitJacobian jac = implicit_jacobian(f, w, data, opts);

  const Matrix Wd = w.dense();
  const Vector wtw = wtw_diagonal(w);
  auto profiled_q = [&](double rho, const Vector& y) {
    const Matrix S = Matrix::Identity(n, n) - rho * Wd;
    const Vector mdiag = (1.0 + rho * rho * wtw.array()).inverse().matrix();
    const Matrix C = mdiag.asDiagonal() * S.transpose();
    const Matrix CX = C * X;
    const Vector beta = (CX.transpose() * CX).ldlt().solve(CX.transpose() * (C * (S * y)));
    return (C * (S * y - X * beta)).squaredNorm();
  };
  const double rho0 = jac.D_at(0, 0);
  const Vector y = data.y();
  const double h = 1e-4;
  auto g = [&](double rho, const Vector& yy) {
    return (profiled_q(rho + h, yy) - profiled_q(rho - h, yy)) / (2.0 * h);
  };
  const double d2q = (g(rho0 + h, y) - g(rho0 - h, y)) / (2.0 * h);
  for (Index t = 0; t < n; t += 2) {
    const double k = 1e-4 * (1.0 + std::abs(y(t)));
    Vector yp = y, ym = y;
    yp(t) += k;
    ym(t) -= k;
    const double dg_dy = (g(rho0, yp) - g(rho0, ym)) / (2.0 * k);
    const double oracle = -dg_dy / d2q;
    CHECK(jac.J(0, t) == doctest::Approx(oracle).epsilon(1e-3));
  }
}

TEST_CASE("implicit Jacobian halves when the response doubles") {
  // Doubling y with beta and the disturbances doubled jointly leaves the
  // minimizer of the objective unchanged and quadruples the residual
  // covariance, so dvec(D_hat)/dy^T computed on the doubled data is half the
  // original one.
  const auto w = small_lattice(3, 4);
  const auto data = sim_dataset(w, 2, 42);
  const CandidateFit f1 = fit(data, w);
  REQUIRE(f1.converged);

  const Dataset doubled{2.0 * data.Y, data.X};
  CandidateFit f2 = f1;
  f2.Sigma_hat = 4.0 * f1.Sigma_hat;

  // f1's D_hat is a root of the doubled system at the rescaled Sigma.
  const CandidateContext ctx2(w, doubled);
  const StationaritySystem sys2(ctx2, f2.Sigma_hat, BetaRule::normal_equations);
  CHECK(sys2.at(f1.D_hat).qtilde.cwiseAbs().maxCoeff() < 1e-6);

  const auto j1 = implicit_jacobian(f1, w, data);
  const auto j2 = implicit_jacobian(f2, w, doubled);
  CHECK(msar::testing::rel_error(j2.J, Matrix(0.5 * j1.J)) < 1e-6);
}

TEST_CASE("dropping the beta sensitivity from dq_dy breaks the FD match") {
  // The displayed derivative in the source derivation holds the profiled
  // coefficient fixed in y; keeping that form fails the oracle, which is why
  // the beta path is included.
  const auto w = small_lattice(2, 3);
  const auto data = sim_dataset(w, 1, 55);
  Rng rng(56);
  const Matrix D0 = msar::testing::random_stable_D(rng, 2, 0.5);
  const Matrix sigma0 = msar::testing::random_spd(rng, 2);
  const CandidateContext ctx(w, data);
  const StationaritySystem with(ctx, sigma0, BetaRule::normal_equations, true);
  const StationaritySystem without(ctx, sigma0, BetaRule::normal_equations, false);
  const auto s = with.at(D0);
  const auto s2 = without.at(D0);

  const double h = 1e-6;
  double err_with = 0.0, err_without = 0.0;
  const Matrix By = with.dq_dy(s);
  const Matrix Bn = without.dq_dy(s2);
  for (Index t = 0; t < ctx.nq; ++t) {
    Vector yp = ctx.y, ym = ctx.y;
    yp(t) += h;
    ym(t) -= h;
    const Vector fd = (with.at(D0, yp).qtilde - with.at(D0, ym).qtilde) / (2.0 * h);
    err_with = std::max(err_with, (fd - By.col(t)).norm());
    err_without = std::max(err_without, (fd - Bn.col(t)).norm());
  }
  CHECK(err_with < 1e-6 * (1.0 + By.norm()));
  CHECK(err_without > 10.0 * err_with);
}

TEST_CASE("omega_hat") {
  const auto w = small_lattice(2, 3);
  const auto data = sim_dataset(w, 2, 61);
  SUBCASE("zero D gives the block-diagonal covariance") {
    CandidateFit f;
    f.candidate_index = 0;
    f.D_hat = Matrix::Zero(2, 2);
    f.Sigma_hat = case1_params().Sigma_e;
    const auto est = omega_hat(f, w);
    CHECK(est.Omega_hat.isApprox(kron(f.Sigma_hat, Matrix::Identity(6, 6)), 1e-12));
  }
  SUBCASE("symmetric on fitted instances") {
    const auto f = fit(data, w);
    const auto est = omega_hat(f, w);
    CHECK((est.Omega_hat - est.Omega_hat.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("omega_hat_auto prefers the requested source and falls back by density") {
  const auto w_sparse = row_normalize(lattice_weights({4, 5, LatticeScheme::left}));
  const auto w_dense = row_normalize(lattice_weights({4, 5, LatticeScheme::queen}));
  const auto data = sim_dataset(w_sparse, 2, 66, 0.02);
  REQUIRE(w_dense.nnz() > w_sparse.nnz());
  std::vector<CandidateFit> fits(2);
  std::vector<SpatialWeights> cands{w_sparse, w_dense};
  fits[0] = fit(data, w_sparse);
  fits[0].candidate_index = 0;
  fits[1] = fit(data, w_dense);
  fits[1].candidate_index = 1;

  CHECK(omega_hat_auto(fits, cands, -1).source_candidate == 1);  // densest
  CHECK(omega_hat_auto(fits, cands, 0).source_candidate == 0);
  fits[1].converged = false;
  const auto est = omega_hat_auto(fits, cands, -1);
  CHECK(est.source_candidate == 0);
  CHECK(est.fallback_used);
}

TEST_CASE("criterion penalty equals the explicit Kronecker expression") {
  // Small instances where the nq x (nq)^2 factor is materializable.
  struct Case {
    Index rows, cols, p, q;
  };
  for (const Case c : {Case{1, 3, 1, 2}, Case{2, 3, 1, 2}, Case{2, 4, 2, 2}, Case{1, 5, 1, 3}}) {
    const auto w = small_lattice(c.rows, c.cols);
    MsarParams p = case1_params();
    if (c.q == 3) {
      p.D = Matrix::Zero(3, 3);
      p.D.diagonal() << 0.3, 0.2, 0.4;
      p.D(0, 1) = -0.2;
      p.Sigma_e = Matrix::Identity(3, 3);
      p.Sigma_e(0, 1) = p.Sigma_e(1, 0) = 0.2;
    }
    p.Sigma_e *= 0.05;
    p.B = Matrix::Zero(c.p, c.q);
    p.B(0, 0) = 1.0;
    Rng rng(100 + c.cols);
    const Matrix X = random_matrix(rng, w.size(), c.p);
    const auto data =
        simulate(p, w, X, {ErrorLaw::Kind::gaussian, 5.0, p.Sigma_e}, 7 * c.cols);
    // The identity is algebraic, so any stable evaluation point works.
    CandidateFit f;
    f.candidate_index = 0;
    f.D_hat = msar::testing::random_stable_D(rng, c.q, 0.4);
    f.Sigma_hat = p.Sigma_e;
    f.converged = true;
    const auto omega = omega_hat(f, w);
    const auto crit = criterion(f, w, data, omega);

    const auto jac = implicit_jacobian(f, w, data);
    const auto blocks = d_ptilde_d_d(f.D_hat, w, data.X);
    const Index nq = w.size() * c.q;
    Matrix K(nq * nq, c.q * c.q);
    for (Index m = 0; m < c.q * c.q; ++m) K.col(m) = vec(blocks.blocks[m]);
    const Matrix big = kron(Matrix(data.y().transpose()), omega.Omega_hat);
    const double explicit_trace = (jac.J * big * K).trace();
    CHECK(crit.stein_term == doctest::Approx(explicit_trace).epsilon(1e-9));
  }
}

TEST_CASE("criterion with a zero Omega reduces to the squared error") {
  const auto w = small_lattice(2, 3);
  const auto data = sim_dataset(w, 2, 63);
  Rng rng(65);
  CandidateFit f;
  f.candidate_index = 0;
  f.D_hat = msar::testing::random_stable_D(rng, 2, 0.4);
  f.Sigma_hat = case1_params().Sigma_e;
  f.converged = true;
  OmegaEstimate zero{Matrix::Zero(12, 12), 0, false};
  const auto crit = criterion(f, w, data, zero);
  CHECK(crit.trace_term == 0.0);
  CHECK(crit.stein_term == 0.0);
  const Vector mu = mu_tilde_of(f.D_hat, w, data);
  CHECK(crit.C_hat == doctest::Approx((mu - data.y()).squaredNorm()).epsilon(1e-12));
  CHECK(crit.C_hat == doctest::Approx(crit.sse).epsilon(1e-12));
}

TEST_CASE("select") {
  auto cv = [](double c) {
    CriterionValue v;
    v.C_hat = c;
    return v;
  };
  CHECK_THROWS_AS(select({}), std::invalid_argument);
  CHECK(select({cv(5.0)}) == 0);
  CHECK(select({cv(3.0), cv(1.0), cv(2.0)}) == 1);
  CHECK(select({cv(1.0), cv(1.0)}) == 0);  // ties break to the smallest index
  // invariance under common shifts
  CHECK(select({cv(3.0 + 10.0), cv(1.0 + 10.0), cv(2.0 + 10.0)}) == 1);
}

TEST_CASE("Stein identity holds for fixed linear smoothers" * doctest::test_suite("slow")) {
  const auto w = small_lattice(2, 5);  // n = 10, q = 2
  MsarParams p = case1_params();
  Rng rng(64);
  const Matrix X = random_matrix(rng, 10, 2);
  const auto [mu, omega] = mean_and_cov(p, w, X);
  const Matrix A = random_matrix(rng, 20, 20);

  const int reps = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int r = 0; r < reps; ++r) {
    const Vector y = simulate(p, w, X, {ErrorLaw::Kind::gaussian, 5.0, p.Sigma_e},
                              10000 + static_cast<std::uint64_t>(r))
                         .y();
    const double v = (A * y).dot(y - mu);
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sumsq / reps - mean * mean) / reps);
  const double expect = (A * omega).trace();
  CHECK(std::abs(mean - expect) <= 3.0 * se);
}

TEST_CASE("omega error shrinks with the sample size" * doctest::test_suite("slow")) {
  // Consistency trend for the reference covariance built from the true
  // candidate: median relative error at n=100 exceeds the one at n=400.
  MsarParams p = case1_params();
  auto median_err = [&](Index rows, Index cols, std::uint64_t seed) {
    const auto w = small_lattice(rows, cols, LatticeScheme::queen);
    Rng rng(seed);
    std::vector<double> errs;
    for (int r = 0; r < 20; ++r) {
      const Matrix X = random_matrix(rng, w.size(), 2);
      const auto data =
          simulate(p, w, X, {ErrorLaw::Kind::gaussian, 5.0, p.Sigma_e},
                   seed + 100 + static_cast<std::uint64_t>(r));
      const auto f = fit(data, w);
      const auto est = omega_hat(f, w);
      const auto [mu, omega] = mean_and_cov(p, w, X);
      (void)mu;
      errs.push_back((est.Omega_hat - omega).norm() / omega.norm());
    }
    std::sort(errs.begin(), errs.end());
    return errs[errs.size() / 2];
  };
  const double e100 = median_err(10, 10, 200);
  const double e400 = median_err(20, 20, 300);
  CHECK(e400 < e100);
}
