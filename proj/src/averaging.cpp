#include "msar/averaging.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msar {

namespace {

double objective_at(const AveragingProblem& prob, const Vector& w) {
  return w.dot(prob.A * w) + 2.0 * w.dot(prob.h);
}

Vector gradient_at(const AveragingProblem& prob, const Vector& w) {
  return 2.0 * (prob.A * w + prob.h);
}

double kkt_residual(const AveragingProblem& prob, const Vector& w) {
  const Vector g = gradient_at(prob, w);
  const double lam = w.dot(g);  // weighted average of active gradients
  double res = 0.0;
  for (Index i = 0; i < w.size(); ++i) {
    if (w(i) > 0.0)
      res = std::max(res, std::abs(g(i) - lam));
    else
      res = std::max(res, std::max(0.0, lam - g(i)));
  }
  return res;
}

/// Exact equality-constrained solve on a support set; returns false when the
/// KKT system is numerically singular.
bool solve_on_support(const AveragingProblem& prob, const std::vector<Index>& support,
                      Vector* w_out, double* lambda_out) {
  const Index m = static_cast<Index>(support.size());
  Matrix kkt = Matrix::Zero(m + 1, m + 1);
  Vector rhs = Vector::Zero(m + 1);
  for (Index a = 0; a < m; ++a) {
    for (Index b = 0; b < m; ++b) kkt(a, b) = 2.0 * prob.A(support[a], support[b]);
    kkt(a, m) = 1.0;
    kkt(m, a) = 1.0;
    rhs(a) = -2.0 * prob.h(support[a]);
  }
  rhs(m) = 1.0;
  Eigen::FullPivLU<Matrix> lu(kkt);
  if (!lu.isInvertible()) return false;
  const Vector sol = lu.solve(rhs);
  if (!sol.allFinite()) return false;
  Vector w = Vector::Zero(prob.h.size());
  for (Index a = 0; a < m; ++a) w(support[a]) = sol(a);
  *w_out = w;
  *lambda_out = sol(m);
  return true;
}

}  // namespace

AveragingProblem build_problem(const std::vector<CandidateFit>& fits, const Dataset& data,
                               const std::vector<CriterionValue>& criteria) {
  if (fits.empty() || fits.size() != criteria.size())
    throw std::invalid_argument("build_problem: one criterion per fit required");
  const Index nq = data.n() * data.q();
  const Vector y = data.y();

  AveragingProblem prob;
  prob.H.resize(nq, static_cast<Index>(fits.size()));
  prob.h.resize(static_cast<Index>(fits.size()));
  for (std::size_t k = 0; k < fits.size(); ++k) {
    if (fits[k].mu_tilde.size() != nq)
      throw std::invalid_argument("build_problem: fit dimension mismatch");
    prob.H.col(static_cast<Index>(k)) = fits[k].mu_tilde - y;
    prob.h(static_cast<Index>(k)) = criteria[k].trace_term + criteria[k].stein_term;
  }
  prob.A = prob.H.transpose() * prob.H;
  return prob;
}

Vector project_to_simplex(const Vector& v) {
  const Index k = v.size();
  std::vector<double> u(v.data(), v.data() + k);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cssv = 0.0, theta = 0.0;
  Index rho = 0;
  for (Index i = 0; i < k; ++i) {
    cssv += u[i];
    const double t = (cssv - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) {
      rho = i;
      theta = t;
    }
  }
  (void)rho;
  return (v.array() - theta).max(0.0).matrix();
}

WeightVector solve_simplex_qp(const AveragingProblem& prob, const QpOptions& opts) {
  const Index K = prob.h.size();
  if (K == 0) throw std::invalid_argument("solve_simplex_qp: empty problem");
  const Matrix A = 0.5 * (prob.A + prob.A.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> eig(A);
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig < -1e-8)
    throw std::invalid_argument("solve_simplex_qp: A is not positive semidefinite");
  const double L = 2.0 * std::max(eig.eigenvalues().maxCoeff(), 1e-12);

  AveragingProblem sym{prob.H, prob.h, A};

  // FISTA with objective restarts.
  Vector x = Vector::Constant(K, 1.0 / static_cast<double>(K));
  Vector z = x;
  double t = 1.0;
  double fx = objective_at(sym, x);
  int iters = 0;
  for (; iters < opts.max_iter; ++iters) {
    if (kkt_residual(sym, x) <= opts.tol) break;
    const Vector x_new = project_to_simplex(z - gradient_at(sym, z) / L);
    const double f_new = objective_at(sym, x_new);
    if (f_new > fx) {  // restart the momentum
      z = x;
      t = 1.0;
      continue;
    }
    const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    z = x_new + ((t - 1.0) / t_new) * (x_new - x);
    x = x_new;
    fx = f_new;
    t = t_new;
  }

  // Active-set polish for an exact KKT point on the identified support.
  for (int round = 0; round < 4 * static_cast<int>(K) + 4; ++round) {
    std::vector<Index> support;
    for (Index i = 0; i < K; ++i)
      if (x(i) > 1e-14) support.push_back(i);
    if (support.empty()) break;

    Vector w;
    double multiplier = 0.0;
    if (!solve_on_support(sym, support, &w, &multiplier)) break;

    if (w.minCoeff() < -1e-14) {
      // Drop the most negative coordinate and retry from the shrunk support.
      Index worst = 0;
      w.minCoeff(&worst);
      x = w.cwiseMax(0.0);
      x(worst) = 0.0;
      const double s = x.sum();
      if (s <= 0.0) break;
      x /= s;
      continue;
    }

    // On the support the gradient equals the shared multiplier; a zero
    // coordinate with a smaller gradient improves the objective when added.
    const Vector g = gradient_at(sym, w.cwiseMax(0.0));
    double lambda = 0.0;
    for (Index s : support) lambda += g(s);
    lambda /= static_cast<double>(support.size());
    Index violator = -1;
    double worst_gap = 1e-12 * (1.0 + std::abs(lambda));
    for (Index i = 0; i < K; ++i) {
      if (w(i) > 0.0) continue;
      if (lambda - g(i) > worst_gap) {
        worst_gap = lambda - g(i);
        violator = i;
      }
    }
    x = w.cwiseMax(0.0);
    if (violator < 0) break;
    x(violator) = 1e-8;  // admit the violator and re-solve
    x /= x.sum();
  }

  WeightVector out;
  out.w = x;
  for (Index i = 0; i < K; ++i)
    if (out.w(i) < 1e-12) out.w(i) = 0.0;
  out.w /= out.w.sum();
  out.objective = objective_at(sym, out.w);
  out.kkt_residual = kkt_residual(sym, out.w);
  out.iterations = iters;
  return out;
}

std::pair<Vector, SpatialWeights> averaged_estimates(
    const WeightVector& w, const std::vector<CandidateFit>& fits,
    const std::vector<SpatialWeights>& candidates) {
  if (fits.empty() || fits.size() != candidates.size() ||
      w.w.size() != static_cast<Index>(fits.size()))
    throw std::invalid_argument("averaged_estimates: size mismatch");
  Vector mu = Vector::Zero(fits.front().mu_tilde.size());
  for (std::size_t k = 0; k < fits.size(); ++k)
    mu += w.w(static_cast<Index>(k)) * fits[k].mu_tilde;
  return {mu, combine(candidates, w.w)};
}

}  // namespace msar
