#pragma once

#include "msar/fit.hpp"
#include "msar/selection.hpp"
#include "msar/weights.hpp"

#include <utility>
#include <vector>

namespace msar {

/// Quadratic weight-choice problem: criterion(w) = w^T A w + 2 w^T h over
/// the probability simplex, with H column k = Ptilde_k y - y and
/// h_k = trace_term_k + stein_term_k.
struct AveragingProblem {
  Matrix H;  // nq x K
  Vector h;  // K
  Matrix A;  // K x K Gram matrix H^T H
};

struct WeightVector {
  Vector w;
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
};

struct QpOptions {
  double tol = 1e-9;
  int max_iter = 10000;
};

AveragingProblem build_problem(const std::vector<CandidateFit>& fits, const Dataset& data,
                               const std::vector<CriterionValue>& criteria);

/// Euclidean projection onto { w >= 0, sum w = 1 }.
Vector project_to_simplex(const Vector& v);

/// Accelerated projected gradient with restarts; terminates on the KKT
/// residual or the iteration cap. A must be PSD within -1e-8.
WeightVector solve_simplex_qp(const AveragingProblem& prob, const QpOptions& opts = {});

/// mu(w) = sum w_k mu_tilde_k and the averaged weights matrix sum w_k W_k.
std::pair<Vector, SpatialWeights> averaged_estimates(
    const WeightVector& w, const std::vector<CandidateFit>& fits,
    const std::vector<SpatialWeights>& candidates);

}  // namespace msar
