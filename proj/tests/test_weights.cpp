#include "msar/weights.hpp"

#include "msar/tensor_ops.hpp"
#include "support/test_helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace msar;

namespace {

DistanceMatrix two_point_distance(double d) {
  DistanceMatrix dm;
  dm.dis = Matrix::Zero(2, 2);
  dm.dis(0, 1) = dm.dis(1, 0) = d;
  return dm;
}

}  // namespace

TEST_CASE("left lattice wraps horizontally") {
  const auto w = lattice_weights({1, 3, LatticeScheme::left});
  const Matrix m = w.dense();
  CHECK(m(0, 2) == 1.0);
  CHECK(m(1, 0) == 1.0);
  CHECK(m(2, 1) == 1.0);
  CHECK(w.row_sums().isApproxToConstant(1.0));
}

TEST_CASE("rook center cell has four neighbors") {
  const auto w = lattice_weights({3, 3, LatticeScheme::rook});
  CHECK(w.row_sums()(4) == 4.0);
  CHECK(w.dense()(4, 1) == 1.0);
  CHECK(w.dense()(4, 3) == 1.0);
  CHECK(w.dense()(4, 5) == 1.0);
  CHECK(w.dense()(4, 7) == 1.0);
}

TEST_CASE("queen corner cell has three neighbors without wrap") {
  const auto w = lattice_weights({3, 3, LatticeScheme::queen});
  CHECK(w.row_sums()(0) == 3.0);
}

TEST_CASE("left-right lattice wraps like left") {
  const auto w = lattice_weights({2, 4, LatticeScheme::left_right});
  const Matrix m = w.dense();
  CHECK(m(0, 3) == 1.0);  // left neighbor of the edge unit wraps
  CHECK(m(0, 1) == 1.0);
  CHECK(w.row_sums().isApproxToConstant(2.0));
}

TEST_CASE("lattice rejects degenerate shapes") {
  CHECK_THROWS_AS(lattice_weights({1, 1, LatticeScheme::rook}), std::invalid_argument);
  CHECK_THROWS_AS(lattice_weights({3, 1, LatticeScheme::left}), std::invalid_argument);
}

TEST_CASE("two-window band weights") {
  SUBCASE("inner window") {
    const auto w = two_window_band(two_point_distance(40), 50, 100);
    CHECK(w.dense()(0, 1) == 1.0);
    CHECK(w.dense()(1, 0) == 1.0);
  }
  SUBCASE("outer window") {
    const auto w = two_window_band(two_point_distance(75), 50, 100);
    CHECK(w.dense()(0, 1) == 0.5);
  }
  SUBCASE("beyond the band") {
    const auto w = two_window_band(two_point_distance(150), 50, 100);
    CHECK(w.nnz() == 0);
  }
  SUBCASE("bad thresholds") {
    CHECK_THROWS_AS(two_window_band(two_point_distance(10), 100, 50), std::invalid_argument);
  }
}

TEST_CASE("exponential distance kernel") {
  SUBCASE("paper values") {
    const auto w1 = exp_kernel(two_point_distance(80), -0.1, 80);
    CHECK(w1.dense()(0, 1) == doctest::Approx(0.904837).epsilon(1e-6));
    const auto w2 = exp_kernel(two_point_distance(160), -0.8, 80);
    CHECK(w2.dense()(0, 1) == doctest::Approx(0.201897).epsilon(1e-5));
  }
  SUBCASE("zero decay gives unit weights") {
    const auto w = exp_kernel(two_point_distance(123), 0.0, 80);
    CHECK(w.dense()(0, 1) == 1.0);
    CHECK(w.dense()(0, 0) == 0.0);
  }
}

TEST_CASE("attribute-weighted adjacency") {
  const auto adj = SpatialWeights::from_triplets(2, {{0, 1, 1.0}});
  Vector attr(2);
  SUBCASE("linear uses the target's attribute") {
    attr << 7.0, 3.0;
    const auto w = attribute_weighted(adj, attr, {AttributeTransform::Kind::linear, 0});
    CHECK(w.dense()(0, 1) == 3.0);
  }
  SUBCASE("exponential at zero attribute is one") {
    attr << 0.0, 0.0;
    const auto w =
        attribute_weighted(adj, attr, {AttributeTransform::Kind::exponential, 0.05});
    CHECK(w.dense()(0, 1) == 1.0);
  }
  SUBCASE("exponential paper value") {
    attr << 0.0, 10.0;
    const auto w =
        attribute_weighted(adj, attr, {AttributeTransform::Kind::exponential, 0.2});
    CHECK(w.dense()(0, 1) == doctest::Approx(std::exp(2.0)).epsilon(1e-10));
  }
  SUBCASE("negative attribute under linear is rejected") {
    attr << 0.0, -1.0;
    CHECK_THROWS_AS(attribute_weighted(adj, attr, {AttributeTransform::Kind::linear, 0}),
                    std::invalid_argument);
  }
}

TEST_CASE("row normalization") {
  SUBCASE("divides by row sums") {
    const auto w = SpatialWeights::from_triplets(3, {{0, 1, 2.0}, {0, 2, 2.0}});
    const auto nw = row_normalize(w, IslandPolicy::drop_to_zero);
    CHECK(nw.dense()(0, 1) == 0.5);
    CHECK(nw.dense()(0, 2) == 0.5);
    CHECK(nw.normalized());
  }
  SUBCASE("already normalized input is a fixed point") {
    const auto w = row_normalize(lattice_weights({3, 3, LatticeScheme::rook}));
    const auto w2 = row_normalize(w);
    CHECK(w2.dense().isApprox(w.dense(), 1e-15));
  }
  SUBCASE("rook lattice rows sum to one after normalization") {
    const auto w = row_normalize(lattice_weights({3, 3, LatticeScheme::rook}));
    CHECK((w.row_sums().array() - 1.0).abs().maxCoeff() <= 1e-12);
  }
  SUBCASE("island policies") {
    const auto w = SpatialWeights::from_triplets(3, {{0, 1, 1.0}});
    CHECK_THROWS_AS(row_normalize(w, IslandPolicy::error), std::runtime_error);
    Index islands = 0;
    const auto nw = row_normalize(w, IslandPolicy::drop_to_zero, &islands);
    CHECK(islands == 2);
    CHECK(nw.row_sums()(1) == 0.0);
  }
}

TEST_CASE("combine") {
  const auto w1 = row_normalize(lattice_weights({3, 3, LatticeScheme::left}));
  const auto w4 = row_normalize(lattice_weights({3, 3, LatticeScheme::queen}));
  SUBCASE("single matrix identity") {
    const auto c = combine({w1}, Vector::Ones(1));
    CHECK(c.dense().isApprox(w1.dense()));
    CHECK(c.normalized());
  }
  SUBCASE("convex combination stays row-stochastic") {
    Vector coeffs(2);
    coeffs << 0.5, 0.5;
    const auto c = combine({w1, w4}, coeffs);
    CHECK(c.normalized());
    CHECK((c.row_sums().array() - 1.0).abs().maxCoeff() <= 1e-12);
    CHECK(c.dense().isApprox(0.5 * w1.dense() + 0.5 * w4.dense(), 1e-14));
  }
  SUBCASE("non-convex coefficients clear the flag") {
    Vector coeffs(2);
    coeffs << 1.0, 1.0;
    CHECK_FALSE(combine({w1, w4}, coeffs).normalized());
  }
  SUBCASE("dimension mismatch") {
    const auto small = row_normalize(lattice_weights({2, 2, LatticeScheme::rook}));
    Vector coeffs(2);
    coeffs << 0.5, 0.5;
    CHECK_THROWS_AS(combine({w1, small}, coeffs), std::invalid_argument);
  }
}

TEST_CASE("constructors keep the diagonal zero and entries nonnegative") {
  const auto check = [](const SpatialWeights& w) {
    for (const auto& t : w.entries()) {
      CHECK(t.row != t.col);
      CHECK(t.value >= 0.0);
    }
  };
  check(lattice_weights({4, 5, LatticeScheme::queen}));
  check(exp_kernel(two_point_distance(42), -0.3, 80));
  check(two_window_band(two_point_distance(60), 50, 100));
  CHECK_THROWS_AS(SpatialWeights::from_triplets(2, {{0, 0, 1.0}}), std::invalid_argument);
  CHECK_THROWS_AS(SpatialWeights::from_triplets(2, {{0, 1, -1.0}}), std::invalid_argument);
}

TEST_CASE("spectral radius of the lag operator is bounded by the radius of D") {
  Rng rng(17);
  for (auto scheme : {LatticeScheme::left, LatticeScheme::rook, LatticeScheme::queen}) {
    const auto w = row_normalize(lattice_weights({4, 5, scheme}));
    const Matrix D = msar::testing::random_stable_D(rng, 2, 0.7);
    const Matrix lag = kron(D.transpose(), w.dense());
    CHECK(spectral_radius(lag) <= spectral_radius(D) + 1e-10);
  }
}

TEST_CASE("restrict_to keeps the induced subgraph") {
  const auto w = row_normalize(lattice_weights({2, 3, LatticeScheme::rook}));
  const auto sub = w.restrict_to({0, 1, 2});
  CHECK(sub.size() == 3);
  const Matrix full = w.dense();
  const Matrix m = sub.dense();
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) CHECK(m(i, j) == full(i, j));
}
