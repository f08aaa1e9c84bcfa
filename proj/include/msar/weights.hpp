#pragma once

#include "msar/tensor_ops.hpp"

#include <Eigen/SparseCore>

#include <string>
#include <vector>

namespace msar {

struct WeightTriplet {
  Index row = 0;
  Index col = 0;
  double value = 0.0;
};

/// Sparse nonnegative n x n weights matrix with a zero diagonal; the
/// normalized flag records that every nonempty row sums to 1 (within 1e-12).
/// Values are immutable after construction and freely shareable.
class SpatialWeights {
 public:
  SpatialWeights() = default;

  /// Validates: indices in range, diagonal zero, weights nonnegative.
  /// Duplicate (row, col) pairs are summed.
  static SpatialWeights from_triplets(Index n, std::vector<WeightTriplet> entries,
                                      bool normalized = false);

  Index size() const { return n_; }
  Index nnz() const { return static_cast<Index>(entries_.size()); }
  bool normalized() const { return normalized_; }
  const std::vector<WeightTriplet>& entries() const { return entries_; }

  Matrix dense() const;
  Eigen::SparseMatrix<double> sparse() const;
  Vector row_sums() const;

  /// Submatrix on the given node subset (order preserved), unnormalized.
  SpatialWeights restrict_to(const std::vector<Index>& nodes) const;

 private:
  Index n_ = 0;
  std::vector<WeightTriplet> entries_;  // sorted by (row, col), duplicates merged
  bool normalized_ = false;
};

enum class LatticeScheme { left, left_right, rook, queen };

/// Rectangular tessellation, units indexed row-major. Only the horizontal-
/// neighbor schemes (left, left_right) wrap around the lattice edge; rook and
/// queen use plain non-wrapping contiguity.
struct LatticeSpec {
  Index rows = 0;
  Index cols = 0;
  LatticeScheme scheme = LatticeScheme::left;
};

/// Symmetric nonnegative pairwise distances with a zero diagonal. The units
/// field documents the unit the band thresholds are expressed in.
struct DistanceMatrix {
  Matrix dis;
  std::string units;

  Index size() const { return dis.rows(); }
  void validate() const;
};

struct AttributeTransform {
  enum class Kind { linear, exponential };
  Kind kind = Kind::linear;
  double coefficient = 0.0;  // exponent scale for the exponential transform
};

enum class IslandPolicy { error, drop_to_zero };

/// 0/1 adjacency for the lattice scheme, unnormalized.
SpatialWeights lattice_weights(const LatticeSpec& spec);

/// Banded distance weights: inner_w on (0, t1], outer_w on (t1, t2], 0 beyond.
SpatialWeights two_window_band(const DistanceMatrix& d, double t1, double t2,
                               double inner_w = 1.0, double outer_w = 0.5);

/// Single-window band: 1 on (0, threshold], 0 beyond.
SpatialWeights distance_band(const DistanceMatrix& d, double threshold);

/// w_ij = exp(theta_d * dis_ij / scale) off the diagonal.
SpatialWeights exp_kernel(const DistanceMatrix& d, double theta_d, double scale);

/// Replace each nonzero entry (i, j) of a 0/1 adjacency by attr[j] (linear)
/// or exp(c * attr[j]) (exponential).
SpatialWeights attribute_weighted(const SpatialWeights& adj, const Vector& attr,
                                  const AttributeTransform& transform);

SpatialWeights row_normalize(const SpatialWeights& w,
                             IslandPolicy policy = IslandPolicy::error,
                             Index* islands_found = nullptr);

/// Entrywise sum of coeffs[k] * ws[k]. The result is marked normalized only
/// for a convex combination of normalized inputs.
SpatialWeights combine(const std::vector<SpatialWeights>& ws, const Vector& coeffs);

}  // namespace msar
