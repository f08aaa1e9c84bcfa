#include "msar/weights.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace msar {

namespace {

void sort_and_merge(std::vector<WeightTriplet>& entries) {
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  std::size_t out = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (out > 0 && entries[out - 1].row == entries[i].row &&
        entries[out - 1].col == entries[i].col) {
      entries[out - 1].value += entries[i].value;
    } else {
      entries[out++] = entries[i];
    }
  }
  entries.resize(out);
  std::erase_if(entries, [](const auto& t) { return t.value == 0.0; });
}

}  // namespace

SpatialWeights SpatialWeights::from_triplets(Index n, std::vector<WeightTriplet> entries,
                                             bool normalized) {
  if (n < 0) throw std::invalid_argument("SpatialWeights: negative size");
  for (const auto& t : entries) {
    if (t.row < 0 || t.row >= n || t.col < 0 || t.col >= n)
      throw std::invalid_argument("SpatialWeights: index out of range");
    if (t.row == t.col && t.value != 0.0)
      throw std::invalid_argument("SpatialWeights: nonzero diagonal entry");
    if (!(t.value >= 0.0))
      throw std::invalid_argument("SpatialWeights: negative or non-finite weight");
  }
  sort_and_merge(entries);
  SpatialWeights w;
  w.n_ = n;
  w.entries_ = std::move(entries);
  w.normalized_ = normalized;
  return w;
}

Matrix SpatialWeights::dense() const {
  Matrix m = Matrix::Zero(n_, n_);
  for (const auto& t : entries_) m(t.row, t.col) = t.value;
  return m;
}

Eigen::SparseMatrix<double> SpatialWeights::sparse() const {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(entries_.size());
  for (const auto& t : entries_) trip.emplace_back(t.row, t.col, t.value);
  Eigen::SparseMatrix<double> m(n_, n_);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

Vector SpatialWeights::row_sums() const {
  Vector s = Vector::Zero(n_);
  for (const auto& t : entries_) s(t.row) += t.value;
  return s;
}

SpatialWeights SpatialWeights::restrict_to(const std::vector<Index>& nodes) const {
  std::vector<Index> pos(n_, -1);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] < 0 || nodes[i] >= n_)
      throw std::invalid_argument("restrict_to: node index out of range");
    pos[nodes[i]] = static_cast<Index>(i);
  }
  std::vector<WeightTriplet> sub;
  for (const auto& t : entries_) {
    if (pos[t.row] >= 0 && pos[t.col] >= 0)
      sub.push_back({pos[t.row], pos[t.col], t.value});
  }
  return from_triplets(static_cast<Index>(nodes.size()), std::move(sub));
}

void DistanceMatrix::validate() const {
  if (dis.rows() != dis.cols()) throw std::invalid_argument("DistanceMatrix: not square");
  for (Index i = 0; i < dis.rows(); ++i) {
    if (dis(i, i) != 0.0) throw std::invalid_argument("DistanceMatrix: nonzero diagonal");
    for (Index j = 0; j < dis.cols(); ++j) {
      if (!(dis(i, j) >= 0.0))
        throw std::invalid_argument("DistanceMatrix: negative or non-finite distance");
      if (dis(i, j) != dis(j, i))
        throw std::invalid_argument("DistanceMatrix: not symmetric");
    }
  }
}

SpatialWeights lattice_weights(const LatticeSpec& spec) {
  const Index rows = spec.rows, cols = spec.cols;
  const Index n = rows * cols;
  if (rows < 1 || cols < 1 || n < 2)
    throw std::invalid_argument("lattice_weights: lattice too small");
  const bool horizontal = spec.scheme == LatticeScheme::left ||
                          spec.scheme == LatticeScheme::left_right;
  if (horizontal && cols < 2)
    throw std::invalid_argument("lattice_weights: wrap scheme needs at least 2 columns");

  std::vector<WeightTriplet> entries;
  auto at = [cols](Index r, Index c) { return r * cols + c; };
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      const Index u = at(r, c);
      switch (spec.scheme) {
        case LatticeScheme::left:
          entries.push_back({u, at(r, (c + cols - 1) % cols), 1.0});
          break;
        case LatticeScheme::left_right:
          entries.push_back({u, at(r, (c + cols - 1) % cols), 1.0});
          entries.push_back({u, at(r, (c + 1) % cols), 1.0});
          break;
        case LatticeScheme::queen:
          for (Index dr = -1; dr <= 1; ++dr)
            for (Index dc = -1; dc <= 1; ++dc) {
              if (dr == 0 && dc == 0) continue;
              if (r + dr < 0 || r + dr >= rows || c + dc < 0 || c + dc >= cols) continue;
              entries.push_back({u, at(r + dr, c + dc), 1.0});
            }
          break;
        case LatticeScheme::rook:
          if (c > 0) entries.push_back({u, at(r, c - 1), 1.0});
          if (c + 1 < cols) entries.push_back({u, at(r, c + 1), 1.0});
          if (r > 0) entries.push_back({u, at(r - 1, c), 1.0});
          if (r + 1 < rows) entries.push_back({u, at(r + 1, c), 1.0});
          break;
      }
    }
  }
  // A 2-column wrap lattice would register the same neighbor twice.
  sort_and_merge(entries);
  for (auto& t : entries) t.value = 1.0;
  return SpatialWeights::from_triplets(n, std::move(entries));
}

SpatialWeights two_window_band(const DistanceMatrix& d, double t1, double t2,
                               double inner_w, double outer_w) {
  d.validate();
  if (!(t1 > 0.0) || !(t1 < t2))
    throw std::invalid_argument("two_window_band: need 0 < t1 < t2");
  if (!(inner_w > 0.0) || !(outer_w > 0.0))
    throw std::invalid_argument("two_window_band: window weights must be positive");
  const Index n = d.size();
  std::vector<WeightTriplet> entries;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dist = d.dis(i, j);
      if (dist <= t1)
        entries.push_back({i, j, inner_w});
      else if (dist <= t2)
        entries.push_back({i, j, outer_w});
    }
  return SpatialWeights::from_triplets(n, std::move(entries));
}

SpatialWeights distance_band(const DistanceMatrix& d, double threshold) {
  d.validate();
  if (!(threshold > 0.0)) throw std::invalid_argument("distance_band: threshold must be positive");
  const Index n = d.size();
  std::vector<WeightTriplet> entries;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i != j && d.dis(i, j) <= threshold) entries.push_back({i, j, 1.0});
  return SpatialWeights::from_triplets(n, std::move(entries));
}

SpatialWeights exp_kernel(const DistanceMatrix& d, double theta_d, double scale) {
  d.validate();
  if (!(scale > 0.0)) throw std::invalid_argument("exp_kernel: scale must be positive");
  const Index n = d.size();
  std::vector<WeightTriplet> entries;
  entries.reserve(static_cast<std::size_t>(n) * (n - 1));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i != j) entries.push_back({i, j, std::exp(theta_d * d.dis(i, j) / scale)});
  return SpatialWeights::from_triplets(n, std::move(entries));
}

SpatialWeights attribute_weighted(const SpatialWeights& adj, const Vector& attr,
                                  const AttributeTransform& transform) {
  if (attr.size() != adj.size())
    throw std::invalid_argument("attribute_weighted: attribute length mismatch");
  std::vector<WeightTriplet> entries;
  entries.reserve(adj.entries().size());
  for (const auto& t : adj.entries()) {
    if (t.value != 1.0)
      throw std::invalid_argument("attribute_weighted: adjacency entries must be 0/1");
    double v = 0.0;
    switch (transform.kind) {
      case AttributeTransform::Kind::linear:
        v = attr(t.col);
        if (v < 0.0)
          throw std::invalid_argument(
              "attribute_weighted: negative attribute under linear transform");
        break;
      case AttributeTransform::Kind::exponential:
        v = std::exp(transform.coefficient * attr(t.col));
        break;
    }
    entries.push_back({t.row, t.col, v});
  }
  return SpatialWeights::from_triplets(adj.size(), std::move(entries));
}

SpatialWeights row_normalize(const SpatialWeights& w, IslandPolicy policy,
                             Index* islands_found) {
  const Vector sums = w.row_sums();
  Index islands = 0;
  for (Index i = 0; i < w.size(); ++i) {
    if (sums(i) == 0.0) {
      ++islands;
      if (policy == IslandPolicy::error)
        throw std::runtime_error("row_normalize: island row " + std::to_string(i));
    }
  }
  if (islands_found) *islands_found = islands;
  std::vector<WeightTriplet> entries;
  entries.reserve(w.entries().size());
  for (const auto& t : w.entries())
    entries.push_back({t.row, t.col, t.value / sums(t.row)});
  return SpatialWeights::from_triplets(w.size(), std::move(entries), /*normalized=*/true);
}

SpatialWeights combine(const std::vector<SpatialWeights>& ws, const Vector& coeffs) {
  if (ws.empty() || coeffs.size() != static_cast<Index>(ws.size()))
    throw std::invalid_argument("combine: need one coefficient per matrix");
  const Index n = ws.front().size();
  bool all_normalized = true;
  double coeff_sum = 0.0;
  for (Index k = 0; k < coeffs.size(); ++k) {
    if (ws[k].size() != n) throw std::invalid_argument("combine: dimension mismatch");
    if (!(coeffs(k) >= 0.0)) throw std::invalid_argument("combine: negative coefficient");
    all_normalized = all_normalized && ws[k].normalized();
    coeff_sum += coeffs(k);
  }
  std::unordered_map<std::int64_t, double> acc;
  for (Index k = 0; k < coeffs.size(); ++k) {
    if (coeffs(k) == 0.0) continue;
    for (const auto& t : ws[k].entries())
      acc[static_cast<std::int64_t>(t.row) * n + t.col] += coeffs(k) * t.value;
  }
  std::vector<WeightTriplet> entries;
  entries.reserve(acc.size());
  for (const auto& [key, value] : acc)
    entries.push_back({static_cast<Index>(key / n), static_cast<Index>(key % n), value});
  const bool convex = all_normalized && std::abs(coeff_sum - 1.0) <= 1e-12;
  return SpatialWeights::from_triplets(n, std::move(entries), convex);
}

}  // namespace msar
