#include "msar/tensor_ops.hpp"

#include <stdexcept>

namespace msar {

Matrix UnitIndicator::dense() const {
  if (row < 0 || col < 0 || row >= dim || col >= dim)
    throw std::invalid_argument("UnitIndicator: index out of range");
  Matrix m = Matrix::Zero(dim, dim);
  m(row, col) = 1.0;
  return m;
}

Matrix kron(const Matrix& a, const Matrix& b, std::size_t cap_bytes) {
  const Index rows = a.rows() * b.rows();
  const Index cols = a.cols() * b.cols();
  const std::size_t bytes =
      static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * sizeof(double);
  if (bytes > cap_bytes)
    throw std::length_error("kron: result exceeds the materialization cap");

  Matrix out(rows, cols);
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Vector vec(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

Matrix unvec(const Vector& v, Index rows, Index cols) {
  if (v.size() != rows * cols)
    throw std::invalid_argument("unvec: size mismatch");
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

Vector kron_vec_apply(const Matrix& a, const Vector& y, const Matrix& m) {
  const Index d = y.size();
  if (a.rows() != d || a.cols() != d || m.rows() != d || m.cols() != d)
    throw std::invalid_argument("kron_vec_apply: dimension mismatch");
  return a * (m * y);
}

double spectral_radius(const Matrix& m) {
  if (m.rows() != m.cols())
    throw std::invalid_argument("spectral_radius: matrix not square");
  if (m.rows() == 0) return 0.0;
  return Eigen::EigenSolver<Matrix>(m, /*computeEigenvectors=*/false)
      .eigenvalues()
      .cwiseAbs()
      .maxCoeff();
}

}  // namespace msar
