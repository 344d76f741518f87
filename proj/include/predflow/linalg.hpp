#pragma once

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "predflow/errors.hpp"
#include "predflow/types.hpp"

namespace predflow {

inline constexpr double kSymmetryTol = 1e-10;
// Eigenvalues below this are lifted to it before an inverse square root.
inline constexpr double kEigenFloor = 1e-8;

// Returns (a + a^T) / 2 after checking a is square and symmetric to kSymmetryTol.
template <typename Derived>
MatrixX<typename Derived::Scalar> symmetrized(const Eigen::MatrixBase<Derived>& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("matrix must be square");
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> s = a;
  if (a.size() > 0 && (s - s.transpose()).cwiseAbs().maxCoeff() > Scalar(kSymmetryTol)) {
    throw NotPositiveDefinite("matrix is not symmetric");
  }
  return (s + s.transpose()) / Scalar(2);
}

// Lower Cholesky factor L with L L^T = a and a positive diagonal.
template <typename Derived>
MatrixX<typename Derived::Scalar> cholesky(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> s = symmetrized(a);
  Eigen::LLT<MatrixX<Scalar>> llt(s);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("non-positive Cholesky pivot");
  MatrixX<Scalar> l = llt.matrixL();
  if (l.size() > 0 && !(l.diagonal().array() > Scalar(0)).all()) {
    throw NotPositiveDefinite("non-positive Cholesky pivot");
  }
  return l;
}

// log det(a) for positive-definite a, as 2 * sum(log diag(L)).
template <typename Derived>
typename Derived::Scalar logdet(const Eigen::MatrixBase<Derived>& a) {
  const auto l = cholesky(a);
  return typename Derived::Scalar(2) * l.diagonal().array().log().sum();
}

// Symmetric W with W a W = I. Eigenvalues in (0, kEigenFloor) are raised to
// the floor; non-positive eigenvalues are rejected. The result is exactly
// symmetric.
template <typename Derived>
MatrixX<typename Derived::Scalar> sym_inv_sqrt(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(symmetrized(a));
  if (eig.info() != Eigen::Success) throw NotPositiveDefinite("eigendecomposition failed");
  VectorX<Scalar> lambda = eig.eigenvalues();
  if (lambda.size() > 0 && lambda.minCoeff() <= Scalar(0)) {
    throw NotPositiveDefinite("non-positive eigenvalue");
  }
  lambda = lambda.cwiseMax(Scalar(kEigenFloor));
  const auto& v = eig.eigenvectors();
  MatrixX<Scalar> w = v * lambda.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
  return (w + w.transpose()) / Scalar(2);
}

// Symmetric square root, the inverse of sym_inv_sqrt under the same floor.
template <typename Derived>
MatrixX<typename Derived::Scalar> sym_sqrt(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(symmetrized(a));
  if (eig.info() != Eigen::Success) throw NotPositiveDefinite("eigendecomposition failed");
  VectorX<Scalar> lambda = eig.eigenvalues();
  if (lambda.size() > 0 && lambda.minCoeff() <= Scalar(0)) {
    throw NotPositiveDefinite("non-positive eigenvalue");
  }
  lambda = lambda.cwiseMax(Scalar(kEigenFloor));
  const auto& v = eig.eigenvectors();
  MatrixX<Scalar> r = v * lambda.cwiseSqrt().asDiagonal() * v.transpose();
  return (r + r.transpose()) / Scalar(2);
}

// Unbiased (1/(N-1)) covariance of the rows of `samples`.
template <typename Derived>
MatrixX<typename Derived::Scalar> sample_covariance(const Eigen::MatrixBase<Derived>& samples) {
  using Scalar = typename Derived::Scalar;
  if (samples.rows() < 2) throw DegenerateData("covariance needs at least two samples");
  const VectorX<Scalar> mean = samples.colwise().mean().transpose();
  const MatrixX<Scalar> centered = samples.rowwise() - mean.transpose();
  return (centered.transpose() * centered) / Scalar(samples.rows() - 1);
}

}  // namespace predflow
