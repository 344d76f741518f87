#pragma once

#include <Eigen/Core>

namespace predflow {

using Index = Eigen::Index;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Row-major storage for sample matrices (one sample per row), matching the
// on-disk tensor layout.
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vec = VectorX<double>;
using Mat = MatrixX<double>;
using RowMat = RowMatrixX<double>;

// Floor applied to every standard deviation derived from a log-std.
inline constexpr double kMinStd = 1e-6;

}  // namespace predflow
