#pragma once

#include <cmath>
#include <functional>
#include <numbers>

#include <Eigen/Cholesky>

#include "predflow/errors.hpp"
#include "predflow/linalg.hpp"
#include "predflow/rng.hpp"
#include "predflow/types.hpp"

namespace predflow {

template <typename Scalar>
inline constexpr Scalar kHalfLog2Pi = Scalar(0.91893853320467274178032973640562);

// Diagonal Gaussian parameterized by mean and log standard deviation.
template <typename Scalar>
struct DiagGaussianT {
  VectorX<Scalar> mean;
  VectorX<Scalar> log_std;

  static DiagGaussianT from_std(VectorX<Scalar> mean, const VectorX<Scalar>& std) {
    require_dim(mean.size(), std.size(), "gaussian std");
    return {std::move(mean), std.array().log().matrix()};
  }
  static DiagGaussianT standard(Index dim) {
    return {VectorX<Scalar>::Zero(dim), VectorX<Scalar>::Zero(dim)};
  }

  Index dim() const { return mean.size(); }
  VectorX<Scalar> stddev() const {
    return log_std.array().exp().max(Scalar(kMinStd)).matrix();
  }
  VectorX<Scalar> variance() const { return stddev().array().square().matrix(); }
};

template <typename Scalar>
struct FullGaussianT {
  VectorX<Scalar> mean;
  MatrixX<Scalar> covariance;

  Index dim() const { return mean.size(); }
};

using DiagGaussian = DiagGaussianT<double>;
using FullGaussian = FullGaussianT<double>;

template <typename Scalar>
FullGaussianT<Scalar> to_full(const DiagGaussianT<Scalar>& d) {
  return {d.mean, d.variance().asDiagonal()};
}

template <typename Scalar, typename Derived>
Scalar diag_log_prob(const DiagGaussianT<Scalar>& d, const Eigen::MatrixBase<Derived>& x) {
  require_dim(d.dim(), x.size(), "diag_log_prob input");
  const VectorX<Scalar> sigma = d.stddev();
  const auto z = (x.derived().array() - d.mean.array()) / sigma.array();
  return -Scalar(d.dim()) * kHalfLog2Pi<Scalar> - sigma.array().log().sum() -
         Scalar(0.5) * z.square().sum();
}

// Evaluated through a Cholesky solve of the covariance.
template <typename Scalar, typename Derived>
Scalar full_log_prob(const FullGaussianT<Scalar>& d, const Eigen::MatrixBase<Derived>& x) {
  require_dim(d.dim(), x.size(), "full_log_prob input");
  require_dim(d.dim(), d.covariance.rows(), "covariance");
  const MatrixX<Scalar> l = cholesky(d.covariance);
  const VectorX<Scalar> r = x.derived() - d.mean;
  const VectorX<Scalar> w = l.template triangularView<Eigen::Lower>().solve(r);
  return -Scalar(d.dim()) * kHalfLog2Pi<Scalar> - l.diagonal().array().log().sum() -
         Scalar(0.5) * w.squaredNorm();
}

// z = mean + sigma * eps.
template <typename Scalar, typename Derived>
VectorX<Scalar> reparam_sample(const DiagGaussianT<Scalar>& d,
                               const Eigen::MatrixBase<Derived>& eps) {
  require_dim(d.dim(), eps.size(), "reparam_sample noise");
  return d.mean + d.stddev().cwiseProduct(eps.derived());
}

// KL(q || p) between diagonal Gaussians, in closed form.
template <typename Scalar>
Scalar kl_diag_diag(const DiagGaussianT<Scalar>& q, const DiagGaussianT<Scalar>& p) {
  require_dim(p.dim(), q.dim(), "kl_diag_diag");
  const auto vq = q.variance().array().eval();
  const auto vp = p.variance().array().eval();
  const auto dm = (q.mean - p.mean).array().eval();
  const Scalar kl = Scalar(0.5) * ((vq / vp) + dm.square() / vp - Scalar(1) - (vq / vp).log()).sum();
  return kl < Scalar(0) ? Scalar(0) : kl;
}

// KL(q || p) between full-covariance Gaussians, in closed form.
template <typename Scalar>
Scalar kl_full_full(const FullGaussianT<Scalar>& q, const FullGaussianT<Scalar>& p) {
  require_dim(p.dim(), q.dim(), "kl_full_full");
  const MatrixX<Scalar> lp = cholesky(p.covariance);
  const auto tri = lp.template triangularView<Eigen::Lower>();
  const MatrixX<Scalar> a = tri.solve(q.covariance);
  const MatrixX<Scalar> p_inv_q = tri.transpose().solve(a);
  const VectorX<Scalar> w = tri.solve(VectorX<Scalar>(p.mean - q.mean));
  return Scalar(0.5) * (p_inv_q.trace() + w.squaredNorm() - Scalar(q.dim()) +
                        logdet(p.covariance) - logdet(q.covariance));
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

// E_q[log q(z) - log p(z)] by sampling q; used when p is not diagonal Gaussian.
inline MonteCarloEstimate kl_monte_carlo(const DiagGaussian& q,
                                         const std::function<double(const Vec&)>& log_p,
                                         int n_samples, Rng& rng) {
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const Vec z = reparam_sample(q, standard_normal(rng, q.dim()));
    const double term = diag_log_prob(q, z) - log_p(z);
    sum += term;
    sum_sq += term * term;
  }
  const double n = n_samples;
  const double mean = sum / n;
  const double var = n > 1 ? (sum_sq - n * mean * mean) / (n - 1) : 0.0;
  return {mean, std::sqrt(std::max(var, 0.0) / n)};
}

}  // namespace predflow
