#include "predflow/flows.hpp"

#include <cmath>
#include <limits>

#include "predflow/linalg.hpp"

namespace predflow {

namespace {

// |det B| below this counts as singular.
const double kMinLogAbsDet = std::log(1e-300);

double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

}  // namespace

AffineFlow::AffineFlow(Vec shift, Mat scale, Mat inverse_scale, double log_abs_det)
    : shift_(std::move(shift)),
      scale_(std::move(scale)),
      inverse_scale_(std::move(inverse_scale)),
      log_abs_det_(log_abs_det) {}

AffineFlow::AffineFlow(Vec shift, Mat scale) : shift_(std::move(shift)), scale_(std::move(scale)) {
  if (scale_.rows() != scale_.cols()) throw DimensionMismatch("flow scale must be square");
  require_dim(scale_.rows(), shift_.size(), "flow shift");
  Eigen::PartialPivLU<Mat> lu(scale_);
  const Vec u_diag = lu.matrixLU().diagonal();
  log_abs_det_ = u_diag.array().abs().log().sum();
  if (!std::isfinite(log_abs_det_) || log_abs_det_ < kMinLogAbsDet) {
    throw SingularScale("scale matrix is singular");
  }
  inverse_scale_ = lu.inverse();
}

AffineFlow AffineFlow::identity(Index dim) {
  return AffineFlow(Vec::Zero(dim), Mat::Identity(dim, dim), Mat::Identity(dim, dim), 0.0);
}

AffineFlow AffineFlow::from_whitening(Vec mean, Mat scale, Mat whitening) {
  AffineFlow f(std::move(mean), std::move(scale));
  f.inverse_scale_ = std::move(whitening);
  return f;
}

FlowResult affine_forward(const AffineFlow& f, const Vec& u) {
  require_dim(f.dim(), u.size(), "affine_forward input");
  return {f.shift() + f.scale() * u, f.log_abs_det()};
}

FlowResult affine_inverse(const AffineFlow& f, const Vec& v) {
  require_dim(f.dim(), v.size(), "affine_inverse input");
  return {f.inverse_scale() * (v - f.shift()), -f.log_abs_det()};
}

ConditionalAffineFlow::ConditionalAffineFlow(Mlp net, Index dim) : net_(std::move(net)), dim_(dim) {
  require_dim(output_size(dim), net_.output_dim(), "conditional flow network output");
}

AffineFlow ConditionalAffineFlow::at(const Vec& conditioning) const {
  const Vec out = mlp_forward(net_, conditioning);
  Mat scale = Mat::Zero(dim_, dim_);
  Index k = 2 * dim_;
  for (Index i = 0; i < dim_; ++i) {
    scale(i, i) = softplus(out[dim_ + i]) + kMinStd;
    for (Index j = 0; j < i; ++j) scale(i, j) = out[k++];
  }
  return AffineFlow(out.head(dim_), std::move(scale));
}

void FlowStack::validate() const {
  for (const auto& s : steps) require_dim(base.dim(), s.dim(), "flow stack step");
}

FlowResult flow_forward(const FlowStack& s, const Vec& u) {
  s.validate();
  FlowResult r{u, 0.0};
  for (const auto& step : s.steps) {
    auto next = affine_forward(step, r.value);
    r.value = std::move(next.value);
    r.logdet += next.logdet;
  }
  return r;
}

FlowResult flow_inverse(const FlowStack& s, const Vec& v) {
  s.validate();
  FlowResult r{v, 0.0};
  for (auto it = s.steps.rbegin(); it != s.steps.rend(); ++it) {
    auto prev = affine_inverse(*it, r.value);
    r.value = std::move(prev.value);
    r.logdet += prev.logdet;
  }
  return r;
}

double flow_log_prob(const FlowStack& s, const Vec& v) {
  const FlowResult u = flow_inverse(s, v);
  return diag_log_prob(s.base, u.value) + u.logdet;
}

Vec flow_sample(const FlowStack& s, Rng& rng) {
  const Vec u = reparam_sample(s.base, standard_normal(rng, s.dim()));
  return flow_forward(s, u).value;
}

namespace {

struct Moments {
  Vec mean;
  Mat covariance;
};

Moments fit_moments(const Eigen::Ref<const RowMat>& data) {
  if (data.rows() <= data.cols()) {
    throw DegenerateData("whitening needs more samples than dimensions");
  }
  if (!data.allFinite()) throw DegenerateData("data contains non-finite values");
  return {data.colwise().mean().transpose(), sample_covariance(data)};
}

}  // namespace

AffineFlow fit_zca(const Eigen::Ref<const RowMat>& data) {
  const Moments m = fit_moments(data);
  Eigen::SelfAdjointEigenSolver<Mat> eig(m.covariance, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < kEigenFloor) {
    throw DegenerateData("covariance is rank deficient");
  }
  return AffineFlow::from_whitening(m.mean, sym_sqrt(m.covariance), sym_inv_sqrt(m.covariance));
}

AffineFlow fit_cholesky_whitening(const Eigen::Ref<const RowMat>& data) {
  const Moments m = fit_moments(data);
  Mat l;
  try {
    l = cholesky(m.covariance);
  } catch (const NotPositiveDefinite&) {
    throw DegenerateData("covariance is not positive definite");
  }
  if (l.diagonal().minCoeff() < std::sqrt(kEigenFloor)) {
    throw DegenerateData("covariance is rank deficient");
  }
  const Index d = l.rows();
  Mat w = l.triangularView<Eigen::Lower>().solve(Mat::Identity(d, d));
  w.triangularView<Eigen::StrictlyUpper>().setZero();
  return AffineFlow::from_whitening(m.mean, std::move(l), std::move(w));
}

RowMat whiten(const AffineFlow& f, const Eigen::Ref<const RowMat>& data) {
  require_dim(f.dim(), data.cols(), "whiten input");
  return (data.rowwise() - f.shift().transpose()) * f.inverse_scale().transpose();
}

TemporalPredictor TemporalPredictor::constant(Vec mean, Vec stddev) {
  require_dim(mean.size(), stddev.size(), "constant predictor std");
  TemporalPredictor p;
  p.kind_ = Kind::Constant;
  p.dim_ = mean.size();
  p.mean_ = std::move(mean);
  p.stddev_ = stddev.cwiseMax(kMinStd);
  return p;
}

TemporalPredictor TemporalPredictor::previous_frame(Index dim, double stddev) {
  TemporalPredictor p;
  p.kind_ = Kind::PreviousFrame;
  p.context_ = 1;
  p.dim_ = dim;
  p.stddev_ = Vec::Constant(dim, std::max(stddev, kMinStd));
  return p;
}

TemporalPredictor TemporalPredictor::network(Mlp mean_net, Mlp log_std_net, Index context) {
  if (context < 1) throw DimensionMismatch("network predictor needs a context of at least 1");
  const Index dim = mean_net.output_dim();
  require_dim(dim * context, mean_net.input_dim(), "mean network input");
  require_dim(dim * context, log_std_net.input_dim(), "scale network input");
  require_dim(dim, log_std_net.output_dim(), "scale network output");
  TemporalPredictor p;
  p.kind_ = Kind::Network;
  p.context_ = context;
  p.dim_ = dim;
  p.mean_net_ = std::move(mean_net);
  p.log_std_net_ = std::move(log_std_net);
  return p;
}

DiagGaussian TemporalPredictor::predict(const Eigen::Ref<const RowMat>& window) const {
  require_dim(context_, window.rows(), "predictor window length");
  require_dim(dim_, window.cols(), "predictor window width");
  switch (kind_) {
    case Kind::Constant:
      return DiagGaussian::from_std(mean_, stddev_);
    case Kind::PreviousFrame:
      return DiagGaussian::from_std(window.row(context_ - 1).transpose(), stddev_);
    case Kind::Network: {
      const RowMat w = window;
      const Vec flat = Eigen::Map<const Vec>(w.data(), w.size());
      return {mlp_forward(*mean_net_, flat), mlp_forward(*log_std_net_, flat)};
    }
  }
  return DiagGaussian::standard(dim_);
}

RowMat temporal_normalize(const TemporalPredictor& p, const Eigen::Ref<const RowMat>& x_seq) {
  require_dim(p.dim(), x_seq.cols(), "sequence width");
  const Index k = p.context();
  if (x_seq.rows() <= k) throw DimensionMismatch("sequence must be longer than the context");
  RowMat y(x_seq.rows() - k, x_seq.cols());
  for (Index t = k; t < x_seq.rows(); ++t) {
    const DiagGaussian pred = p.predict(x_seq.middleRows(t - k, k));
    y.row(t - k) = ((x_seq.row(t).transpose() - pred.mean).array() / pred.stddev().array())
                       .matrix()
                       .transpose();
  }
  return y;
}

RowMat temporal_denormalize(const TemporalPredictor& p, const Eigen::Ref<const RowMat>& y_seq,
                            const Eigen::Ref<const RowMat>& x_prefix) {
  const Index k = p.context();
  require_dim(k, x_prefix.rows(), "sequence prefix length");
  require_dim(p.dim(), y_seq.cols(), "normalized sequence width");
  if (k > 0) require_dim(p.dim(), x_prefix.cols(), "sequence prefix width");
  RowMat x(k + y_seq.rows(), p.dim());
  if (k > 0) x.topRows(k) = x_prefix;
  for (Index t = 0; t < y_seq.rows(); ++t) {
    const DiagGaussian pred = p.predict(x.middleRows(t, k));
    x.row(k + t) = (pred.mean + pred.stddev().cwiseProduct(y_seq.row(t).transpose())).transpose();
  }
  return x;
}

double temporal_log_prob(const TemporalPredictor& p, const Eigen::Ref<const RowMat>& x_seq) {
  const Index k = p.context();
  if (x_seq.rows() <= k) throw DimensionMismatch("sequence must be longer than the context");
  double total = 0.0;
  for (Index t = k; t < x_seq.rows(); ++t) {
    const DiagGaussian pred = p.predict(x_seq.middleRows(t - k, k));
    total += diag_log_prob(pred, x_seq.row(t).transpose());
  }
  return total;
}

void put_affine_flow(Checkpoint& ckpt, const std::string& prefix, const AffineFlow& f) {
  ckpt.header[prefix] = {{"kind", "affine"}, {"dim", f.dim()}};
  ckpt.tensors[prefix + ".shift"] = Tensor::from_vector(f.shift());
  ckpt.tensors[prefix + ".scale"] = Tensor::from_matrix(f.scale());
  ckpt.tensors[prefix + ".inverse_scale"] = Tensor::from_matrix(f.inverse_scale());
}

AffineFlow get_affine_flow(const Checkpoint& ckpt, const std::string& prefix) {
  const Tensor& shift = ckpt.tensor(prefix + ".shift");
  const Tensor& scale = ckpt.tensor(prefix + ".scale");
  const Tensor& inverse = ckpt.tensor(prefix + ".inverse_scale");
  if (shift.rank() != 1 || scale.rank() != 2 || inverse.rank() != 2) {
    throw BadFormat("bad affine flow tensors under " + prefix);
  }
  return AffineFlow::from_whitening(shift.vector(), Mat(scale.matrix()), Mat(inverse.matrix()));
}

}  // namespace predflow
