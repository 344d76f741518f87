#pragma once

#include <optional>
#include <vector>

#include <Eigen/LU>

#include "predflow/checkpoint.hpp"
#include "predflow/distributions.hpp"
#include "predflow/mlp.hpp"
#include "predflow/types.hpp"

namespace predflow {

// v = shift + scale * u, with scale invertible. The inverse scale is formed
// once at construction; whitening fitters supply it exactly.
class AffineFlow {
 public:
  AffineFlow(Vec shift, Mat scale);

  static AffineFlow identity(Index dim);
  // Flow whose inverse direction is u = whitening * (v - mean).
  static AffineFlow from_whitening(Vec mean, Mat scale, Mat whitening);

  Index dim() const { return shift_.size(); }
  const Vec& shift() const { return shift_; }
  const Mat& scale() const { return scale_; }
  const Mat& inverse_scale() const { return inverse_scale_; }
  // log |det scale|
  double log_abs_det() const { return log_abs_det_; }

 private:
  AffineFlow(Vec shift, Mat scale, Mat inverse_scale, double log_abs_det);

  Vec shift_;
  Mat scale_;
  Mat inverse_scale_;
  double log_abs_det_ = 0.0;
};

struct FlowResult {
  Vec value;
  double logdet = 0.0;
};

FlowResult affine_forward(const AffineFlow& f, const Vec& u);
// Returns u and the log-determinant of the inverse map (the negated forward one).
FlowResult affine_inverse(const AffineFlow& f, const Vec& v);

// Affine flow whose shift and scale are produced by an Mlp from a
// conditioning vector. The scale is lower triangular with a softplus
// diagonal, so it is invertible for every input.
// Network output layout: [shift (D), raw diagonal (D), strict lower part row by row].
class ConditionalAffineFlow {
 public:
  ConditionalAffineFlow(Mlp net, Index dim);

  static Index output_size(Index dim) { return 2 * dim + dim * (dim - 1) / 2; }

  Index dim() const { return dim_; }
  const Mlp& net() const { return net_; }
  AffineFlow at(const Vec& conditioning) const;

 private:
  Mlp net_;
  Index dim_;
};

// base u ~ N(mean, diag(std^2)), v = step_n(... step_1(u)).
struct FlowStack {
  std::vector<AffineFlow> steps;
  DiagGaussian base;

  Index dim() const { return base.dim(); }
  void validate() const;
};

FlowResult flow_forward(const FlowStack& s, const Vec& u);
FlowResult flow_inverse(const FlowStack& s, const Vec& v);
// log p(v) = log base(u) - sum of forward log-determinants.
double flow_log_prob(const FlowStack& s, const Vec& v);
Vec flow_sample(const FlowStack& s, Rng& rng);

// Symmetric (ZCA) whitening: scale = Sigma^{1/2}, inverse scale = Sigma^{-1/2}.
AffineFlow fit_zca(const Eigen::Ref<const RowMat>& data);
// Triangular whitening: scale = L with Sigma = L L^T, inverse scale = L^{-1}.
AffineFlow fit_cholesky_whitening(const Eigen::Ref<const RowMat>& data);
// Applies the inverse direction to every row.
RowMat whiten(const AffineFlow& f, const Eigen::Ref<const RowMat>& data);

// Mean and scale of p(x_t | x_{t-k..t-1}).
class TemporalPredictor {
 public:
  enum class Kind { Constant, PreviousFrame, Network };

  static TemporalPredictor constant(Vec mean, Vec stddev);
  static TemporalPredictor previous_frame(Index dim, double stddev = 1.0);
  // mean_net and log_std_net both map the flattened k-frame window
  // (oldest first) to a frame.
  static TemporalPredictor network(Mlp mean_net, Mlp log_std_net, Index context);

  Kind kind() const { return kind_; }
  Index context() const { return context_; }
  Index dim() const { return dim_; }

  // window: context x dim block of the preceding frames, oldest first.
  DiagGaussian predict(const Eigen::Ref<const RowMat>& window) const;

 private:
  TemporalPredictor() = default;

  Kind kind_ = Kind::Constant;
  Index context_ = 0;
  Index dim_ = 0;
  Vec mean_;
  Vec stddev_;
  std::optional<Mlp> mean_net_;
  std::optional<Mlp> log_std_net_;
};

// y_t = (x_t - mu(x_<t)) / sigma(x_<t) for every t past the context window.
RowMat temporal_normalize(const TemporalPredictor& p, const Eigen::Ref<const RowMat>& x_seq);
// Inverse: rebuilds the sequence from its first `context` frames.
RowMat temporal_denormalize(const TemporalPredictor& p, const Eigen::Ref<const RowMat>& y_seq,
                            const Eigen::Ref<const RowMat>& x_prefix);
// log p(x_{k+1:T} | x_{1:k}) via the change of variables to y.
double temporal_log_prob(const TemporalPredictor& p, const Eigen::Ref<const RowMat>& x_seq);

void put_affine_flow(Checkpoint& ckpt, const std::string& prefix, const AffineFlow& f);
AffineFlow get_affine_flow(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace predflow
