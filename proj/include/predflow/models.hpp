#pragma once

#include <optional>
#include <vector>

#include "predflow/checkpoint.hpp"
#include "predflow/distributions.hpp"
#include "predflow/flows.hpp"
#include "predflow/mlp.hpp"
#include "predflow/rng.hpp"

namespace predflow {

// p(z) = N(prior_mean, diag(prior_std^2)),
// p(x | z) = N(link(weight z + bias), diag(obs_std^2)).
// Exact oracles require the identity link.
struct LinearGaussianModel {
  Mat weight;  // M x K
  Vec bias;
  Vec obs_std;
  Vec prior_mean;
  Vec prior_std;
  Activation link = Activation::Identity;

  Index latent_dim() const { return weight.cols(); }
  Index obs_dim() const { return weight.rows(); }
  bool is_linear() const { return link == Activation::Identity; }
  void validate() const;

  // K = M = 1, W = 1, b = 0, unit variances.
  static LinearGaussianModel unit();
};

// Hierarchical latent Gaussian model, levels ordered bottom (next to x) to top:
//   p(z^{L-1}) = top_prior
//   p(z^l | z^{l+1}) = N(mean, diag(exp(log_std)^2)), [mean; log_std] = level_priors[l](z^{l+1})
//   p(x~ | z^0) from the decoder, x = obs_flow(x~).
// Each level conditions only on the level directly above it.
struct DeepLatentModel {
  std::vector<Index> latent_dims;
  DiagGaussian top_prior;
  std::vector<Mlp> level_priors;
  Mlp decoder;
  // When false the decoder outputs the mean only and obs_log_std is used.
  bool decoder_outputs_scale = false;
  Vec obs_log_std;
  std::vector<AffineFlow> obs_flow;

  Index num_levels() const { return static_cast<Index>(latent_dims.size()); }
  Index obs_dim() const;
  Index total_latent_dim() const;
  void validate() const;

  static DeepLatentModel from_linear(const LinearGaussianModel& m);
};

// The linear model a DeepLatentModel encodes, if it has that structure: one
// level, a single-layer decoder, constant observation noise and no flow.
std::optional<LinearGaussianModel> as_linear(const DeepLatentModel& m);

using LatentLevels = std::vector<Vec>;

struct JointSample {
  LatentLevels latents;
  Vec observation;
};

JointSample sample_joint(const LinearGaussianModel& model, Rng& rng);
JointSample sample_joint(const DeepLatentModel& model, Rng& rng);

// log p(x, z) summed over every level and the observation.
double joint_log_prob(const LinearGaussianModel& model, const JointSample& s);
double joint_log_prob(const DeepLatentModel& model, const JointSample& s);

DiagGaussian cond_likelihood_params(const LinearGaussianModel& model, const Vec& z);
// Distribution of the pre-flow observation x~ given the bottom latent.
DiagGaussian cond_likelihood_params(const DeepLatentModel& model, const LatentLevels& z);
// Conditional prior of `level` given the level above (top prior for the top level).
DiagGaussian level_prior(const DeepLatentModel& model, Index level, const LatentLevels& z);

// x~ = obs_flow^{-1}(x) and the log-determinant of that inverse map.
FlowResult normalize_observation(const DeepLatentModel& model, const Vec& x);

// Gaussian conditioning: S = (Sz^-1 + W^T Sx^-1 W)^-1,
// m = S (W^T Sx^-1 (x - b) + Sz^-1 mu_z).
FullGaussian exact_posterior(const LinearGaussianModel& model, const Vec& x);
// p(x) = N(W mu_z + b, W Sz W^T + Sx).
FullGaussian exact_marginal(const LinearGaussianModel& model);
double exact_log_marginal(const LinearGaussianModel& model, const Vec& x);

// Random model with W ~ N(0, 1), b ~ N(0, 0.25), obs_std ~ U(0.3, 1), unit prior.
LinearGaussianModel random_linear_model(Index latent_dim, Index obs_dim, Rng& rng);

void put_model(Checkpoint& ckpt, const LinearGaussianModel& m);
void put_model(Checkpoint& ckpt, const DeepLatentModel& m);
LinearGaussianModel get_linear_model(const Checkpoint& ckpt);
DeepLatentModel get_deep_model(const Checkpoint& ckpt);

}  // namespace predflow
