#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "predflow/models.hpp"

namespace predflow {

// Approximate posterior q(z) = prod_l N(mean_l, diag(exp(log_std_l)^2)).
// Packed layout (lambda): all level means bottom to top, then all log-stds.
struct PosteriorEstimate {
  std::vector<DiagGaussian> levels;

  Index total_dim() const;
  std::vector<Index> dims() const;
  LatentLevels means() const;
  Vec pack() const;
  static PosteriorEstimate unpack(const Vec& lambda, std::span<const Index> dims);
  // Prior means and scales propagated top-down through the level priors.
  static PosteriorEstimate from_prior(const DeepLatentModel& model);
  static PosteriorEstimate point(const LatentLevels& z, double log_std);
};

// xi_x = (x~ - mu_x(z)) / sigma_x;  xi_l = (z_l - mu_l(z_{l+1})) / sigma_l.
struct WeightedErrors {
  Vec obs;
  std::vector<Vec> latent;
};

struct TraceEntry {
  int iteration = 0;
  double objective = 0.0;
  double grad_norm = 0.0;  // infinity norm
  Vec lambda;
};

struct InferenceTrace {
  std::vector<TraceEntry> entries;
  // Gradient below tol, or a line search that cannot improve the objective
  // at floating-point resolution.
  bool converged = false;

  std::size_t size() const { return entries.size(); }
};

// ---- MAP objective (predictive coding) ------------------------------------

// -1/2 ||xi_x||^2 - sum_l 1/2 ||xi_l||^2, minus the log-scales that depend on
// the latents (none for the linear model, where this is exactly the usual
// constant-free MAP objective).
double map_objective(const DeepLatentModel& model, const Vec& x, const LatentLevels& z);
double map_objective(const LinearGaussianModel& model, const Vec& x, const Vec& z);

WeightedErrors weighted_errors(const DeepLatentModel& model, const Vec& x, const LatentLevels& z);
WeightedErrors weighted_errors(const LinearGaussianModel& model, const Vec& x, const Vec& z);

// Gradient of map_objective with respect to every latent level. For the
// linear model this is W^T (xi_x / sigma_x) - xi_z / sigma_z; in general the
// observation error is carried back through the decoder's transposed
// Jacobian.
LatentLevels map_gradient(const DeepLatentModel& model, const Vec& x, const LatentLevels& z);
Vec map_gradient(const LinearGaussianModel& model, const Vec& x, const Vec& z);

struct AscentOptions {
  double step = 0.05;
  int max_steps = 10000;
  double tol = 1e-8;  // on the infinity norm of the gradient
  bool backtracking = true;
  int max_halvings = 20;
};

struct PcResult {
  LatentLevels z;
  InferenceTrace trace;
};

// z <- z + step * grad until the gradient falls below tol. With backtracking
// each step is halved until the objective does not decrease, so the traced
// objective is non-decreasing. Throws Diverged on a non-finite objective.
PcResult pc_inference(const DeepLatentModel& model, const Vec& x, const LatentLevels& init,
                      const AscentOptions& options = {});
PcResult pc_inference(const LinearGaussianModel& model, const Vec& x, const Vec& init,
                      const AscentOptions& options = {});

// Exact gradient of map_objective with respect to W: (xi_x / sigma_x) z^T.
// With unit observation noise this is the local product xi_x z^T.
Mat local_weight_gradient(const LinearGaussianModel& model, const Vec& x, const Vec& z);

// ---- ELBO -------------------------------------------------------------------

struct ElboTerms {
  double value = 0.0;  // recon - beta * kl
  double recon = 0.0;
  double kl = 0.0;
};

// Gradient of the ELBO with respect to every model parameter.
struct ModelGradient {
  GradientBundle decoder;
  Vec obs_log_std;
  std::vector<GradientBundle> level_priors;
  Vec top_mean;
  Vec top_log_std;

  static ModelGradient zeros_like(const DeepLatentModel& model);
  ModelGradient& operator+=(const ModelGradient& other);
  ModelGradient& operator*=(double k);
  Vec flatten() const;
};

struct ElboGradient {
  ElboTerms terms;
  Vec lambda;  // packed like PosteriorEstimate::pack
  std::optional<ModelGradient> model;
};

// Reparameterized estimate: z = mean + sigma * eps per noise draw; the KL of
// each level to its conditional prior is analytic given the level above.
// `noise` holds one LatentLevels of standard-normal draws per sample.
ElboGradient elbo_gradient(const DeepLatentModel& model, const PosteriorEstimate& q, const Vec& x,
                           std::span<const LatentLevels> noise, double beta, bool want_model);

std::vector<LatentLevels> draw_noise(std::span<const Index> dims, int n_samples, Rng& rng);

// Monte Carlo ELBO with n_samples reparameterized draws.
ElboTerms elbo(const DeepLatentModel& model, const PosteriorEstimate& q, const Vec& x,
               int n_samples, double beta, Rng& rng);
ElboTerms elbo(const LinearGaussianModel& model, const DiagGaussian& q, const Vec& x,
               int n_samples, double beta, Rng& rng);

// Closed-form expectation for identity-link linear models.
struct LinearModelGradient {
  Mat weight;
  Vec bias;
  Vec log_obs_std;
  Vec prior_mean;
  Vec log_prior_std;

  static LinearModelGradient zeros_like(const LinearGaussianModel& m);
  LinearModelGradient& operator+=(const LinearModelGradient& other);
  LinearModelGradient& operator*=(double k);
  Vec flatten() const;
};

struct LinearElboGradient {
  ElboTerms terms;
  Vec lambda;  // [d mean; d log_std]
  LinearModelGradient model;
};

ElboTerms elbo_analytic(const LinearGaussianModel& model, const DiagGaussian& q, const Vec& x,
                        double beta = 1.0);
LinearElboGradient elbo_analytic_gradient(const LinearGaussianModel& model, const DiagGaussian& q,
                                          const Vec& x, double beta = 1.0);

// How an engine estimates the ELBO and its gradient.
struct ElboEstimator {
  bool analytic = false;  // closed form; identity-link linear models only
  int n_samples = 1;
  double beta = 1.0;
};

// ELBO and lambda-gradient under `estimator`; `rng` is unused when analytic.
ElboGradient estimate_elbo(const DeepLatentModel& model, const PosteriorEstimate& q, const Vec& x,
                           const ElboEstimator& estimator, Rng& rng, bool want_model = false);

// ---- Gradient-based variational inference -----------------------------------

struct VariationalOptions {
  AscentOptions ascent;
  ElboEstimator estimator{true, 1, 1.0};
  // Keep log-std fixed and move only the means (MAP-like degenerate case).
  bool fix_scale = false;
};

struct VariationalResult {
  PosteriorEstimate q;
  InferenceTrace trace;
};

// Gradient ascent on the ELBO over lambda. Sampled estimators draw their
// noise once up front, so the objective is deterministic within a call.
VariationalResult gradient_inference(const DeepLatentModel& model, const Vec& x,
                                     const PosteriorEstimate& init,
                                     const VariationalOptions& options, Rng& rng);

// Shared ascent loop: f(x, grad) returns the objective and fills grad.
struct AscentResult {
  Vec x;
  InferenceTrace trace;
};
AscentResult gradient_ascent(const std::function<double(const Vec&, Vec*)>& f, Vec x0,
                             const AscentOptions& options);

}  // namespace predflow
