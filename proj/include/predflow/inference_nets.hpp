#pragma once

#include <vector>

#include "predflow/inference.hpp"

namespace predflow {

// Encoder lambda = f(x): one forward pass, output packed like
// PosteriorEstimate::pack (means, then log-stds).
struct DirectInferenceNet {
  Mlp net;
  std::vector<Index> latent_dims;

  // Two tanh hidden layers of `hidden` units and a linear output.
  static DirectInferenceNet make(Index obs_dim, std::vector<Index> latent_dims, Index hidden,
                                 Rng& rng);
};

PosteriorEstimate direct_infer(const DirectInferenceNet& net, const Vec& x);

enum class IterativeMode {
  GradientInput,  // net(lambda, dL/dlambda)
  ErrorInput,     // net(lambda, xi_x, xi_z), errors evaluated at the posterior means
};

std::string_view to_string(IterativeMode mode);
IterativeMode iterative_mode_from_string(std::string_view name);

// Residual update lambda <- lambda + net(inputs).
struct IterativeInferenceNet {
  Mlp net;
  IterativeMode mode = IterativeMode::ErrorInput;
  std::vector<Index> latent_dims;
  Index obs_dim = 0;

  Index lambda_dim() const;
  Index input_dim() const;

  // Two tanh hidden layers of `hidden` units; the output layer starts at zero
  // so the untrained net is the identity update.
  static IterativeInferenceNet make(Index obs_dim, std::vector<Index> latent_dims,
                                    IterativeMode mode, Index hidden, Rng& rng);
  // Single linear layer [0 | step * I] on (lambda, grad): lambda + step * grad.
  static IterativeInferenceNet plain(Index obs_dim, std::vector<Index> latent_dims, double step);
};

// Builds the net input at q. Always fills `at_q` with the ELBO estimate there.
Vec iterative_net_input(const IterativeInferenceNet& net, const DeepLatentModel& model,
                        const Vec& x, const PosteriorEstimate& q, const ElboEstimator& estimator,
                        Rng& rng, ElboGradient& at_q);

struct IterativeResult {
  PosteriorEstimate q;
  // One entry per update, holding the state the update was computed from.
  InferenceTrace trace;
};

// Throws Diverged if lambda stops being finite.
IterativeResult iterative_infer(const IterativeInferenceNet& net, const DeepLatentModel& model,
                                const Vec& x, const PosteriorEstimate& init, int n_iters,
                                const ElboEstimator& estimator, Rng& rng);

void put_inference_net(Checkpoint& ckpt, const DirectInferenceNet& net);
void put_inference_net(Checkpoint& ckpt, const IterativeInferenceNet& net);
DirectInferenceNet get_direct_net(const Checkpoint& ckpt);
IterativeInferenceNet get_iterative_net(const Checkpoint& ckpt);

}  // namespace predflow
