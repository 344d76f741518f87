#pragma once

#include <string_view>
#include <variant>
#include <vector>

#include "predflow/inference_nets.hpp"
#include "predflow/optim.hpp"

namespace predflow {

// One row of metrics.csv.
struct MetricRow {
  long step = 0;
  double elbo = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double grad_norm = 0.0;
};

// ---- inference engines --------------------------------------------------------

// Per-datum gradient ascent on the ELBO, started from the prior.
struct PcEngine {
  VariationalOptions options;
};

struct DirectEngine {
  DirectInferenceNet net;
};

struct IterativeEngine {
  IterativeInferenceNet net;
  int n_iters = 5;
  ElboEstimator estimator;
};

using Engine = std::variant<PcEngine, DirectEngine, IterativeEngine>;

std::string_view engine_name(const Engine& engine);

// Engines only read the model, so a batch can be inferred in parallel as long
// as each datum gets its own rng.
PosteriorEstimate run_engine(const Engine& engine, const DeepLatentModel& model, const Vec& x,
                             Rng& rng);

// ---- encoder training -----------------------------------------------------------

struct EncoderOptions {
  int epochs = 100;
  Index batch_size = 32;
  AdamOptions adam{1e-2};
  ElboEstimator estimator;
  int n_iters = 5;  // iterative nets only
};

// A single Adam step on one minibatch. The metrics describe the batch before
// the step. The iterative net is unrolled for options.n_iters; each unrolled
// output is scored by the ELBO and its inputs are treated as constants.
MetricRow encoder_step(DirectInferenceNet& net, Adam& adam, const DeepLatentModel& model,
                       const RowMat& batch, const EncoderOptions& options, Rng& rng);
MetricRow encoder_step(IterativeInferenceNet& net, Adam& adam, const DeepLatentModel& model,
                       const RowMat& batch, const EncoderOptions& options, Rng& rng);

// Fits the encoder to a fixed model; one metrics row per epoch.
std::vector<MetricRow> train_direct(DirectInferenceNet& net, const DeepLatentModel& model,
                                    const RowMat& data, const EncoderOptions& options, Rng& rng);
std::vector<MetricRow> train_iterative(IterativeInferenceNet& net, const DeepLatentModel& model,
                                       const RowMat& data, const EncoderOptions& options,
                                       Rng& rng);

// ---- variational EM -------------------------------------------------------------

enum class MStepEstimator {
  Analytic,   // closed-form expectation, identity-link linear models
  Sampled,    // reparameterized backprop through the decoder
  LocalRule,  // error-times-activity products on the same samples as Sampled
};

std::string_view to_string(MStepEstimator e);
MStepEstimator m_step_from_string(std::string_view name);

struct EmOptions {
  double learn_rate = 0.01;
  MStepEstimator estimator = MStepEstimator::Sampled;
  int n_samples = 1;
  double beta = 1.0;
  bool learn_prior = false;  // top-level prior mean and scale
};

struct EmMetrics {
  double elbo_before = 0.0;  // batch means
  double elbo_after = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double grad_norm = 0.0;  // Euclidean norm of the mean gradient that was applied
};

template <class Model>
struct EmStep {
  Model model;
  EmMetrics metrics;
};

// E-step with `engine` per datum, then one gradient-ascent M-step on the mean
// ELBO. The "after" value reuses the E-step posteriors and noise.
EmStep<LinearGaussianModel> variational_em_step(const LinearGaussianModel& model,
                                                const Engine& engine, const RowMat& batch,
                                                const EmOptions& options, Rng& rng);
EmStep<DeepLatentModel> variational_em_step(const DeepLatentModel& model, const Engine& engine,
                                            const RowMat& batch, const EmOptions& options,
                                            Rng& rng);

// Flat parameter vector in ModelGradient::flatten order.
Vec flatten_parameters(const DeepLatentModel& model);
void assign_parameters(DeepLatentModel& model, const Vec& flat);

struct TrainOptions {
  int epochs = 200;
  Index batch_size = 32;
  EmOptions em;
  // Used when the engine is amortized; the encoder takes one step per batch
  // before the M-step.
  EncoderOptions encoder;
};

// Minibatch variational EM; one metrics row per epoch (means of the
// pre-update batch values). `engine` is updated in place when amortized.
std::vector<MetricRow> train_model(LinearGaussianModel& model, Engine& engine, const RowMat& data,
                                   const TrainOptions& options, Rng& rng);
std::vector<MetricRow> train_model(DeepLatentModel& model, Engine& engine, const RowMat& data,
                                   const TrainOptions& options, Rng& rng);

// Seeded permutation of 0..n-1 (Fisher-Yates).
std::vector<Index> permutation(Index n, Rng& rng);

}  // namespace predflow
