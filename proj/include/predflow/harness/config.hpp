#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "predflow/harness/datasets.hpp"
#include "predflow/learning.hpp"

namespace predflow {

struct ModelSpec {
  std::string kind = "linear";  // "linear" or "deep"
  Index latent_dim = 1;         // linear
  std::vector<Index> latent_dims{2};  // deep, bottom level first
  Index obs_dim = 4;
  Index hidden = 16;
  Activation activation = Activation::Tanh;
  double obs_std = 1.0;  // initial observation noise of a freshly built model
  double gain = 1.0;     // deep decoder weight scale
  double init_scale = 0.1;  // linear: std of the initial weights

  DeepFixtureSpec deep_spec() const;
};

struct DataSpec {
  std::string source = "linear";  // linear, deep, patches, video, ar1, tensor
  Index n = 512;
  Index n_test = 512;
  // Linear source: explicit ground truth; when absent a random model of the
  // configured dims is drawn.
  std::optional<LinearGaussianModel> truth;
  std::vector<std::filesystem::path> images;
  Index patch_size = 8;
  std::optional<bool> remove_patch_mean;  // default: true, false for whiten
  Index frames = 64;
  Index height = 16;
  Index width = 16;
  VideoOptions video;
  Index length = 4096;
  Index dim = 1;
  double rho = 0.9;
  std::filesystem::path path;  // tensor source
};

struct InferenceSpec {
  std::string engine = "pc";  // pc, direct, iterative
  AscentOptions ascent;
  std::optional<bool> analytic;  // default: true for linear models
  int n_samples = 1;
  bool fix_scale = false;
  IterativeMode mode = IterativeMode::ErrorInput;
  int n_iters = 5;
  Index hidden = 16;
  int encoder_epochs = 100;
  Index encoder_batch = 32;
  double encoder_lr = 1e-2;
  int eval_samples = 64;  // Monte Carlo draws when an ELBO is reported
};

struct TrainingSpec {
  int epochs = 200;
  Index batch_size = 32;
  double learn_rate = 0.01;
  MStepEstimator m_step = MStepEstimator::Sampled;
  int n_samples = 1;
  bool learn_prior = false;
};

struct WhitenSpec {
  std::string method = "zca";  // zca or cholesky
  bool filter_grid = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  double beta = 1.0;
  ModelSpec model;
  DataSpec data;
  InferenceSpec inference;
  TrainingSpec training;
  WhitenSpec whitening;
  std::filesystem::path checkpoint;
  std::filesystem::path output_dir;
  // Effective configuration (after the seed override), copied into runs.
  nlohmann::json effective;
};

// Every key is checked; unknown keys, wrong types and inconsistent dims throw
// ConfigInvalid. Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& j, std::optional<std::uint64_t> seed_override,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override);

}  // namespace predflow
