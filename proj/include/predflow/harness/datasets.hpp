#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "predflow/models.hpp"

namespace predflow {

// N x M samples (or T x M frames), plus a short description of where they
// came from.
struct Dataset {
  RowMat samples;
  std::string provenance;
};

struct LinearDataset {
  Dataset data;
  LinearGaussianModel truth;
};

// Draws a random linear model (random_linear_model) and N ancestral samples.
LinearDataset gen_linear_dataset(Index latent_dim, Index obs_dim, Index n, std::uint64_t seed);
// N ancestral samples from a given model, observations only.
Dataset sample_dataset(const LinearGaussianModel& model, Index n, std::uint64_t seed);
Dataset sample_dataset(const DeepLatentModel& model, Index n, std::uint64_t seed);

struct VideoOptions {
  Index square = 4;
  int velocity = 1;  // pixels per frame; 0 gives a static video
};

// Binary frames, one per row, flattened row-major. The start corner and one
// of the four axis directions come from the seed; motion wraps around.
Dataset gen_moving_square_video(Index frames, Index height, Index width, std::uint64_t seed,
                                const VideoOptions& options = {});

// Stationary AR(1) with unit marginal variance in each of `dim` channels.
Dataset gen_ar1(Index length, Index dim, double rho, std::uint64_t seed);

// Random square patches, scaled to [0, 1] by each image's maxval. Throws
// IoError / BadFormat from the reader and DimensionMismatch when an image is
// smaller than the patch.
Dataset load_patches(const std::vector<std::filesystem::path>& images, Index patch, Index count,
                     std::uint64_t seed, bool remove_patch_mean = true);

struct DeepFixtureSpec {
  std::vector<Index> latent_dims{2};
  Index obs_dim = 8;
  Index hidden = 16;
  Activation activation = Activation::Tanh;
  double obs_std = 0.3;
  double gain = 1.0;  // multiplies the decoder's random weights
};

// Standard-normal top prior; each lower level gets a one-hidden-layer prior
// net, and the decoder is K -> hidden -> M with a linear output.
DeepLatentModel random_deep_model(const DeepFixtureSpec& spec, Rng& rng);

}  // namespace predflow
