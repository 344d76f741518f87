#include "predflow/harness/datasets.hpp"

#include <array>
#include <cmath>
#include <numeric>

#include "predflow/harness/pgm.hpp"

namespace predflow {

namespace {

template <class Model>
Dataset ancestral(const Model& model, Index n, std::uint64_t seed, std::string provenance) {
  if (n < 1) throw DimensionMismatch("dataset size must be positive");
  Rng rng(seed);
  RowMat x(n, model.obs_dim());
  for (Index i = 0; i < n; ++i) x.row(i) = sample_joint(model, rng).observation.transpose();
  return {std::move(x), std::move(provenance)};
}

}  // namespace

LinearDataset gen_linear_dataset(Index latent_dim, Index obs_dim, Index n, std::uint64_t seed) {
  Rng rng(seed);
  Rng model_rng = rng.split(0);
  LinearGaussianModel truth = random_linear_model(latent_dim, obs_dim, model_rng);
  Dataset d = ancestral(truth, n, rng.split(1).next_u64(),
                        "linear K=" + std::to_string(latent_dim) + " M=" +
                            std::to_string(obs_dim) + " seed=" + std::to_string(seed));
  return {std::move(d), std::move(truth)};
}

Dataset sample_dataset(const LinearGaussianModel& model, Index n, std::uint64_t seed) {
  return ancestral(model, n, seed, "linear model samples seed=" + std::to_string(seed));
}

Dataset sample_dataset(const DeepLatentModel& model, Index n, std::uint64_t seed) {
  return ancestral(model, n, seed, "deep model samples seed=" + std::to_string(seed));
}

Dataset gen_moving_square_video(Index frames, Index height, Index width, std::uint64_t seed,
                                const VideoOptions& options) {
  if (frames < 1) throw DimensionMismatch("video needs at least one frame");
  if (options.square < 1 || options.square > height || options.square > width) {
    throw DimensionMismatch("square does not fit the frame");
  }
  Rng rng(seed);
  const Index r0 = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(height));
  const Index c0 = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(width));
  static constexpr std::array<std::array<int, 2>, 4> kDirections{{{0, 1}, {1, 0}, {0, -1}, {-1, 0}}};
  const auto dir = kDirections[rng.next_u64() % 4];
  auto wrap = [](Index v, Index n) { return ((v % n) + n) % n; };

  RowMat video = RowMat::Zero(frames, height * width);
  for (Index t = 0; t < frames; ++t) {
    const Index top = wrap(r0 + dir[0] * options.velocity * t, height);
    const Index left = wrap(c0 + dir[1] * options.velocity * t, width);
    for (Index r = 0; r < options.square; ++r) {
      for (Index c = 0; c < options.square; ++c) {
        video(t, wrap(top + r, height) * width + wrap(left + c, width)) = 1.0;
      }
    }
  }
  return {std::move(video), "moving square " + std::to_string(height) + "x" +
                                std::to_string(width) + " seed=" + std::to_string(seed)};
}

Dataset gen_ar1(Index length, Index dim, double rho, std::uint64_t seed) {
  if (length < 1 || dim < 1) throw DimensionMismatch("AR(1) needs positive length and dim");
  if (!(std::abs(rho) < 1.0)) throw DimensionMismatch("AR(1) needs |rho| < 1");
  Rng rng(seed);
  RowMat x(length, dim);
  const double innovation = std::sqrt(1.0 - rho * rho);
  x.row(0) = standard_normal(rng, dim).transpose();
  for (Index t = 1; t < length; ++t) {
    x.row(t) = rho * x.row(t - 1) + innovation * standard_normal(rng, dim).transpose();
  }
  return {std::move(x), "ar1 rho=" + std::to_string(rho) + " seed=" + std::to_string(seed)};
}

Dataset load_patches(const std::vector<std::filesystem::path>& images, Index patch, Index count,
                     std::uint64_t seed, bool remove_patch_mean) {
  if (images.empty()) throw IoError("no images given");
  if (patch < 1 || count < 1) throw DimensionMismatch("patch size and count must be positive");
  std::vector<GrayImage> loaded;
  for (const auto& p : images) {
    GrayImage img = read_pgm(p);
    if (img.height() < patch || img.width() < patch) {
      throw DimensionMismatch(p.string() + " is smaller than the patch size");
    }
    img.values /= static_cast<double>(img.maxval);
    loaded.push_back(std::move(img));
  }
  Rng rng(seed);
  auto pick = [&](Index n) {
    return static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(n));
  };
  RowMat out(count, patch * patch);
  for (Index i = 0; i < count; ++i) {
    const GrayImage& img = loaded[pick(static_cast<Index>(loaded.size()))];
    const Index r = pick(img.height() - patch + 1);
    const Index c = pick(img.width() - patch + 1);
    const RowMat block = img.values.block(r, c, patch, patch);
    out.row(i) = block.reshaped<Eigen::RowMajor>().transpose();
    if (remove_patch_mean) out.row(i).array() -= out.row(i).mean();
  }
  return {std::move(out), std::to_string(patch) + "x" + std::to_string(patch) + " patches from " +
                              std::to_string(images.size()) + " image(s) seed=" +
                              std::to_string(seed)};
}

DeepLatentModel random_deep_model(const DeepFixtureSpec& spec, Rng& rng) {
  if (spec.latent_dims.empty()) throw DimensionMismatch("deep model needs a latent level");
  DeepLatentModel m;
  m.latent_dims = spec.latent_dims;
  m.top_prior = DiagGaussian::standard(spec.latent_dims.back());
  for (std::size_t l = 0; l + 1 < spec.latent_dims.size(); ++l) {
    const std::array<Index, 3> sizes{spec.latent_dims[l + 1], spec.hidden,
                                     2 * spec.latent_dims[l]};
    const std::array<Activation, 2> acts{spec.activation, Activation::Identity};
    m.level_priors.push_back(Mlp::random(sizes, acts, rng));
  }
  const std::array<Index, 3> sizes{spec.latent_dims.front(), spec.hidden, spec.obs_dim};
  const std::array<Activation, 2> acts{spec.activation, Activation::Identity};
  m.decoder = Mlp::random(sizes, acts, rng);
  for (auto& layer : m.decoder.mutable_layers()) layer.weight *= spec.gain;
  m.obs_log_std = Vec::Constant(spec.obs_dim, std::log(spec.obs_std));
  m.validate();
  return m;
}

}  // namespace predflow
