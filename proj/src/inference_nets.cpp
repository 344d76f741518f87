#include "predflow/inference_nets.hpp"

#include <array>
#include <numeric>
#include <string>

namespace predflow {

namespace {

Index sum_dims(const std::vector<Index>& dims) {
  return std::accumulate(dims.begin(), dims.end(), Index{0});
}

}  // namespace

DirectInferenceNet DirectInferenceNet::make(Index obs_dim, std::vector<Index> latent_dims,
                                            Index hidden, Rng& rng) {
  const Index out = 2 * sum_dims(latent_dims);
  const std::array<Index, 4> sizes{obs_dim, hidden, hidden, out};
  const std::array<Activation, 3> acts{Activation::Tanh, Activation::Tanh, Activation::Identity};
  return {Mlp::random(sizes, acts, rng), std::move(latent_dims)};
}

PosteriorEstimate direct_infer(const DirectInferenceNet& net, const Vec& x) {
  require_dim(2 * sum_dims(net.latent_dims), net.net.output_dim(), "encoder output");
  return PosteriorEstimate::unpack(mlp_forward(net.net, x), net.latent_dims);
}

std::string_view to_string(IterativeMode mode) {
  return mode == IterativeMode::GradientInput ? "gradient" : "error";
}

IterativeMode iterative_mode_from_string(std::string_view name) {
  if (name == "gradient") return IterativeMode::GradientInput;
  if (name == "error") return IterativeMode::ErrorInput;
  throw BadFormat("unknown iterative mode '" + std::string(name) + "'");
}

Index IterativeInferenceNet::lambda_dim() const { return 2 * sum_dims(latent_dims); }

Index IterativeInferenceNet::input_dim() const {
  return mode == IterativeMode::GradientInput ? 2 * lambda_dim()
                                              : lambda_dim() + obs_dim + sum_dims(latent_dims);
}

IterativeInferenceNet IterativeInferenceNet::make(Index obs_dim, std::vector<Index> latent_dims,
                                                  IterativeMode mode, Index hidden, Rng& rng) {
  IterativeInferenceNet it{{}, mode, std::move(latent_dims), obs_dim};
  const std::array<Index, 4> sizes{it.input_dim(), hidden, hidden, it.lambda_dim()};
  const std::array<Activation, 3> acts{Activation::Tanh, Activation::Tanh, Activation::Identity};
  it.net = Mlp::random(sizes, acts, rng);
  auto& last = it.net.mutable_layers().back();
  last.weight.setZero();
  last.bias.setZero();
  return it;
}

IterativeInferenceNet IterativeInferenceNet::plain(Index obs_dim, std::vector<Index> latent_dims,
                                                   double step) {
  IterativeInferenceNet it{{}, IterativeMode::GradientInput, std::move(latent_dims), obs_dim};
  const Index p = it.lambda_dim();
  Mat w = Mat::Zero(p, 2 * p);
  w.rightCols(p).diagonal().setConstant(step);
  it.net = Mlp({Layer{std::move(w), Vec::Zero(p), Activation::Identity}});
  return it;
}

Vec iterative_net_input(const IterativeInferenceNet& net, const DeepLatentModel& model,
                        const Vec& x, const PosteriorEstimate& q, const ElboEstimator& estimator,
                        Rng& rng, ElboGradient& at_q) {
  const Vec lambda = q.pack();
  require_dim(net.lambda_dim(), lambda.size(), "iterative net posterior");
  at_q = estimate_elbo(model, q, x, estimator, rng);
  Vec input(net.input_dim());
  if (net.mode == IterativeMode::GradientInput) {
    input << lambda, at_q.lambda;
    return input;
  }
  const WeightedErrors e = weighted_errors(model, x, q.means());
  input.head(lambda.size()) = lambda;
  Index k = lambda.size();
  input.segment(k, e.obs.size()) = e.obs;
  k += e.obs.size();
  for (const auto& xi : e.latent) {
    input.segment(k, xi.size()) = xi;
    k += xi.size();
  }
  return input;
}

IterativeResult iterative_infer(const IterativeInferenceNet& net, const DeepLatentModel& model,
                                const Vec& x, const PosteriorEstimate& init, int n_iters,
                                const ElboEstimator& estimator, Rng& rng) {
  if (n_iters < 1) throw DimensionMismatch("iterative inference needs at least one iteration");
  IterativeResult r{init, {}};
  Vec lambda = init.pack();
  for (int it = 0; it < n_iters; ++it) {
    ElboGradient at_q;
    const Vec input = iterative_net_input(net, model, x, r.q, estimator, rng, at_q);
    r.trace.entries.push_back({it, at_q.terms.value, at_q.lambda.cwiseAbs().maxCoeff(), lambda});
    lambda = lambda + mlp_forward(net.net, input);
    if (!lambda.allFinite()) throw Diverged("iterative update produced a non-finite posterior");
    r.q = PosteriorEstimate::unpack(lambda, net.latent_dims);
  }
  r.trace.converged = true;
  return r;
}

void put_inference_net(Checkpoint& ckpt, const DirectInferenceNet& net) {
  ckpt.header["encoder"] = {{"kind", "direct"}, {"latent_dims", net.latent_dims}};
  put_mlp(ckpt, "encoder.net", net.net);
}

void put_inference_net(Checkpoint& ckpt, const IterativeInferenceNet& net) {
  ckpt.header["encoder"] = {{"kind", "iterative"},
                            {"mode", std::string(to_string(net.mode))},
                            {"latent_dims", net.latent_dims},
                            {"obs_dim", net.obs_dim}};
  put_mlp(ckpt, "encoder.net", net.net);
}

DirectInferenceNet get_direct_net(const Checkpoint& ckpt) {
  if (!ckpt.header.contains("encoder") || ckpt.header["encoder"].value("kind", "") != "direct") {
    throw BadFormat("checkpoint does not hold a direct encoder");
  }
  return {get_mlp(ckpt, "encoder.net"),
          ckpt.header["encoder"]["latent_dims"].get<std::vector<Index>>()};
}

IterativeInferenceNet get_iterative_net(const Checkpoint& ckpt) {
  if (!ckpt.header.contains("encoder") ||
      ckpt.header["encoder"].value("kind", "") != "iterative") {
    throw BadFormat("checkpoint does not hold an iterative encoder");
  }
  const auto& h = ckpt.header["encoder"];
  return {get_mlp(ckpt, "encoder.net"),
          iterative_mode_from_string(h.at("mode").get<std::string>()),
          h.at("latent_dims").get<std::vector<Index>>(), h.at("obs_dim").get<Index>()};
}

}  // namespace predflow
