#include "predflow/models.hpp"

#include <numeric>

#include <Eigen/Cholesky>

#include "predflow/linalg.hpp"

namespace predflow {

void LinearGaussianModel::validate() const {
  require_dim(obs_dim(), bias.size(), "linear model bias");
  require_dim(obs_dim(), obs_std.size(), "linear model obs_std");
  require_dim(latent_dim(), prior_mean.size(), "linear model prior_mean");
  require_dim(latent_dim(), prior_std.size(), "linear model prior_std");
  if ((obs_std.array() <= 0.0).any() || (prior_std.array() <= 0.0).any()) {
    throw DimensionMismatch("linear model standard deviations must be positive");
  }
}

LinearGaussianModel LinearGaussianModel::unit() {
  return {Mat::Ones(1, 1), Vec::Zero(1), Vec::Ones(1), Vec::Zero(1), Vec::Ones(1),
          Activation::Identity};
}

Index DeepLatentModel::obs_dim() const {
  return decoder_outputs_scale ? decoder.output_dim() / 2 : decoder.output_dim();
}

Index DeepLatentModel::total_latent_dim() const {
  return std::accumulate(latent_dims.begin(), latent_dims.end(), Index{0});
}

void DeepLatentModel::validate() const {
  if (latent_dims.empty()) throw DimensionMismatch("model needs at least one latent level");
  require_dim(latent_dims.back(), top_prior.dim(), "top prior");
  require_dim(num_levels() - 1, static_cast<long>(level_priors.size()), "level prior count");
  for (std::size_t l = 0; l < level_priors.size(); ++l) {
    require_dim(latent_dims[l + 1], level_priors[l].input_dim(), "level prior input");
    require_dim(2 * latent_dims[l], level_priors[l].output_dim(), "level prior output");
  }
  require_dim(latent_dims.front(), decoder.input_dim(), "decoder input");
  if (decoder_outputs_scale) {
    if (decoder.output_dim() % 2 != 0) throw DimensionMismatch("decoder output must be even");
  } else {
    require_dim(decoder.output_dim(), obs_log_std.size(), "obs_log_std");
  }
  for (const auto& f : obs_flow) require_dim(obs_dim(), f.dim(), "observation flow");
}

DeepLatentModel DeepLatentModel::from_linear(const LinearGaussianModel& m) {
  m.validate();
  DeepLatentModel d;
  d.latent_dims = {m.latent_dim()};
  d.top_prior = DiagGaussian::from_std(m.prior_mean, m.prior_std);
  d.decoder = Mlp({Layer{m.weight, m.bias, m.link}});
  d.obs_log_std = m.obs_std.array().log();
  return d;
}

std::optional<LinearGaussianModel> as_linear(const DeepLatentModel& m) {
  if (m.num_levels() != 1 || m.decoder.depth() != 1 || m.decoder_outputs_scale ||
      !m.obs_flow.empty()) {
    return std::nullopt;
  }
  const Layer& l = m.decoder.layers().front();
  return LinearGaussianModel{l.weight, l.bias, m.obs_log_std.array().exp().max(kMinStd),
                             m.top_prior.mean, m.top_prior.stddev(), l.activation};
}

DiagGaussian cond_likelihood_params(const LinearGaussianModel& model, const Vec& z) {
  require_dim(model.latent_dim(), z.size(), "latent");
  return DiagGaussian::from_std(activate(model.link, model.weight * z + model.bias),
                                model.obs_std);
}

DiagGaussian cond_likelihood_params(const DeepLatentModel& model, const LatentLevels& z) {
  require_dim(model.num_levels(), static_cast<long>(z.size()), "latent level count");
  const Vec out = mlp_forward(model.decoder, z.front());
  const Index m = model.obs_dim();
  if (model.decoder_outputs_scale) return {out.head(m), out.tail(m)};
  return {out, model.obs_log_std};
}

DiagGaussian level_prior(const DeepLatentModel& model, Index level, const LatentLevels& z) {
  if (level == model.num_levels() - 1) return model.top_prior;
  require_dim(model.num_levels(), static_cast<long>(z.size()), "latent level count");
  const Vec out = mlp_forward(model.level_priors[level], z[level + 1]);
  const Index k = model.latent_dims[level];
  return {out.head(k), out.tail(k)};
}

FlowResult normalize_observation(const DeepLatentModel& model, const Vec& x) {
  require_dim(model.obs_dim(), x.size(), "observation");
  FlowResult r{x, 0.0};
  for (auto it = model.obs_flow.rbegin(); it != model.obs_flow.rend(); ++it) {
    auto prev = affine_inverse(*it, r.value);
    r.value = std::move(prev.value);
    r.logdet += prev.logdet;
  }
  return r;
}

JointSample sample_joint(const LinearGaussianModel& model, Rng& rng) {
  model.validate();
  JointSample s;
  const DiagGaussian prior = DiagGaussian::from_std(model.prior_mean, model.prior_std);
  s.latents.push_back(reparam_sample(prior, standard_normal(rng, model.latent_dim())));
  const DiagGaussian lik = cond_likelihood_params(model, s.latents.front());
  s.observation = reparam_sample(lik, standard_normal(rng, model.obs_dim()));
  return s;
}

JointSample sample_joint(const DeepLatentModel& model, Rng& rng) {
  model.validate();
  JointSample s;
  s.latents.resize(model.num_levels());
  for (Index l = model.num_levels(); l-- > 0;) {
    const DiagGaussian p = level_prior(model, l, s.latents);
    s.latents[l] = reparam_sample(p, standard_normal(rng, p.dim()));
  }
  const DiagGaussian lik = cond_likelihood_params(model, s.latents);
  Vec x = reparam_sample(lik, standard_normal(rng, lik.dim()));
  for (const auto& f : model.obs_flow) x = affine_forward(f, x).value;
  s.observation = std::move(x);
  return s;
}

double joint_log_prob(const LinearGaussianModel& model, const JointSample& s) {
  model.validate();
  require_dim(1, static_cast<long>(s.latents.size()), "latent level count");
  const DiagGaussian prior = DiagGaussian::from_std(model.prior_mean, model.prior_std);
  return diag_log_prob(prior, s.latents.front()) +
         diag_log_prob(cond_likelihood_params(model, s.latents.front()), s.observation);
}

double joint_log_prob(const DeepLatentModel& model, const JointSample& s) {
  model.validate();
  require_dim(model.num_levels(), static_cast<long>(s.latents.size()), "latent level count");
  double total = 0.0;
  for (Index l = 0; l < model.num_levels(); ++l) {
    total += diag_log_prob(level_prior(model, l, s.latents), s.latents[l]);
  }
  const FlowResult xt = normalize_observation(model, s.observation);
  return total + diag_log_prob(cond_likelihood_params(model, s.latents), xt.value) + xt.logdet;
}

FullGaussian exact_posterior(const LinearGaussianModel& model, const Vec& x) {
  model.validate();
  if (!model.is_linear()) throw ModelNotLinear("exact posterior needs the identity link");
  require_dim(model.obs_dim(), x.size(), "observation");
  const Vec obs_prec = model.obs_std.array().square().inverse();
  const Vec prior_prec = model.prior_std.array().square().inverse();
  const Mat& w = model.weight;
  Mat precision = w.transpose() * obs_prec.asDiagonal() * w;
  precision.diagonal() += prior_prec;
  Eigen::LLT<Mat> llt(precision);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("posterior precision");
  const Vec rhs = w.transpose() * obs_prec.cwiseProduct(x - model.bias) +
                  prior_prec.cwiseProduct(model.prior_mean);
  Mat cov = llt.solve(Mat::Identity(precision.rows(), precision.cols()));
  cov = (cov + cov.transpose()) / 2.0;
  return {llt.solve(rhs), std::move(cov)};
}

FullGaussian exact_marginal(const LinearGaussianModel& model) {
  model.validate();
  if (!model.is_linear()) throw ModelNotLinear("exact marginal needs the identity link");
  const Mat& w = model.weight;
  Mat cov = w * model.prior_std.array().square().matrix().asDiagonal() * w.transpose();
  cov.diagonal() += model.obs_std.array().square().matrix();
  return {w * model.prior_mean + model.bias, (cov + cov.transpose()) / 2.0};
}

double exact_log_marginal(const LinearGaussianModel& model, const Vec& x) {
  require_dim(model.obs_dim(), x.size(), "observation");
  return full_log_prob(exact_marginal(model), x);
}

LinearGaussianModel random_linear_model(Index latent_dim, Index obs_dim, Rng& rng) {
  LinearGaussianModel m;
  m.weight = standard_normal(rng, obs_dim, latent_dim);
  m.bias = 0.5 * standard_normal(rng, obs_dim);
  m.obs_std = Vec(obs_dim);
  for (Index i = 0; i < obs_dim; ++i) m.obs_std[i] = rng.uniform(0.3, 1.0);
  m.prior_mean = Vec::Zero(latent_dim);
  m.prior_std = Vec::Ones(latent_dim);
  return m;
}

void put_model(Checkpoint& ckpt, const LinearGaussianModel& m) {
  m.validate();
  ckpt.header["model"] = {{"kind", "linear"},
                          {"latent_dim", m.latent_dim()},
                          {"obs_dim", m.obs_dim()},
                          {"link", std::string(to_string(m.link))}};
  ckpt.tensors["model.weight"] = Tensor::from_matrix(m.weight);
  ckpt.tensors["model.bias"] = Tensor::from_vector(m.bias);
  ckpt.tensors["model.obs_std"] = Tensor::from_vector(m.obs_std);
  ckpt.tensors["model.prior_mean"] = Tensor::from_vector(m.prior_mean);
  ckpt.tensors["model.prior_std"] = Tensor::from_vector(m.prior_std);
}

void put_model(Checkpoint& ckpt, const DeepLatentModel& m) {
  m.validate();
  ckpt.header["model"] = {{"kind", "deep"},
                          {"latent_dims", m.latent_dims},
                          {"decoder_outputs_scale", m.decoder_outputs_scale},
                          {"obs_flow_steps", m.obs_flow.size()}};
  ckpt.tensors["model.top_mean"] = Tensor::from_vector(m.top_prior.mean);
  ckpt.tensors["model.top_log_std"] = Tensor::from_vector(m.top_prior.log_std);
  for (std::size_t l = 0; l < m.level_priors.size(); ++l) {
    put_mlp(ckpt, "prior" + std::to_string(l), m.level_priors[l]);
  }
  put_mlp(ckpt, "decoder", m.decoder);
  if (!m.decoder_outputs_scale) ckpt.tensors["model.obs_log_std"] = Tensor::from_vector(m.obs_log_std);
  for (std::size_t i = 0; i < m.obs_flow.size(); ++i) {
    put_affine_flow(ckpt, "obs_flow" + std::to_string(i), m.obs_flow[i]);
  }
}

namespace {

const nlohmann::json& model_header(const Checkpoint& ckpt, const char* kind) {
  if (!ckpt.header.contains("model") || ckpt.header["model"].value("kind", "") != kind) {
    throw BadFormat(std::string("checkpoint does not hold a ") + kind + " model");
  }
  return ckpt.header["model"];
}

}  // namespace

LinearGaussianModel get_linear_model(const Checkpoint& ckpt) {
  const auto& h = model_header(ckpt, "linear");
  LinearGaussianModel m{Mat(ckpt.tensor("model.weight").matrix()),
                        ckpt.tensor("model.bias").vector(),
                        ckpt.tensor("model.obs_std").vector(),
                        ckpt.tensor("model.prior_mean").vector(),
                        ckpt.tensor("model.prior_std").vector(),
                        activation_from_string(h.value("link", "identity"))};
  m.validate();
  return m;
}

DeepLatentModel get_deep_model(const Checkpoint& ckpt) {
  const auto& h = model_header(ckpt, "deep");
  DeepLatentModel m;
  try {
    m.latent_dims = h.at("latent_dims").get<std::vector<Index>>();
    m.decoder_outputs_scale = h.at("decoder_outputs_scale").get<bool>();
    m.top_prior = {ckpt.tensor("model.top_mean").vector(),
                   ckpt.tensor("model.top_log_std").vector()};
    for (std::size_t l = 0; l + 1 < m.latent_dims.size(); ++l) {
      m.level_priors.push_back(get_mlp(ckpt, "prior" + std::to_string(l)));
    }
    m.decoder = get_mlp(ckpt, "decoder");
    if (!m.decoder_outputs_scale) m.obs_log_std = ckpt.tensor("model.obs_log_std").vector();
    const auto steps = h.at("obs_flow_steps").get<std::size_t>();
    for (std::size_t i = 0; i < steps; ++i) {
      m.obs_flow.push_back(get_affine_flow(ckpt, "obs_flow" + std::to_string(i)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw BadFormat(std::string("deep model header: ") + e.what());
  }
  m.validate();
  return m;
}

}  // namespace predflow
