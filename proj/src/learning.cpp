#include "predflow/learning.hpp"

#include <cmath>
#include <string>

#include "predflow/parallel.hpp"

namespace predflow {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

// Independent stream per datum, drawn from one key so batches stay
// reproducible whatever the worker count.
struct DatumStreams {
  std::uint64_t key;
  Rng at(std::size_t i) const { return Rng(key).split(i); }
};

DatumStreams streams(Rng& rng) { return {rng.next_u64()}; }

void require_batch(const RowMat& batch, Index obs_dim) {
  if (batch.rows() == 0) throw DimensionMismatch("empty batch");
  require_dim(obs_dim, batch.cols(), "batch columns");
}

Vec row(const RowMat& m, Index i) { return m.row(i).transpose(); }

// Multiplicative step on a positive scale, skipping coordinates whose step is
// exactly zero so a zero learning rate leaves them untouched.
void log_step(Vec& scale, const Vec& grad, double lr) {
  for (Index i = 0; i < scale.size(); ++i) {
    const double d = lr * grad[i];
    if (d != 0.0) scale[i] *= std::exp(d);
  }
}

void add_terms(MetricRow& acc, const ElboTerms& t) {
  acc.elbo += t.value;
  acc.recon += t.recon;
  acc.kl += t.kl;
}

void scale_row(MetricRow& r, double k) {
  r.elbo *= k;
  r.recon *= k;
  r.kl *= k;
}

struct DatumGrad {
  Vec grad;
  ElboTerms terms;
};

// Sums per-datum gradients in index order.
MetricRow reduce(const std::vector<DatumGrad>& parts, Vec& mean_grad) {
  MetricRow r;
  mean_grad = Vec::Zero(parts.front().grad.size());
  for (const auto& p : parts) {
    mean_grad += p.grad;
    add_terms(r, p.terms);
  }
  const double k = 1.0 / static_cast<double>(parts.size());
  mean_grad *= k;
  scale_row(r, k);
  r.grad_norm = mean_grad.norm();
  return r;
}

}  // namespace

// ---- engines ------------------------------------------------------------------

std::string_view engine_name(const Engine& engine) {
  return std::visit(Overloaded{[](const PcEngine&) { return std::string_view("pc"); },
                               [](const DirectEngine&) { return std::string_view("direct"); },
                               [](const IterativeEngine&) {
                                 return std::string_view("iterative");
                               }},
                    engine);
}

PosteriorEstimate run_engine(const Engine& engine, const DeepLatentModel& model, const Vec& x,
                             Rng& rng) {
  return std::visit(
      Overloaded{
          [&](const PcEngine& e) {
            return gradient_inference(model, x, PosteriorEstimate::from_prior(model), e.options,
                                      rng)
                .q;
          },
          [&](const DirectEngine& e) { return direct_infer(e.net, x); },
          [&](const IterativeEngine& e) {
            return iterative_infer(e.net, model, x, PosteriorEstimate::from_prior(model),
                                   e.n_iters, e.estimator, rng)
                .q;
          }},
      engine);
}

// ---- encoder training -----------------------------------------------------------

MetricRow encoder_step(DirectInferenceNet& net, Adam& adam, const DeepLatentModel& model,
                       const RowMat& batch, const EncoderOptions& options, Rng& rng) {
  require_batch(batch, model.obs_dim());
  const DatumStreams s = streams(rng);
  const auto parts = parallel_map<DatumGrad>(batch.rows(), [&](std::size_t i) {
    Rng r = s.at(i);
    const Vec x = row(batch, static_cast<Index>(i));
    ForwardCache cache;
    const Vec lambda = mlp_forward(net.net, x, cache);
    const auto q = PosteriorEstimate::unpack(lambda, net.latent_dims);
    const ElboGradient g = estimate_elbo(model, q, x, options.estimator, r);
    return DatumGrad{mlp_backward(net.net, cache, g.lambda).flatten(), g.terms};
  });
  Vec grad;
  MetricRow m = reduce(parts, grad);
  Vec params = net.net.flatten();
  adam.ascend(params, grad);
  net.net.assign(params);
  return m;
}

MetricRow encoder_step(IterativeInferenceNet& net, Adam& adam, const DeepLatentModel& model,
                       const RowMat& batch, const EncoderOptions& options, Rng& rng) {
  require_batch(batch, model.obs_dim());
  if (options.n_iters < 1) throw DimensionMismatch("iterative training needs n_iters >= 1");
  const DatumStreams s = streams(rng);
  const auto parts = parallel_map<DatumGrad>(batch.rows(), [&](std::size_t i) {
    Rng r = s.at(i);
    const Vec x = row(batch, static_cast<Index>(i));
    auto q = PosteriorEstimate::from_prior(model);
    Vec lambda = q.pack();
    GradientBundle acc = GradientBundle::zeros_like(net.net);
    ElboTerms last;
    for (int t = 0; t < options.n_iters; ++t) {
      ElboGradient at_q;
      const Vec input = iterative_net_input(net, model, x, q, options.estimator, r, at_q);
      ForwardCache cache;
      lambda = lambda + mlp_forward(net.net, input, cache);
      if (!lambda.allFinite()) throw Diverged("iterative encoder produced a non-finite posterior");
      q = PosteriorEstimate::unpack(lambda, net.latent_dims);
      const ElboGradient out = estimate_elbo(model, q, x, options.estimator, r);
      acc += mlp_backward(net.net, cache, out.lambda);
      last = out.terms;
    }
    acc *= 1.0 / options.n_iters;
    return DatumGrad{acc.flatten(), last};
  });
  Vec grad;
  MetricRow m = reduce(parts, grad);
  Vec params = net.net.flatten();
  adam.ascend(params, grad);
  net.net.assign(params);
  return m;
}

namespace {

RowMat gather(const RowMat& data, const std::vector<Index>& order, Index begin, Index end) {
  RowMat b(end - begin, data.cols());
  for (Index i = begin; i < end; ++i) b.row(i - begin) = data.row(order[i]);
  return b;
}

template <class Step>
std::vector<MetricRow> epochs(const RowMat& data, int n_epochs, Index batch_size, Rng& rng,
                              Step&& step) {
  if (data.rows() == 0) throw DimensionMismatch("empty dataset");
  if (batch_size < 1) throw DimensionMismatch("batch size must be positive");
  std::vector<MetricRow> rows;
  for (int e = 0; e < n_epochs; ++e) {
    const auto order = permutation(data.rows(), rng);
    MetricRow acc;
    double grad_norm = 0.0;
    long batches = 0;
    for (Index b = 0; b < data.rows(); b += batch_size) {
      const Index end = std::min<Index>(b + batch_size, data.rows());
      const RowMat batch = gather(data, order, b, end);
      const MetricRow m = step(batch);
      const double w = static_cast<double>(end - b);
      acc.elbo += w * m.elbo;
      acc.recon += w * m.recon;
      acc.kl += w * m.kl;
      grad_norm += m.grad_norm;
      ++batches;
    }
    scale_row(acc, 1.0 / static_cast<double>(data.rows()));
    acc.grad_norm = grad_norm / static_cast<double>(batches);
    acc.step = e + 1;
    rows.push_back(acc);
  }
  return rows;
}

}  // namespace

std::vector<Index> permutation(Index n, Rng& rng) {
  std::vector<Index> p(n);
  for (Index i = 0; i < n; ++i) p[i] = i;
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(p[i], p[j]);
  }
  return p;
}

std::vector<MetricRow> train_direct(DirectInferenceNet& net, const DeepLatentModel& model,
                                    const RowMat& data, const EncoderOptions& options, Rng& rng) {
  Adam adam(net.net.parameter_count(), options.adam);
  return epochs(data, options.epochs, options.batch_size, rng, [&](const RowMat& batch) {
    return encoder_step(net, adam, model, batch, options, rng);
  });
}

std::vector<MetricRow> train_iterative(IterativeInferenceNet& net, const DeepLatentModel& model,
                                       const RowMat& data, const EncoderOptions& options,
                                       Rng& rng) {
  Adam adam(net.net.parameter_count(), options.adam);
  return epochs(data, options.epochs, options.batch_size, rng, [&](const RowMat& batch) {
    return encoder_step(net, adam, model, batch, options, rng);
  });
}

// ---- variational EM -------------------------------------------------------------

std::string_view to_string(MStepEstimator e) {
  switch (e) {
    case MStepEstimator::Analytic: return "analytic";
    case MStepEstimator::Sampled: return "sampled";
    case MStepEstimator::LocalRule: return "local";
  }
  return "sampled";
}

MStepEstimator m_step_from_string(std::string_view name) {
  if (name == "analytic") return MStepEstimator::Analytic;
  if (name == "sampled") return MStepEstimator::Sampled;
  if (name == "local") return MStepEstimator::LocalRule;
  throw BadFormat("unknown M-step estimator '" + std::string(name) + "'");
}

namespace {

struct LinearDatum {
  PosteriorEstimate q;
  std::vector<LatentLevels> noise;
  LinearModelGradient grad;
  ElboTerms terms;
};

ElboTerms linear_terms(const LinearGaussianModel& model, const LinearDatum& d, const Vec& x,
                       const EmOptions& o) {
  if (o.estimator == MStepEstimator::Analytic) return elbo_analytic(model, d.q.levels[0], x, o.beta);
  return elbo_gradient(DeepLatentModel::from_linear(model), d.q, x, d.noise, o.beta, false).terms;
}

LinearModelGradient linear_grad(const LinearGaussianModel& model, const LinearDatum& d,
                                const Vec& x, const EmOptions& o, ElboTerms& terms) {
  const DiagGaussian& q = d.q.levels[0];
  if (o.estimator == MStepEstimator::Analytic) {
    LinearElboGradient g = elbo_analytic_gradient(model, q, x, o.beta);
    terms = g.terms;
    return std::move(g.model);
  }
  const DeepLatentModel deep = DeepLatentModel::from_linear(model);
  ElboGradient g = elbo_gradient(deep, d.q, x, d.noise, o.beta, true);
  terms = g.terms;
  ModelGradient& mg = *g.model;
  LinearModelGradient out{mg.decoder.weight[0], mg.decoder.bias[0], mg.obs_log_std, mg.top_mean,
                          mg.top_log_std};
  if (o.estimator == MStepEstimator::LocalRule) {
    // Replace the decoder gradients with products of local errors and
    // activities on the very same samples.
    out.weight.setZero();
    out.bias.setZero();
    out.log_obs_std.setZero();
    const Vec sigma = q.stddev();
    for (const auto& eps : d.noise) {
      const Vec z = q.mean + sigma.cwiseProduct(eps[0]);
      const WeightedErrors e = weighted_errors(model, x, z);
      out.weight += local_weight_gradient(model, x, z);
      out.bias += e.obs.cwiseQuotient(model.obs_std);
      out.log_obs_std += (e.obs.array().square() - 1.0).matrix();
    }
    const double k = 1.0 / static_cast<double>(d.noise.size());
    out.weight *= k;
    out.bias *= k;
    out.log_obs_std *= k;
  }
  return out;
}

void check_finite(const Vec& flat) {
  if (!flat.allFinite()) throw Diverged("M-step produced non-finite parameters");
}

}  // namespace

EmStep<LinearGaussianModel> variational_em_step(const LinearGaussianModel& model,
                                                const Engine& engine, const RowMat& batch,
                                                const EmOptions& options, Rng& rng) {
  model.validate();
  require_batch(batch, model.obs_dim());
  if (options.estimator != MStepEstimator::Analytic && options.n_samples < 1) {
    throw DimensionMismatch("M-step needs at least one sample");
  }
  if (options.estimator == MStepEstimator::LocalRule && model.link != Activation::Identity) {
    throw ModelNotLinear("local learning rule needs an identity link");
  }
  const DeepLatentModel deep = DeepLatentModel::from_linear(model);
  const DatumStreams s = streams(rng);
  auto data = parallel_map<LinearDatum>(batch.rows(), [&](std::size_t i) {
    Rng r = s.at(i);
    const Vec x = row(batch, static_cast<Index>(i));
    LinearDatum d{run_engine(engine, deep, x, r), {}, {}, {}};
    if (options.estimator != MStepEstimator::Analytic) {
      d.noise = draw_noise(deep.latent_dims, options.n_samples, r);
    }
    d.grad = linear_grad(model, d, x, options, d.terms);
    return d;
  });

  LinearModelGradient g = LinearModelGradient::zeros_like(model);
  EmMetrics m;
  for (const auto& d : data) {
    g += d.grad;
    m.elbo_before += d.terms.value;
    m.recon += d.terms.recon;
    m.kl += d.terms.kl;
  }
  const double k = 1.0 / static_cast<double>(batch.rows());
  g *= k;
  m.elbo_before *= k;
  m.recon *= k;
  m.kl *= k;
  if (!options.learn_prior) {
    g.prior_mean.setZero();
    g.log_prior_std.setZero();
  }
  m.grad_norm = g.flatten().norm();

  EmStep<LinearGaussianModel> out{model, m};
  LinearGaussianModel& u = out.model;
  const double lr = options.learn_rate;
  u.weight += lr * g.weight;
  u.bias += lr * g.bias;
  log_step(u.obs_std, g.log_obs_std, lr);
  if (options.learn_prior) {
    u.prior_mean += lr * g.prior_mean;
    log_step(u.prior_std, g.log_prior_std, lr);
  }
  check_finite(u.weight.reshaped());
  check_finite(u.bias);
  check_finite(u.obs_std);
  check_finite(u.prior_mean);
  check_finite(u.prior_std);

  double after = 0.0;
  for (Index i = 0; i < batch.rows(); ++i) {
    after += linear_terms(u, data[i], row(batch, i), options).value;
  }
  out.metrics.elbo_after = after * k;
  return out;
}

Vec flatten_parameters(const DeepLatentModel& model) {
  Index n = model.decoder.parameter_count() + model.obs_log_std.size() +
            2 * model.top_prior.dim();
  for (const auto& p : model.level_priors) n += p.parameter_count();
  Vec flat(n);
  Index k = 0;
  auto put = [&](const Vec& v) {
    flat.segment(k, v.size()) = v;
    k += v.size();
  };
  put(model.decoder.flatten());
  put(model.obs_log_std);
  for (const auto& p : model.level_priors) put(p.flatten());
  put(model.top_prior.mean);
  put(model.top_prior.log_std);
  return flat;
}

void assign_parameters(DeepLatentModel& model, const Vec& flat) {
  require_dim(flatten_parameters(model).size(), flat.size(), "model parameters");
  Index k = 0;
  auto take = [&](Index n) {
    Vec v = flat.segment(k, n);
    k += n;
    return v;
  };
  model.decoder.assign(take(model.decoder.parameter_count()));
  model.obs_log_std = take(model.obs_log_std.size());
  for (auto& p : model.level_priors) p.assign(take(p.parameter_count()));
  model.top_prior.mean = take(model.top_prior.dim());
  model.top_prior.log_std = take(model.top_prior.dim());
}

EmStep<DeepLatentModel> variational_em_step(const DeepLatentModel& model, const Engine& engine,
                                            const RowMat& batch, const EmOptions& options,
                                            Rng& rng) {
  model.validate();
  require_batch(batch, model.obs_dim());
  if (options.estimator != MStepEstimator::Sampled) {
    throw ModelNotLinear("deep models support only the sampled M-step");
  }
  if (options.n_samples < 1) throw DimensionMismatch("M-step needs at least one sample");
  struct Datum {
    PosteriorEstimate q;
    std::vector<LatentLevels> noise;
    Vec grad;
    ElboTerms terms;
  };
  const DatumStreams s = streams(rng);
  auto data = parallel_map<Datum>(batch.rows(), [&](std::size_t i) {
    Rng r = s.at(i);
    const Vec x = row(batch, static_cast<Index>(i));
    Datum d{run_engine(engine, model, x, r), {}, {}, {}};
    d.noise = draw_noise(model.latent_dims, options.n_samples, r);
    ElboGradient g = elbo_gradient(model, d.q, x, d.noise, options.beta, true);
    d.grad = g.model->flatten();
    d.terms = g.terms;
    return d;
  });

  EmMetrics m;
  Vec g = Vec::Zero(data.front().grad.size());
  for (const auto& d : data) {
    g += d.grad;
    m.elbo_before += d.terms.value;
    m.recon += d.terms.recon;
    m.kl += d.terms.kl;
  }
  const double k = 1.0 / static_cast<double>(batch.rows());
  g *= k;
  m.elbo_before *= k;
  m.recon *= k;
  m.kl *= k;
  if (!options.learn_prior) g.tail(2 * model.top_prior.dim()).setZero();
  m.grad_norm = g.norm();

  EmStep<DeepLatentModel> out{model, m};
  const Vec params = flatten_parameters(model) + options.learn_rate * g;
  check_finite(params);
  assign_parameters(out.model, params);

  double after = 0.0;
  for (Index i = 0; i < batch.rows(); ++i) {
    after += elbo_gradient(out.model, data[i].q, row(batch, i), data[i].noise, options.beta,
                           false)
                 .terms.value;
  }
  out.metrics.elbo_after = after * k;
  return out;
}

namespace {

template <class Model>
std::vector<MetricRow> train_any(Model& model, Engine& engine, const RowMat& data,
                                 const TrainOptions& options, Rng& rng) {
  std::optional<Adam> adam;
  if (auto* d = std::get_if<DirectEngine>(&engine)) {
    adam.emplace(d->net.net.parameter_count(), options.encoder.adam);
  } else if (auto* it = std::get_if<IterativeEngine>(&engine)) {
    adam.emplace(it->net.net.parameter_count(), options.encoder.adam);
  }
  return epochs(data, options.epochs, options.batch_size, rng, [&](const RowMat& batch) {
    if (adam) {
      DeepLatentModel deep;
      if constexpr (std::is_same_v<Model, LinearGaussianModel>) {
        deep = DeepLatentModel::from_linear(model);
      } else {
        deep = model;
      }
      if (auto* d = std::get_if<DirectEngine>(&engine)) {
        encoder_step(d->net, *adam, deep, batch, options.encoder, rng);
      } else if (auto* it = std::get_if<IterativeEngine>(&engine)) {
        EncoderOptions eo = options.encoder;
        eo.n_iters = it->n_iters;
        encoder_step(it->net, *adam, deep, batch, eo, rng);
      }
    }
    auto step = variational_em_step(model, engine, batch, options.em, rng);
    model = std::move(step.model);
    return MetricRow{0, step.metrics.elbo_before, step.metrics.recon, step.metrics.kl,
                     step.metrics.grad_norm};
  });
}

}  // namespace

std::vector<MetricRow> train_model(LinearGaussianModel& model, Engine& engine, const RowMat& data,
                                   const TrainOptions& options, Rng& rng) {
  return train_any(model, engine, data, options, rng);
}

std::vector<MetricRow> train_model(DeepLatentModel& model, Engine& engine, const RowMat& data,
                                   const TrainOptions& options, Rng& rng) {
  return train_any(model, engine, data, options, rng);
}

}  // namespace predflow
