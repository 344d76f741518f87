#include "predflow/inference.hpp"

#include <cmath>
#include <numeric>

namespace predflow {

namespace {

// Clamped standard deviation and its derivative with respect to log-std
// (zero where the clamp is active).
struct Scale {
  Vec sigma;
  Vec dsigma;
};

Scale scale_from_log(const Vec& log_std) {
  Scale s{log_std.array().exp(), Vec(log_std.size())};
  for (Index i = 0; i < s.sigma.size(); ++i) {
    if (s.sigma[i] < kMinStd) {
      s.sigma[i] = kMinStd;
      s.dsigma[i] = 0.0;
    } else {
      s.dsigma[i] = s.sigma[i];
    }
  }
  return s;
}

Vec mask_of(const Scale& s) {
  return (s.dsigma.array() > 0.0).cast<double>();
}

Vec concat(const Vec& a, const Vec& b) {
  Vec out(a.size() + b.size());
  out << a, b;
  return out;
}

Vec flatten_levels(const LatentLevels& z) {
  Index n = 0;
  for (const auto& v : z) n += v.size();
  Vec flat(n);
  Index k = 0;
  for (const auto& v : z) {
    flat.segment(k, v.size()) = v;
    k += v.size();
  }
  return flat;
}

LatentLevels split_levels(const Vec& flat, std::span<const Index> dims) {
  LatentLevels z;
  Index k = 0;
  for (Index d : dims) {
    z.push_back(flat.segment(k, d));
    k += d;
  }
  require_dim(k, flat.size(), "packed latent vector");
  return z;
}

void check_levels(const DeepLatentModel& model, const LatentLevels& z) {
  require_dim(model.num_levels(), static_cast<long>(z.size()), "latent level count");
  for (Index l = 0; l < model.num_levels(); ++l) {
    require_dim(model.latent_dims[l], z[l].size(), "latent level");
  }
}

struct MapPass {
  double objective = 0.0;
  WeightedErrors errors;
  LatentLevels grad;
};

MapPass map_pass(const DeepLatentModel& model, const Vec& x, const LatentLevels& z,
                 bool want_grad) {
  model.validate();
  check_levels(model, z);
  const Index levels = model.num_levels();
  const Vec xt = normalize_observation(model, x).value;
  MapPass pass;
  if (want_grad) {
    for (const auto& v : z) pass.grad.push_back(Vec::Zero(v.size()));
  }

  ForwardCache dec;
  const Vec out = mlp_forward(model.decoder, z.front(), dec);
  const Index m = model.obs_dim();
  const Vec mean_x = out.head(m);
  const Scale sx = scale_from_log(model.decoder_outputs_scale ? Vec(out.tail(m))
                                                                : model.obs_log_std);
  const Vec xi_x = (xt - mean_x).cwiseQuotient(sx.sigma);
  pass.objective = -0.5 * xi_x.squaredNorm();
  if (model.decoder_outputs_scale) pass.objective -= sx.sigma.array().log().sum();
  if (want_grad) {
    Vec upstream = xi_x.cwiseQuotient(sx.sigma);
    if (model.decoder_outputs_scale) {
      upstream = concat(upstream, (xi_x.array().square() - 1.0).matrix().cwiseProduct(mask_of(sx)));
    }
    pass.grad[0] += mlp_backward(model.decoder, dec, upstream).input;
  }
  pass.errors.obs = xi_x;

  for (Index l = 0; l < levels; ++l) {
    const bool conditional = l + 1 < levels;
    ForwardCache pc;
    Vec mean;
    Vec log_std;
    if (conditional) {
      const Vec p = mlp_forward(model.level_priors[l], z[l + 1], pc);
      mean = p.head(model.latent_dims[l]);
      log_std = p.tail(model.latent_dims[l]);
    } else {
      mean = model.top_prior.mean;
      log_std = model.top_prior.log_std;
    }
    const Scale s = scale_from_log(log_std);
    const Vec xi = (z[l] - mean).cwiseQuotient(s.sigma);
    pass.objective -= 0.5 * xi.squaredNorm();
    if (conditional) pass.objective -= s.sigma.array().log().sum();
    if (want_grad) {
      pass.grad[l] -= xi.cwiseQuotient(s.sigma);
      if (conditional) {
        const Vec upstream = concat(xi.cwiseQuotient(s.sigma),
                                    (xi.array().square() - 1.0).matrix().cwiseProduct(mask_of(s)));
        pass.grad[l + 1] += mlp_backward(model.level_priors[l], pc, upstream).input;
      }
    }
    pass.errors.latent.push_back(xi);
  }
  return pass;
}

Vec infinity_norm_vec(const Vec& v) { return v.cwiseAbs(); }

}  // namespace

// ---- PosteriorEstimate ------------------------------------------------------

Index PosteriorEstimate::total_dim() const {
  Index n = 0;
  for (const auto& l : levels) n += l.dim();
  return n;
}

std::vector<Index> PosteriorEstimate::dims() const {
  std::vector<Index> d;
  for (const auto& l : levels) d.push_back(l.dim());
  return d;
}

LatentLevels PosteriorEstimate::means() const {
  LatentLevels z;
  for (const auto& l : levels) z.push_back(l.mean);
  return z;
}

Vec PosteriorEstimate::pack() const {
  const Index n = total_dim();
  Vec lambda(2 * n);
  Index k = 0;
  for (const auto& l : levels) {
    lambda.segment(k, l.dim()) = l.mean;
    lambda.segment(n + k, l.dim()) = l.log_std;
    k += l.dim();
  }
  return lambda;
}

PosteriorEstimate PosteriorEstimate::unpack(const Vec& lambda, std::span<const Index> dims) {
  const Index n = std::accumulate(dims.begin(), dims.end(), Index{0});
  require_dim(2 * n, lambda.size(), "packed posterior");
  PosteriorEstimate q;
  Index k = 0;
  for (Index d : dims) {
    q.levels.push_back({lambda.segment(k, d), lambda.segment(n + k, d)});
    k += d;
  }
  return q;
}

PosteriorEstimate PosteriorEstimate::from_prior(const DeepLatentModel& model) {
  model.validate();
  PosteriorEstimate q;
  q.levels.resize(model.num_levels());
  LatentLevels z(model.num_levels());
  for (Index l = model.num_levels(); l-- > 0;) {
    q.levels[l] = level_prior(model, l, z);
    z[l] = q.levels[l].mean;
  }
  return q;
}

PosteriorEstimate PosteriorEstimate::point(const LatentLevels& z, double log_std) {
  PosteriorEstimate q;
  for (const auto& v : z) q.levels.push_back({v, Vec::Constant(v.size(), log_std)});
  return q;
}

// ---- MAP --------------------------------------------------------------------

double map_objective(const DeepLatentModel& model, const Vec& x, const LatentLevels& z) {
  return map_pass(model, x, z, false).objective;
}

double map_objective(const LinearGaussianModel& model, const Vec& x, const Vec& z) {
  return map_objective(DeepLatentModel::from_linear(model), x, LatentLevels{z});
}

WeightedErrors weighted_errors(const DeepLatentModel& model, const Vec& x, const LatentLevels& z) {
  return map_pass(model, x, z, false).errors;
}

WeightedErrors weighted_errors(const LinearGaussianModel& model, const Vec& x, const Vec& z) {
  return weighted_errors(DeepLatentModel::from_linear(model), x, LatentLevels{z});
}

LatentLevels map_gradient(const DeepLatentModel& model, const Vec& x, const LatentLevels& z) {
  return map_pass(model, x, z, true).grad;
}

Vec map_gradient(const LinearGaussianModel& model, const Vec& x, const Vec& z) {
  return map_gradient(DeepLatentModel::from_linear(model), x, LatentLevels{z}).front();
}

AscentResult gradient_ascent(const std::function<double(const Vec&, Vec*)>& f, Vec x0,
                             const AscentOptions& options) {
  if (!(options.step > 0.0)) throw DimensionMismatch("ascent step must be positive");
  AscentResult r{std::move(x0), {}};
  Vec grad;
  double value = f(r.x, &grad);
  if (!std::isfinite(value) || !grad.allFinite()) throw Diverged("non-finite initial objective");
  const auto record = [&](int it) {
    r.trace.entries.push_back(
        {it, value, grad.size() ? infinity_norm_vec(grad).maxCoeff() : 0.0, r.x});
  };
  record(0);
  for (int it = 1; it <= options.max_steps; ++it) {
    if (r.trace.entries.back().grad_norm < options.tol) {
      r.trace.converged = true;
      return r;
    }
    double step = options.step;
    bool accepted = false;
    Vec candidate;
    double candidate_value = 0.0;
    const int attempts = options.backtracking ? options.max_halvings + 1 : 1;
    for (int h = 0; h < attempts; ++h, step *= 0.5) {
      candidate = r.x + step * grad;
      candidate_value = f(candidate, nullptr);
      if (!std::isfinite(candidate_value)) {
        if (!options.backtracking) throw Diverged("objective became non-finite");
        continue;
      }
      if (!options.backtracking || candidate_value >= value) {
        accepted = true;
        break;
      }
    }
    // Even the shortest step fails to increase the objective, so the change
    // along the gradient is below rounding: a stationary point in floating
    // point. For a smooth objective that only happens once the gradient is
    // tiny, so it counts as convergence.
    if (!accepted) {
      r.trace.converged = options.backtracking;
      return r;
    }
    r.x = std::move(candidate);
    value = f(r.x, &grad);
    if (!std::isfinite(value) || !grad.allFinite()) throw Diverged("objective became non-finite");
    record(it);
  }
  r.trace.converged = r.trace.entries.back().grad_norm < options.tol;
  return r;
}

PcResult pc_inference(const DeepLatentModel& model, const Vec& x, const LatentLevels& init,
                      const AscentOptions& options) {
  check_levels(model, init);
  const std::vector<Index> dims = model.latent_dims;
  auto f = [&](const Vec& flat, Vec* grad) {
    const LatentLevels z = split_levels(flat, dims);
    MapPass pass = map_pass(model, x, z, grad != nullptr);
    if (grad) *grad = flatten_levels(pass.grad);
    return pass.objective;
  };
  AscentResult r = gradient_ascent(f, flatten_levels(init), options);
  return {split_levels(r.x, dims), std::move(r.trace)};
}

PcResult pc_inference(const LinearGaussianModel& model, const Vec& x, const Vec& init,
                      const AscentOptions& options) {
  return pc_inference(DeepLatentModel::from_linear(model), x, LatentLevels{init}, options);
}

Mat local_weight_gradient(const LinearGaussianModel& model, const Vec& x, const Vec& z) {
  model.validate();
  if (!model.is_linear()) throw ModelNotLinear("local weight rule needs the identity link");
  const WeightedErrors e = weighted_errors(model, x, z);
  return e.obs.cwiseQuotient(model.obs_std) * z.transpose();
}

// ---- ELBO -------------------------------------------------------------------

ModelGradient ModelGradient::zeros_like(const DeepLatentModel& model) {
  ModelGradient g;
  g.decoder = GradientBundle::zeros_like(model.decoder);
  g.obs_log_std = Vec::Zero(model.obs_log_std.size());
  for (const auto& p : model.level_priors) g.level_priors.push_back(GradientBundle::zeros_like(p));
  g.top_mean = Vec::Zero(model.top_prior.dim());
  g.top_log_std = Vec::Zero(model.top_prior.dim());
  return g;
}

ModelGradient& ModelGradient::operator+=(const ModelGradient& other) {
  decoder += other.decoder;
  obs_log_std += other.obs_log_std;
  for (std::size_t i = 0; i < level_priors.size(); ++i) level_priors[i] += other.level_priors[i];
  top_mean += other.top_mean;
  top_log_std += other.top_log_std;
  return *this;
}

ModelGradient& ModelGradient::operator*=(double k) {
  decoder *= k;
  obs_log_std *= k;
  for (auto& p : level_priors) p *= k;
  top_mean *= k;
  top_log_std *= k;
  return *this;
}

Vec ModelGradient::flatten() const {
  std::vector<Vec> parts{decoder.flatten(), obs_log_std};
  for (const auto& p : level_priors) parts.push_back(p.flatten());
  parts.push_back(top_mean);
  parts.push_back(top_log_std);
  return flatten_levels(parts);
}

std::vector<LatentLevels> draw_noise(std::span<const Index> dims, int n_samples, Rng& rng) {
  if (n_samples < 1) throw DimensionMismatch("need at least one sample");
  std::vector<LatentLevels> noise(n_samples);
  for (auto& s : noise) {
    for (Index d : dims) s.push_back(standard_normal(rng, d));
  }
  return noise;
}

ElboGradient elbo_gradient(const DeepLatentModel& model, const PosteriorEstimate& q, const Vec& x,
                           std::span<const LatentLevels> noise, double beta, bool want_model) {
  model.validate();
  if (beta < 0.0) throw DimensionMismatch("beta must be non-negative");
  if (noise.empty()) throw DimensionMismatch("need at least one noise sample");
  const Index levels = model.num_levels();
  require_dim(levels, static_cast<long>(q.levels.size()), "posterior level count");
  for (Index l = 0; l < levels; ++l) {
    require_dim(model.latent_dims[l], q.levels[l].dim(), "posterior level");
  }
  const FlowResult xt = normalize_observation(model, x);
  const Index m = model.obs_dim();

  std::vector<Scale> sq;
  for (const auto& lvl : q.levels) sq.push_back(scale_from_log(lvl.log_std));

  ElboGradient out;
  std::vector<Vec> g_mean;
  std::vector<Vec> g_log_std;
  for (Index l = 0; l < levels; ++l) {
    g_mean.push_back(Vec::Zero(model.latent_dims[l]));
    g_log_std.push_back(Vec::Zero(model.latent_dims[l]));
  }
  if (want_model) out.model = ModelGradient::zeros_like(model);

  for (const LatentLevels& eps : noise) {
    require_dim(levels, static_cast<long>(eps.size()), "noise level count");
    LatentLevels z(levels);
    LatentLevels g_z(levels);
    for (Index l = 0; l < levels; ++l) {
      z[l] = q.levels[l].mean + sq[l].sigma.cwiseProduct(eps[l]);
      g_z[l] = Vec::Zero(z[l].size());
    }

    // Reconstruction: log N(x~; mu_x(z0), sigma_x(z0)) + flow log-det.
    ForwardCache dec;
    const Vec dec_out = mlp_forward(model.decoder, z[0], dec);
    const Scale sx = scale_from_log(model.decoder_outputs_scale ? Vec(dec_out.tail(m))
                                                                  : model.obs_log_std);
    const Vec xi_x = (xt.value - dec_out.head(m)).cwiseQuotient(sx.sigma);
    const double recon = -static_cast<double>(m) * kHalfLog2Pi<double> -
                         sx.sigma.array().log().sum() - 0.5 * xi_x.squaredNorm() + xt.logdet;
    const Vec d_log_sx = (xi_x.array().square() - 1.0).matrix().cwiseProduct(mask_of(sx));
    Vec upstream = xi_x.cwiseQuotient(sx.sigma);
    if (model.decoder_outputs_scale) upstream = concat(upstream, d_log_sx);
    const GradientBundle g_dec = mlp_backward(model.decoder, dec, upstream);
    g_z[0] += g_dec.input;
    if (want_model) {
      out.model->decoder += g_dec;
      if (!model.decoder_outputs_scale) out.model->obs_log_std += d_log_sx;
    }

    // KL(q_l || p(z_l | z_{l+1})) with the prior evaluated at the sample above.
    double kl = 0.0;
    for (Index l = 0; l < levels; ++l) {
      const bool conditional = l + 1 < levels;
      ForwardCache pc;
      Vec pm;
      Vec plog;
      if (conditional) {
        const Vec p = mlp_forward(model.level_priors[l], z[l + 1], pc);
        pm = p.head(model.latent_dims[l]);
        plog = p.tail(model.latent_dims[l]);
      } else {
        pm = model.top_prior.mean;
        plog = model.top_prior.log_std;
      }
      const Scale sp = scale_from_log(plog);
      const Vec vp = sp.sigma.array().square();
      const Vec vq = sq[l].sigma.array().square();
      const Vec dm = q.levels[l].mean - pm;
      kl += (sp.sigma.array().log() - sq[l].sigma.array().log() +
             (vq.array() + dm.array().square()) / (2.0 * vp.array()) - 0.5)
                .sum();
      // dKL/d(q mean, q log-std, prior mean, prior log-std)
      const Vec dkl_qm = dm.cwiseQuotient(vp);
      const Vec dkl_qs = (vq.cwiseQuotient(vp).array() - 1.0).matrix().cwiseProduct(mask_of(sq[l]));
      const Vec dkl_pm = -dkl_qm;
      const Vec dkl_ps =
          (1.0 - (vq.array() + dm.array().square()) / vp.array()).matrix().cwiseProduct(mask_of(sp));
      g_mean[l] -= beta * dkl_qm;
      g_log_std[l] -= beta * dkl_qs;
      if (conditional) {
        const GradientBundle gp =
            mlp_backward(model.level_priors[l], pc, concat(-beta * dkl_pm, -beta * dkl_ps));
        g_z[l + 1] += gp.input;
        if (want_model) out.model->level_priors[l] += gp;
      } else if (want_model) {
        out.model->top_mean -= beta * dkl_pm;
        out.model->top_log_std -= beta * dkl_ps;
      }
    }

    // Pathwise terms: dz/dmean = 1, dz/dlog_std = eps * dsigma.
    for (Index l = 0; l < levels; ++l) {
      g_mean[l] += g_z[l];
      g_log_std[l] += g_z[l].cwiseProduct(eps[l]).cwiseProduct(sq[l].dsigma);
    }
    out.terms.recon += recon;
    out.terms.kl += kl;
  }

  const double inv_n = 1.0 / static_cast<double>(noise.size());
  out.terms.recon *= inv_n;
  out.terms.kl *= inv_n;
  out.terms.value = out.terms.recon - beta * out.terms.kl;
  const Index n = q.total_dim();
  out.lambda = Vec(2 * n);
  Index k = 0;
  for (Index l = 0; l < levels; ++l) {
    const Index d = model.latent_dims[l];
    out.lambda.segment(k, d) = g_mean[l] * inv_n;
    out.lambda.segment(n + k, d) = g_log_std[l] * inv_n;
    k += d;
  }
  if (want_model) *out.model *= inv_n;
  return out;
}

ElboTerms elbo(const DeepLatentModel& model, const PosteriorEstimate& q, const Vec& x,
               int n_samples, double beta, Rng& rng) {
  const auto noise = draw_noise(q.dims(), n_samples, rng);
  return elbo_gradient(model, q, x, noise, beta, false).terms;
}

ElboTerms elbo(const LinearGaussianModel& model, const DiagGaussian& q, const Vec& x,
               int n_samples, double beta, Rng& rng) {
  return elbo(DeepLatentModel::from_linear(model), PosteriorEstimate{{q}}, x, n_samples, beta, rng);
}

LinearModelGradient LinearModelGradient::zeros_like(const LinearGaussianModel& m) {
  return {Mat::Zero(m.obs_dim(), m.latent_dim()), Vec::Zero(m.obs_dim()), Vec::Zero(m.obs_dim()),
          Vec::Zero(m.latent_dim()), Vec::Zero(m.latent_dim())};
}

LinearModelGradient& LinearModelGradient::operator+=(const LinearModelGradient& o) {
  weight += o.weight;
  bias += o.bias;
  log_obs_std += o.log_obs_std;
  prior_mean += o.prior_mean;
  log_prior_std += o.log_prior_std;
  return *this;
}

LinearModelGradient& LinearModelGradient::operator*=(double k) {
  weight *= k;
  bias *= k;
  log_obs_std *= k;
  prior_mean *= k;
  log_prior_std *= k;
  return *this;
}

Vec LinearModelGradient::flatten() const {
  return flatten_levels({Vec(weight.reshaped()), bias, log_obs_std, prior_mean, log_prior_std});
}

LinearElboGradient elbo_analytic_gradient(const LinearGaussianModel& model, const DiagGaussian& q,
                                          const Vec& x, double beta) {
  model.validate();
  if (!model.is_linear()) throw ModelNotLinear("analytic ELBO needs the identity link");
  if (beta < 0.0) throw DimensionMismatch("beta must be non-negative");
  require_dim(model.obs_dim(), x.size(), "observation");
  require_dim(model.latent_dim(), q.dim(), "posterior");
  const Mat& w = model.weight;
  const Scale s = scale_from_log(q.log_std);
  const Vec vq = s.sigma.array().square();
  const Vec vx = model.obs_std.array().square();
  const Vec vz = model.prior_std.array().square();
  const Vec r = x - w * q.mean - model.bias;
  // E_q[(x - W z - b)^2] per observation dimension.
  const Vec expected_sq = r.array().square().matrix() + w.array().square().matrix() * vq;
  const Vec dm = q.mean - model.prior_mean;

  LinearElboGradient g;
  g.terms.recon = -static_cast<double>(model.obs_dim()) * kHalfLog2Pi<double> -
                  model.obs_std.array().log().sum() -
                  0.5 * expected_sq.cwiseQuotient(vx).sum();
  g.terms.kl = 0.5 * (vq.cwiseQuotient(vz).array() + dm.array().square() / vz.array() - 1.0 -
                      (vq.cwiseQuotient(vz)).array().log())
                         .sum();
  g.terms.value = g.terms.recon - beta * g.terms.kl;

  const Vec r_prec = r.cwiseQuotient(vx);
  const Index k = model.latent_dim();
  g.lambda = Vec(2 * k);
  g.lambda.head(k) = w.transpose() * r_prec - beta * dm.cwiseQuotient(vz);
  const Vec col_prec = w.array().square().matrix().transpose() * vx.cwiseInverse();
  g.lambda.tail(k) = (-vq.cwiseProduct(col_prec) -
                      beta * (vq.cwiseQuotient(vz).array() - 1.0).matrix())
                         .cwiseProduct(mask_of(s));

  g.model.weight = r_prec * q.mean.transpose() - vx.cwiseInverse().asDiagonal() * w * vq.asDiagonal();
  g.model.bias = r_prec;
  g.model.log_obs_std = expected_sq.cwiseQuotient(vx).array() - 1.0;
  g.model.prior_mean = beta * dm.cwiseQuotient(vz);
  g.model.log_prior_std = -beta * (1.0 - (vq.array() + dm.array().square()) / vz.array()).matrix();
  return g;
}

ElboTerms elbo_analytic(const LinearGaussianModel& model, const DiagGaussian& q, const Vec& x,
                        double beta) {
  return elbo_analytic_gradient(model, q, x, beta).terms;
}

ElboGradient estimate_elbo(const DeepLatentModel& model, const PosteriorEstimate& q, const Vec& x,
                           const ElboEstimator& estimator, Rng& rng, bool want_model) {
  if (!estimator.analytic) {
    const auto noise = draw_noise(q.dims(), estimator.n_samples, rng);
    return elbo_gradient(model, q, x, noise, estimator.beta, want_model);
  }
  const auto linear = as_linear(model);
  if (!linear) throw ModelNotLinear("analytic ELBO needs a single-layer linear model");
  require_dim(1, static_cast<long>(q.levels.size()), "posterior level count");
  const LinearElboGradient lg = elbo_analytic_gradient(*linear, q.levels.front(), x, estimator.beta);
  ElboGradient g{lg.terms, lg.lambda, std::nullopt};
  if (want_model) {
    ModelGradient mg = ModelGradient::zeros_like(model);
    mg.decoder.weight[0] = lg.model.weight;
    mg.decoder.bias[0] = lg.model.bias;
    mg.obs_log_std = lg.model.log_obs_std;
    mg.top_mean = lg.model.prior_mean;
    mg.top_log_std = lg.model.log_prior_std;
    g.model = std::move(mg);
  }
  return g;
}

VariationalResult gradient_inference(const DeepLatentModel& model, const Vec& x,
                                     const PosteriorEstimate& init,
                                     const VariationalOptions& options, Rng& rng) {
  const std::vector<Index> dims = init.dims();
  const Index n = init.total_dim();
  std::vector<LatentLevels> noise;
  std::optional<LinearGaussianModel> linear;
  if (options.estimator.analytic) {
    linear = as_linear(model);
    if (!linear) throw ModelNotLinear("analytic ELBO needs a single-layer linear model");
  } else {
    noise = draw_noise(dims, options.estimator.n_samples, rng);
  }
  auto f = [&](const Vec& lambda, Vec* grad) {
    const PosteriorEstimate q = PosteriorEstimate::unpack(lambda, dims);
    double value = 0.0;
    if (linear) {
      if (!grad) return elbo_analytic(*linear, q.levels.front(), x, options.estimator.beta).value;
      const LinearElboGradient g =
          elbo_analytic_gradient(*linear, q.levels.front(), x, options.estimator.beta);
      value = g.terms.value;
      *grad = g.lambda;
    } else {
      const ElboGradient g = elbo_gradient(model, q, x, noise, options.estimator.beta, false);
      value = g.terms.value;
      if (grad) *grad = g.lambda;
    }
    if (grad && options.fix_scale) grad->tail(n).setZero();
    return value;
  };
  AscentResult r = gradient_ascent(f, init.pack(), options.ascent);
  return {PosteriorEstimate::unpack(r.x, dims), std::move(r.trace)};
}

}  // namespace predflow
