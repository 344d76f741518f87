#include "predflow/harness/experiments.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <variant>

#include "predflow/flows.hpp"
#include "predflow/harness/pgm.hpp"
#include "predflow/linalg.hpp"
#include "predflow/parallel.hpp"

namespace predflow {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Command c) {
  switch (c) {
    case Command::Train: return "train";
    case Command::Infer: return "infer";
    case Command::Whiten: return "whiten";
    case Command::CompareInference: return "compare-inference";
    case Command::EvalElbo: return "eval-elbo";
    case Command::GenData: return "gen-data";
  }
  return "train";
}

std::optional<Command> command_from_string(std::string_view name) {
  for (Command c : {Command::Train, Command::Infer, Command::Whiten, Command::CompareInference,
                    Command::EvalElbo, Command::GenData}) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,elbo,recon,kl,grad_norm\n";
  for (const auto& r : rows) {
    out << r.step << ',' << format_number(r.elbo) << ',' << format_number(r.recon) << ','
        << format_number(r.kl) << ',' << format_number(r.grad_norm) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

double center_surround_fraction(const Mat& filters, Index tile_h, Index tile_w) {
  require_dim(tile_h * tile_w, filters.cols(), "filter length vs tile shape");
  require_dim(filters.cols(), filters.rows(), "one filter per pixel");
  Index interior = 0;
  Index opposite = 0;
  for (Index r = 1; r + 1 < tile_h; ++r) {
    for (Index c = 1; c + 1 < tile_w; ++c) {
      const Index i = r * tile_w + c;
      double ring = 0.0;
      for (Index dr = -1; dr <= 1; ++dr) {
        for (Index dc = -1; dc <= 1; ++dc) {
          if (dr != 0 || dc != 0) ring += filters(i, (r + dr) * tile_w + (c + dc));
        }
      }
      ++interior;
      if (filters(i, i) * ring < 0.0) ++opposite;
    }
  }
  if (interior == 0) throw DimensionMismatch("tiles have no interior pixels");
  return static_cast<double>(opposite) / static_cast<double>(interior);
}

LinearGaussianModel init_linear_model(const ModelSpec& spec, Rng& rng) {
  LinearGaussianModel m;
  m.weight = spec.init_scale * standard_normal(rng, spec.obs_dim, spec.latent_dim);
  m.bias = Vec::Zero(spec.obs_dim);
  m.obs_std = Vec::Constant(spec.obs_dim, spec.obs_std);
  m.prior_mean = Vec::Zero(spec.latent_dim);
  m.prior_std = Vec::Ones(spec.latent_dim);
  return m;
}

namespace {

// Fixed stream ids so that each part of a run draws from its own sequence.
enum Stream : std::uint64_t {
  kTruth = 1,
  kTrainData,
  kTestData,
  kModelInit,
  kEncoderInit,
  kTraining,
  kInference,
  kEvaluation,
};

std::uint64_t stream(std::uint64_t seed, Stream s) { return Rng(seed).split(s).next_u64(); }

using AnyModel = std::variant<LinearGaussianModel, DeepLatentModel>;

struct Materialized {
  RowMat train;
  RowMat test;
  std::optional<LinearGaussianModel> linear_truth;
  std::optional<DeepLatentModel> deep_truth;
  std::string provenance;
};

Materialized materialize(const ExperimentConfig& c, bool whitening) {
  const DataSpec& d = c.data;
  const std::uint64_t seed = c.seed;
  Materialized m;
  if (d.source == "linear" || d.source == "deep") {
    if (d.source == "linear") {
      if (d.truth) {
        m.linear_truth = *d.truth;
      } else {
        Rng rng(stream(seed, kTruth));
        m.linear_truth = random_linear_model(c.model.latent_dim, c.model.obs_dim, rng);
      }
      m.linear_truth->validate();
      m.train = sample_dataset(*m.linear_truth, d.n, stream(seed, kTrainData)).samples;
      if (d.n_test > 0) {
        m.test = sample_dataset(*m.linear_truth, d.n_test, stream(seed, kTestData)).samples;
      }
    } else {
      Rng rng(stream(seed, kTruth));
      m.deep_truth = random_deep_model(c.model.deep_spec(), rng);
      m.train = sample_dataset(*m.deep_truth, d.n, stream(seed, kTrainData)).samples;
      if (d.n_test > 0) {
        m.test = sample_dataset(*m.deep_truth, d.n_test, stream(seed, kTestData)).samples;
      }
    }
    m.provenance = d.source + " synthetic, seed " + std::to_string(seed);
    return m;
  }
  Dataset ds;
  if (d.source == "patches") {
    ds = load_patches(d.images, d.patch_size, d.n, stream(seed, kTrainData),
                      d.remove_patch_mean.value_or(!whitening));
  } else if (d.source == "video") {
    ds = gen_moving_square_video(d.frames, d.height, d.width, stream(seed, kTrainData), d.video);
  } else if (d.source == "ar1") {
    ds = gen_ar1(d.length, d.dim, d.rho, stream(seed, kTrainData));
  } else {
    ds.samples = load_tensor(d.path).matrix();
    ds.provenance = "tensor " + d.path.string();
  }
  m.train = std::move(ds.samples);
  m.provenance = ds.provenance;
  return m;
}

DeepLatentModel as_deep(const AnyModel& m) {
  if (const auto* l = std::get_if<LinearGaussianModel>(&m)) return DeepLatentModel::from_linear(*l);
  return std::get<DeepLatentModel>(m);
}

Index obs_dim_of(const AnyModel& m) {
  return std::visit([](const auto& x) { return x.obs_dim(); }, m);
}

// The model to run inference against: a checkpoint when given, otherwise the
// synthetic ground truth.
AnyModel resolve_model(const ExperimentConfig& c, const Materialized& data) {
  if (!c.checkpoint.empty()) {
    const Checkpoint ckpt = load_checkpoint(c.checkpoint);
    if (!ckpt.header.contains("model")) throw BadFormat("checkpoint holds no model");
    if (ckpt.header["model"].value("kind", "") == "linear") return get_linear_model(ckpt);
    return get_deep_model(ckpt);
  }
  if (data.linear_truth) return *data.linear_truth;
  if (data.deep_truth) return *data.deep_truth;
  throw ConfigInvalid("this command needs 'checkpoint' or a synthetic linear/deep data source");
}

bool analytic_ok(const DeepLatentModel& m) {
  const auto lin = as_linear(m);
  return lin && lin->link == Activation::Identity;
}

ElboEstimator estimator_for(const ExperimentConfig& c, const DeepLatentModel& m) {
  const bool analytic = c.inference.analytic.value_or(analytic_ok(m));
  if (analytic && !analytic_ok(m)) throw ConfigInvalid("analytic ELBO needs an identity-link linear model");
  return {analytic, c.inference.n_samples, c.beta};
}

EncoderOptions encoder_options(const ExperimentConfig& c, const DeepLatentModel& m) {
  EncoderOptions o;
  o.epochs = c.inference.encoder_epochs;
  o.batch_size = c.inference.encoder_batch;
  o.adam.learning_rate = c.inference.encoder_lr;
  o.estimator = estimator_for(c, m);
  o.n_iters = c.inference.n_iters;
  return o;
}

Engine make_engine(const ExperimentConfig& c, std::string_view name, const DeepLatentModel& m,
                   Rng& rng) {
  const InferenceSpec& s = c.inference;
  if (name == "pc") return PcEngine{VariationalOptions{s.ascent, estimator_for(c, m), s.fix_scale}};
  if (name == "direct") {
    return DirectEngine{DirectInferenceNet::make(m.obs_dim(), m.latent_dims, s.hidden, rng)};
  }
  return IterativeEngine{
      IterativeInferenceNet::make(m.obs_dim(), m.latent_dims, s.mode, s.hidden, rng), s.n_iters,
      estimator_for(c, m)};
}

// Engine for infer / eval-elbo: amortized engines must come from a checkpoint.
Engine load_engine(const ExperimentConfig& c, const DeepLatentModel& m) {
  const std::string& name = c.inference.engine;
  if (name == "pc") {
    Rng unused(0);
    return make_engine(c, name, m, unused);
  }
  if (c.checkpoint.empty()) {
    throw ConfigInvalid("engine '" + name + "' needs a checkpoint with a trained encoder");
  }
  const Checkpoint ckpt = load_checkpoint(c.checkpoint);
  if (name == "direct") return DirectEngine{get_direct_net(ckpt)};
  IterativeInferenceNet net = get_iterative_net(ckpt);
  return IterativeEngine{std::move(net), c.inference.n_iters, estimator_for(c, m)};
}

struct Scored {
  PosteriorEstimate q;
  ElboTerms terms;
  double grad_norm = 0.0;
};

// Infers every row and scores it. Inference and evaluation noise are keyed by
// row index only, so different engines see identical evaluation draws.
std::vector<Scored> infer_and_score(const ExperimentConfig& c, const Engine& engine,
                                    const DeepLatentModel& m, const RowMat& data) {
  if (data.rows() == 0) throw DimensionMismatch("no data to evaluate");
  require_dim(m.obs_dim(), data.cols(), "data width vs model");
  const ElboEstimator est = estimator_for(c, m);
  const std::uint64_t inf_key = stream(c.seed, kInference);
  const std::uint64_t eval_key = stream(c.seed, kEvaluation);
  const auto lin = as_linear(m);
  return parallel_map<Scored>(data.rows(), [&](std::size_t i) {
    const Vec x = data.row(static_cast<Index>(i)).transpose();
    Rng inf_rng = Rng(inf_key).split(i);
    Rng eval_rng = Rng(eval_key).split(i);
    Scored s;
    s.q = run_engine(engine, m, x, inf_rng);
    if (est.analytic) {
      const LinearElboGradient g = elbo_analytic_gradient(*lin, s.q.levels[0], x, c.beta);
      s.terms = g.terms;
      s.grad_norm = g.lambda.cwiseAbs().maxCoeff();
    } else {
      const auto noise = draw_noise(m.latent_dims, c.inference.eval_samples, eval_rng);
      const ElboGradient g = elbo_gradient(m, s.q, x, noise, c.beta, false);
      s.terms = g.terms;
      s.grad_norm = g.lambda.cwiseAbs().maxCoeff();
    }
    return s;
  });
}

ElboTerms mean_terms(const std::vector<Scored>& s) {
  ElboTerms t;
  for (const auto& x : s) {
    t.value += x.terms.value;
    t.recon += x.terms.recon;
    t.kl += x.terms.kl;
  }
  const double k = 1.0 / static_cast<double>(s.size());
  return {t.value * k, t.recon * k, t.kl * k};
}

double mean_log_marginal(const LinearGaussianModel& m, const RowMat& data) {
  double total = 0.0;
  for (Index i = 0; i < data.rows(); ++i) total += exact_log_marginal(m, data.row(i).transpose());
  return total / static_cast<double>(data.rows());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void put_any_model(Checkpoint& ckpt, const AnyModel& m) {
  std::visit([&](const auto& x) { put_model(ckpt, x); }, m);
}

void put_engine(Checkpoint& ckpt, const Engine& e) {
  if (const auto* d = std::get_if<DirectEngine>(&e)) put_inference_net(ckpt, d->net);
  if (const auto* it = std::get_if<IterativeEngine>(&e)) put_inference_net(ckpt, it->net);
}

std::vector<MetricRow> per_datum_rows(const std::vector<Scored>& scored) {
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const auto& s = scored[i];
    rows.push_back({static_cast<long>(i), s.terms.value, s.terms.recon, s.terms.kl, s.grad_norm});
  }
  return rows;
}

RowMat posterior_matrix(const std::vector<Scored>& scored) {
  RowMat p(static_cast<Index>(scored.size()), scored.front().q.pack().size());
  for (std::size_t i = 0; i < scored.size(); ++i) p.row(static_cast<Index>(i)) = scored[i].q.pack();
  return p;
}

// ---- commands ---------------------------------------------------------------------

void cmd_gen_data(const ExperimentConfig& c, const fs::path& dir) {
  const Materialized d = materialize(c, false);
  save_tensor(dir / "data.tensor", Tensor::from_matrix(d.train));
  if (d.test.rows() > 0) save_tensor(dir / "test.tensor", Tensor::from_matrix(d.test));
  Checkpoint ckpt;
  ckpt.header["provenance"] = d.provenance;
  std::vector<MetricRow> rows;
  if (d.linear_truth) {
    put_model(ckpt, *d.linear_truth);
    rows.push_back({0, mean_log_marginal(*d.linear_truth, d.train), 0.0, 0.0, 0.0});
  } else if (d.deep_truth) {
    put_model(ckpt, *d.deep_truth);
  }
  save_checkpoint(dir / "truth.ckpt", ckpt);
  write_metrics_csv(dir / "metrics.csv", rows);
}

void cmd_train(const ExperimentConfig& c, const fs::path& dir) {
  const Materialized d = materialize(c, false);
  Rng init(stream(c.seed, kModelInit));
  AnyModel model = c.model.kind == "linear" ? AnyModel(init_linear_model(c.model, init))
                                            : AnyModel(random_deep_model(c.model.deep_spec(), init));
  require_dim(obs_dim_of(model), d.train.cols(), "data width vs model");
  Rng enc_rng(stream(c.seed, kEncoderInit));
  Engine engine = make_engine(c, c.inference.engine, as_deep(model), enc_rng);

  TrainOptions opts;
  opts.epochs = c.training.epochs;
  opts.batch_size = c.training.batch_size;
  opts.em = {c.training.learn_rate, c.training.m_step, c.training.n_samples, c.beta,
             c.training.learn_prior};
  opts.encoder = encoder_options(c, as_deep(model));
  Rng train_rng(stream(c.seed, kTraining));
  const std::vector<MetricRow> rows =
      std::visit([&](auto& m) { return train_model(m, engine, d.train, opts, train_rng); }, model);
  write_metrics_csv(dir / "metrics.csv", rows);

  Checkpoint ckpt;
  put_any_model(ckpt, model);
  put_engine(ckpt, engine);
  save_checkpoint(dir / "model.ckpt", ckpt);

  json summary = {{"provenance", d.provenance}, {"epochs", rows.size()}};
  if (!rows.empty()) summary["final_train_elbo"] = rows.back().elbo;
  const auto* learned = std::get_if<LinearGaussianModel>(&model);
  if (learned && d.linear_truth && d.test.rows() > 0) {
    const double l = mean_log_marginal(*learned, d.test);
    const double t = mean_log_marginal(*d.linear_truth, d.test);
    summary["heldout_log_marginal_learned"] = l;
    summary["heldout_log_marginal_truth"] = t;
    summary["heldout_gap"] = t - l;
  }
  write_json(dir / "summary.json", summary);
}

void cmd_infer_or_eval(const ExperimentConfig& c, const fs::path& dir, bool eval) {
  const Materialized d = materialize(c, false);
  const AnyModel model = resolve_model(c, d);
  const DeepLatentModel deep = as_deep(model);
  const Engine engine = load_engine(c, deep);
  const RowMat& data = eval && d.test.rows() > 0 ? d.test : d.train;
  const auto scored = infer_and_score(c, engine, deep, data);
  write_metrics_csv(dir / "metrics.csv", per_datum_rows(scored));
  const RowMat post = posterior_matrix(scored);
  Checkpoint ckpt;
  ckpt.header["engine"] = std::string(engine_name(engine));
  ckpt.header["latent_dims"] = deep.latent_dims;
  ckpt.tensors.emplace("posterior.lambda", Tensor::from_matrix(post));
  save_checkpoint(dir / "posterior.ckpt", ckpt);
  if (!eval) {
    save_tensor(dir / "posterior.tensor", Tensor::from_matrix(post));
    return;
  }
  const ElboTerms mean = mean_terms(scored);
  json summary = {{"engine", std::string(engine_name(engine))},
                  {"n", data.rows()},
                  {"mean_elbo", mean.value},
                  {"mean_recon", mean.recon},
                  {"mean_kl", mean.kl}};
  if (const auto* lin = std::get_if<LinearGaussianModel>(&model)) {
    summary["mean_exact_log_marginal"] = mean_log_marginal(*lin, data);
  }
  write_json(dir / "summary.json", summary);
}

void cmd_whiten(const ExperimentConfig& c, const fs::path& dir) {
  const Materialized d = materialize(c, true);
  const AffineFlow flow = c.whitening.method == "zca" ? fit_zca(d.train) : fit_cholesky_whitening(d.train);
  const RowMat u = whiten(flow, d.train);
  const Mat cov = sample_covariance(u);
  const Index m = u.cols();

  json report = {{"method", c.whitening.method},
                 {"n", d.train.rows()},
                 {"dim", m},
                 {"provenance", d.provenance},
                 {"max_abs_cov_error", (cov - Mat::Identity(m, m)).cwiseAbs().maxCoeff()}};
  const Mat& w = flow.inverse_scale();
  if (c.whitening.method == "zca") {
    report["max_asymmetry"] = (w - w.transpose()).cwiseAbs().maxCoeff();
  } else {
    report["max_upper_entry"] = w.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().cwiseAbs().maxCoeff();
  }
  const auto side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(m))));
  if (side * side == m) {
    if (c.whitening.method == "zca" && side >= 3) {
      report["center_surround_fraction"] = center_surround_fraction(w, side, side);
    }
    if (c.whitening.filter_grid) write_pgm(dir / "filters.pgm", render_filter_grid(w, side, side));
  }
  write_json(dir / "whiten.json", report);

  FlowStack stack{{flow}, DiagGaussian::standard(m)};
  double ll = 0.0;
  for (Index i = 0; i < d.train.rows(); ++i) ll += flow_log_prob(stack, d.train.row(i).transpose());
  ll /= static_cast<double>(d.train.rows());
  write_metrics_csv(dir / "metrics.csv", {{0, ll, ll, 0.0, 0.0}});

  Checkpoint ckpt;
  ckpt.header["whitening"] = c.whitening.method;
  put_affine_flow(ckpt, "whitening", flow);
  save_checkpoint(dir / "whitening.ckpt", ckpt);
}

void cmd_compare(const ExperimentConfig& c, const fs::path& dir) {
  const Materialized d = materialize(c, false);
  const AnyModel model = resolve_model(c, d);
  const DeepLatentModel deep = as_deep(model);
  const RowMat& test = d.test.rows() > 0 ? d.test : d.train;
  const EncoderOptions enc = encoder_options(c, deep);

  Rng init(stream(c.seed, kEncoderInit));
  Engine pc = make_engine(c, "pc", deep, init);
  Engine direct = make_engine(c, "direct", deep, init);
  Engine iterative = make_engine(c, "iterative", deep, init);
  Rng train_rng(stream(c.seed, kTraining));
  auto& dnet = std::get<DirectEngine>(direct).net;
  auto& inet = std::get<IterativeEngine>(iterative).net;
  std::vector<MetricRow> direct_rows, iterative_rows;
  if (enc.epochs > 0) {
    direct_rows = train_direct(dnet, deep, d.train, enc, train_rng);
    iterative_rows = train_iterative(inet, deep, d.train, enc, train_rng);
  }
  write_metrics_csv(dir / "direct_training.csv", direct_rows);
  write_metrics_csv(dir / "iterative_training.csv", iterative_rows);

  const std::vector<std::pair<std::string, const Engine*>> engines{
      {"pc", &pc}, {"direct", &direct}, {"iterative", &iterative}};
  std::vector<ElboTerms> means;
  for (const auto& [name, e] : engines) means.push_back(mean_terms(infer_and_score(c, *e, deep, test)));

  const auto* lin = std::get_if<LinearGaussianModel>(&model);
  const bool exact_ok = lin && lin->link == Activation::Identity;
  const double exact = exact_ok ? mean_log_marginal(*lin, test) : std::nan("");
  const double direct_elbo = means[1].value;

  std::string csv = "engine,elbo,exact,gap_to_exact,gap_to_direct\n";
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < engines.size(); ++i) {
    const double v = means[i].value;
    csv += engines[i].first + ',' + format_number(v) + ',' + format_number(exact) + ',' +
           format_number(exact - v) + ',' + format_number(v - direct_elbo) + '\n';
    rows.push_back({static_cast<long>(i), v, means[i].recon, means[i].kl, 0.0});
  }
  write_text(dir / "comparison.csv", csv);
  write_metrics_csv(dir / "metrics.csv", rows);

  Checkpoint ckpt;
  put_any_model(ckpt, model);
  put_inference_net(ckpt, inet);
  save_checkpoint(dir / "iterative.ckpt", ckpt);
  Checkpoint dckpt;
  put_any_model(dckpt, model);
  put_inference_net(dckpt, dnet);
  save_checkpoint(dir / "direct.ckpt", dckpt);
}

fs::path staging_dir(const fs::path& out) {
  fs::path name = out.filename();
  if (name.empty()) name = out.parent_path().filename();
  return out.lexically_normal().parent_path() / ("." + name.string() + ".partial");
}

void publish(const fs::path& staging, const fs::path& out) {
  fs::create_directories(out);
  for (const auto& entry : fs::directory_iterator(staging)) {
    fs::rename(entry.path(), out / entry.path().filename());
  }
  fs::remove_all(staging);
}

}  // namespace

int run_experiment(const RunRequest& request, std::ostream& err) {
  ExperimentConfig config;
  try {
    config = load_config(request.config, request.seed);
  } catch (const ConfigInvalid& e) {
    err << e.what() << '\n';
    return kExitConfig;
  }
  fs::path out = !request.out.empty() ? request.out
                 : !config.output_dir.empty() ? config.output_dir
                                              : fs::path("runs") / std::string(to_string(request.command));
  out = out.lexically_normal();
  const fs::path staging = staging_dir(out);
  try {
    fs::remove_all(staging);
    fs::create_directories(staging);
    write_json(staging / "config.json", config.effective);
    switch (request.command) {
      case Command::GenData: cmd_gen_data(config, staging); break;
      case Command::Train: cmd_train(config, staging); break;
      case Command::Infer: cmd_infer_or_eval(config, staging, false); break;
      case Command::EvalElbo: cmd_infer_or_eval(config, staging, true); break;
      case Command::Whiten: cmd_whiten(config, staging); break;
      case Command::CompareInference: cmd_compare(config, staging); break;
    }
    publish(staging, out);
  } catch (const ConfigInvalid& e) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    err << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    err << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace predflow
