// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Every fixture is seeded, so the printed numbers are stable
// from run to run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "predflow/harness/datasets.hpp"
#include "predflow/harness/experiments.hpp"
#include "recipes.hpp"

using namespace predflow;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records one check; the detail line keeps the worst observed value.
  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [violated]");
  }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Vec v1(double a) { return Vec::Constant(1, a); }

// Same relative error as the Mlp gradient checker: |a-b| / max(|a|, |b|, 1e-3).
double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

double max_rel_map_gradient(const DeepLatentModel& m, const Vec& x, const LatentLevels& z) {
  const LatentLevels g = map_gradient(m, x, z);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t l = 0; l < z.size(); ++l) {
    for (Index i = 0; i < z[l].size(); ++i) {
      LatentLevels up = z, down = z;
      up[l][i] += h;
      down[l][i] -= h;
      const double fd = (map_objective(m, x, up) - map_objective(m, x, down)) / (2 * h);
      worst = std::max(worst, rel_err(g[l][i], fd));
    }
  }
  return worst;
}

RowMat correlated_data(Index m, Index n, Rng& rng) {
  const Mat mix = standard_normal(rng, m, m) + 0.5 * Mat::Identity(m, m);
  return RowMat(standard_normal(rng, n, m)) * mix.transpose();
}

// ---- 1 ------------------------------------------------------------------------

Outcome oracle_inference() {
  Outcome o;
  Rng rng(101);
  double worst = 0.0;
  int most_steps = 0;
  bool all_converged = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Index k = 1 + static_cast<Index>(rng.next_u64() % 4);
    const Index mdim = 1 + static_cast<Index>(rng.next_u64() % 4);
    LinearGaussianModel m = random_linear_model(k, mdim, rng);
    m.prior_mean = standard_normal(rng, k);
    const Vec x = sample_joint(m, rng).observation;
    const PcResult r = pc_inference(m, x, Vec::Zero(k));
    worst = std::max(worst, (r.z[0] - exact_posterior(m, x).mean).cwiseAbs().maxCoeff());
    most_steps = std::max(most_steps, static_cast<int>(r.trace.size()));
    all_converged = all_converged && r.trace.converged;
  }
  o.check(worst <= 1e-6, "max |mu - exact| = " + num(worst));
  o.check(all_converged && most_steps <= 10000, "most steps = " + std::to_string(most_steps));
  return o;
}

// ---- 2 ------------------------------------------------------------------------

Outcome bound_and_tightness() {
  Outcome o;
  const LinearGaussianModel unit = LinearGaussianModel::unit();
  Rng rng(202);
  double excess = -1e300;
  for (int i = 0; i < 200; ++i) {
    const Vec x = standard_normal(rng, 1);
    const DiagGaussian q{standard_normal(rng, 1), standard_normal(rng, 1)};
    excess = std::max(excess, elbo_analytic(unit, q, x).value - exact_log_marginal(unit, x));
  }
  o.check(excess <= 1e-9, "max(ELBO - log p) = " + num(excess));

  double tight = 0.0;
  for (double xv : {-2.0, 0.0, 1.0, 3.5}) {
    const FullGaussian post = exact_posterior(unit, v1(xv));
    const DiagGaussian q = DiagGaussian::from_std(post.mean, post.covariance.diagonal().cwiseSqrt());
    tight = std::max(tight, std::abs(elbo_analytic(unit, q, v1(xv)).value -
                                     exact_log_marginal(unit, v1(xv))));
  }
  o.check(tight <= 1e-9, "tightness error = " + num(tight));

  double identity = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index k = 1 + trial % 4, mdim = 1 + (trial / 4) % 4;
    const LinearGaussianModel m = random_linear_model(k, mdim, rng);
    const Vec x = sample_joint(m, rng).observation;
    const DiagGaussian q{standard_normal(rng, k), 0.5 * standard_normal(rng, k)};
    const double gap = exact_log_marginal(m, x) - elbo_analytic(m, q, x).value;
    identity = std::max(identity, std::abs(gap - kl_full_full(to_full(q), exact_posterior(m, x))));
  }
  o.check(identity <= 1e-9, "|log p - ELBO - KL| = " + num(identity));
  return o;
}

// ---- 3 ------------------------------------------------------------------------

Outcome gradient_correctness() {
  Outcome o;
  Rng rng(303);
  double map_worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const LinearGaussianModel m = random_linear_model(1 + trial % 4, 1 + trial % 3, rng);
    const Vec x = sample_joint(m, rng).observation;
    const DeepLatentModel d = DeepLatentModel::from_linear(m);
    map_worst = std::max(map_worst, max_rel_map_gradient(d, x, {standard_normal(rng, m.latent_dim())}));
  }
  for (int trial = 0; trial < 10; ++trial) {
    DeepFixtureSpec spec;
    spec.latent_dims = {2, 3};
    spec.obs_dim = 4;
    spec.hidden = 6;
    const DeepLatentModel d = random_deep_model(spec, rng);
    const JointSample s = sample_joint(d, rng);
    map_worst = std::max(map_worst, max_rel_map_gradient(d, s.observation, s.latents));
  }
  o.check(map_worst < 1e-4, "map_gradient rel err = " + num(map_worst));

  double mlp_worst = 0.0;
  const Activation acts[] = {Activation::Identity, Activation::Tanh, Activation::Logistic,
                             Activation::Softplus};
  for (int trial = 0; trial < 24; ++trial) {
    const Index in = 1 + trial % 4;
    const std::array<Index, 4> sizes{in, 3 + trial % 3, 4, 2};
    const std::array<Activation, 3> a{acts[trial % 4], acts[(trial + 1) % 4], acts[(trial / 4) % 4]};
    const Mlp net = Mlp::random(sizes, a, rng);
    mlp_worst = std::max(mlp_worst, finite_diff_check(net, standard_normal(rng, in), 1e-5));
  }
  o.check(mlp_worst < 1e-4, "Mlp backward rel err = " + num(mlp_worst));

  double local = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const LinearGaussianModel m = random_linear_model(1 + trial % 4, 1 + trial % 3, rng);
    const Vec x = sample_joint(m, rng).observation;
    const Vec z = standard_normal(rng, m.latent_dim());
    const DeepLatentModel d = DeepLatentModel::from_linear(m);
    const Vec upstream = weighted_errors(m, x, z).obs.cwiseQuotient(m.obs_std);
    const Mat autodiff = mlp_backward(d.decoder, z, upstream).weight[0];
    local = std::max(local, (local_weight_gradient(m, x, z) - autodiff).cwiseAbs().maxCoeff());
  }
  o.check(local <= 1e-10, "local rule vs autodiff = " + num(local));
  return o;
}

// ---- 4 ------------------------------------------------------------------------

Outcome whitening() {
  Outcome o;
  Rng rng(404);
  double cov_err = 0.0, asym = 0.0, upper = 0.0;
  for (Index m = 2; m <= 16; m += 2) {
    const RowMat x = correlated_data(m, 4096, rng);
    const Mat eye = Mat::Identity(m, m);
    const AffineFlow zca = fit_zca(x);
    const AffineFlow chol = fit_cholesky_whitening(x);
    cov_err = std::max(cov_err, (sample_covariance(whiten(zca, x)) - eye).cwiseAbs().maxCoeff());
    cov_err = std::max(cov_err, (sample_covariance(whiten(chol, x)) - eye).cwiseAbs().maxCoeff());
    const Mat& w = zca.inverse_scale();
    asym = std::max(asym, (w - w.transpose()).cwiseAbs().maxCoeff());
    upper = std::max(upper, chol.inverse_scale()
                                .triangularView<Eigen::StrictlyUpper>()
                                .toDenseMatrix()
                                .cwiseAbs()
                                .maxCoeff());
  }
  o.check(cov_err <= 1e-8, "max |cov - I| = " + num(cov_err));
  o.check(asym <= 1e-10, "ZCA asymmetry = " + num(asym));
  o.check(upper == 0.0, "Cholesky upper entries = " + num(upper));
  return o;
}

// ---- 5 ------------------------------------------------------------------------

double trapezoid_1d(const FlowStack& s, double lo, double hi, int n) {
  const double h = (hi - lo) / (n - 1);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    sum += w * std::exp(flow_log_prob(s, v1(lo + i * h)));
  }
  return sum * h;
}

double trapezoid_2d(const FlowStack& s, const Vec& centre, double half, int n) {
  const double h = 2 * half / (n - 1);
  double sum = 0.0;
  Vec v(2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double w = ((i == 0 || i == n - 1) ? 0.5 : 1.0) * ((j == 0 || j == n - 1) ? 0.5 : 1.0);
      v << centre[0] - half + i * h, centre[1] - half + j * h;
      sum += w * std::exp(flow_log_prob(s, v));
    }
  }
  return sum * h * h;
}

Outcome flow_correctness() {
  Outcome o;
  Rng rng(505);
  double roundtrip = 0.0, additivity = 0.0, gaussian = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const Index m = 1 + trial % 5;
    FlowStack s{{}, DiagGaussian{standard_normal(rng, m), 0.3 * standard_normal(rng, m)}};
    for (int k = 0; k < 3; ++k) {
      s.steps.emplace_back(standard_normal(rng, m), Mat::Identity(m, m) + 0.4 * standard_normal(rng, m, m));
    }
    const Vec u = standard_normal(rng, m);
    const FlowResult fwd = flow_forward(s, u);
    const FlowResult inv = flow_inverse(s, fwd.value);
    roundtrip = std::max(roundtrip, (inv.value - u).cwiseAbs().maxCoeff());
    double sum = 0.0;
    for (const auto& f : s.steps) sum += f.log_abs_det();
    additivity = std::max(additivity, std::abs(fwd.logdet - sum));
    additivity = std::max(additivity, std::abs(inv.logdet + fwd.logdet));

    const Vec alpha = standard_normal(rng, m);
    const Mat b = Mat::Identity(m, m) + 0.3 * standard_normal(rng, m, m);
    const FlowStack single{{AffineFlow(alpha, b)}, DiagGaussian::standard(m)};
    const Vec v = standard_normal(rng, m);
    gaussian = std::max(gaussian, std::abs(flow_log_prob(single, v) -
                                           full_log_prob(FullGaussian{alpha, b * b.transpose()}, v)));
  }
  o.check(roundtrip <= 1e-9, "inverse(forward(u)) error = " + num(roundtrip));
  o.check(additivity <= 1e-12, "log-det additivity error = " + num(additivity));

  const FlowStack s1{{AffineFlow(v1(0.5), Mat::Constant(1, 1, -1.7)),
                      AffineFlow(v1(-2.0), Mat::Constant(1, 1, 0.6))},
                     DiagGaussian::from_std(v1(0.2), v1(1.3))};
  const double c1 = flow_forward(s1, s1.base.mean).value[0];
  const double sd1 = 1.3 * 1.7 * 0.6;
  const double mass1 = trapezoid_1d(s1, c1 - 8 * sd1, c1 + 8 * sd1, 4001);

  Mat b2(2, 2);
  b2 << 1.1, 0.0, 0.7, 0.5;
  Mat b3(2, 2);
  b3 << 0.8, -0.3, 0.2, 1.2;
  Vec a2(2), a3(2);
  a2 << 0.3, -0.2;
  a3 << -1.0, 0.4;
  const FlowStack s2{{AffineFlow(a2, b2), AffineFlow(a3, b3)}, DiagGaussian::standard(2)};
  const Vec c2 = flow_forward(s2, Vec::Zero(2)).value;
  const double mass2 = trapezoid_2d(s2, c2, 9.0, 601);
  const double mass_err = std::max(std::abs(mass1 - 1.0), std::abs(mass2 - 1.0));
  o.check(mass_err <= 1e-3, "quadrature mass error = " + num(mass_err));
  o.check(gaussian <= 1e-10, "affine vs Gaussian log-prob = " + num(gaussian));
  return o;
}

// ---- 6 ------------------------------------------------------------------------

Outcome temporal_coding() {
  Outcome o;
  const RowMat ar = gen_ar1(20000, 1, 0.9, 606).samples;
  const RowMat dy = temporal_normalize(TemporalPredictor::previous_frame(1), ar);
  auto variance = [](const RowMat& m) {
    const double mean = m.mean();
    return (m.array() - mean).square().sum() / static_cast<double>(m.size() - 1);
  };
  const double factor = variance(ar) / variance(dy);
  o.check(factor >= 4.0, "AR(1) variance reduction = " + num(factor) + "x");

  const RowMat video = gen_moving_square_video(64, 16, 16, 607).samples;
  const RowMat diff = temporal_normalize(TemporalPredictor::previous_frame(256), video);
  const double sparsity = (diff.array() != 0.0).cast<double>().sum() / static_cast<double>(diff.size());
  o.check(sparsity < 0.05, "moving-square nonzero fraction = " + num(sparsity));

  Rng rng(608);
  const std::array<Index, 3> sizes{6, 5, 3};
  const std::array<Activation, 2> acts{Activation::Tanh, Activation::Identity};
  const std::vector<TemporalPredictor> predictors{
      TemporalPredictor::previous_frame(3, 0.7),
      TemporalPredictor::constant(standard_normal(rng, 3), Vec::Constant(3, 1.5)),
      TemporalPredictor::network(Mlp::random(sizes, acts, rng), Mlp::random(sizes, acts, rng), 2)};
  double roundtrip = 0.0;
  for (const auto& p : predictors) {
    const RowMat x = standard_normal(rng, 40, 3);
    const RowMat back = temporal_denormalize(p, temporal_normalize(p, x), x.topRows(p.context()));
    roundtrip = std::max(roundtrip, (back - x).cwiseAbs().maxCoeff());
  }
  o.check(roundtrip <= 1e-10, "denormalize(normalize(x)) error = " + num(roundtrip));
  return o;
}

// ---- 7 ------------------------------------------------------------------------

Outcome learning() {
  Outcome o;
  const recipes::EmOutcome r = recipes::run_linear_em();
  const double gap = r.truth_log_marginal - r.learned_log_marginal;
  o.check(gap <= 0.05, "held-out log p: truth " + num(r.truth_log_marginal) + ", learned " +
                           num(r.learned_log_marginal) + ", gap " + num(gap) + " nat");
  return o;
}

// ---- 8 ------------------------------------------------------------------------

Outcome amortization(const fs::path& csv_path) {
  Outcome o;
  const recipes::AmortizationOutcome r = recipes::run_amortization();
  const double gap = r.iterative_elbo - r.direct_elbo;
  std::ofstream csv(csv_path);
  csv << "engine,elbo,gap_to_direct\n"
      << "direct," << format_number(r.direct_elbo) << ",0\n"
      << "iterative," << format_number(r.iterative_elbo) << ',' << format_number(gap) << '\n';
  o.check(gap >= 0.0, "mean test ELBO over " + std::to_string(r.n_test) + " points: iterative " +
                          num(r.iterative_elbo) + ", direct " + num(r.direct_elbo) + ", gap " +
                          num(gap) + " (" + csv_path.filename().string() + ")");
  return o;
}

// ---- 9 ------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome reproducibility(const fs::path& root, const fs::path& image) {
  Outcome o;
  using nlohmann::json;
  fs::remove_all(root);
  fs::create_directories(root);
  const json linear_data = {{"source", "linear"}, {"n", 96}, {"n_test", 48}};
  const json linear_model = {{"kind", "linear"}, {"latent_dim", 1}, {"obs_dim", 3}};
  struct Case {
    Command command;
    json config;
  };
  const std::vector<Case> cases{
      {Command::GenData, {{"seed", 1}, {"model", linear_model}, {"data", linear_data}}},
      {Command::Train,
       {{"seed", 2},
        {"model", linear_model},
        {"data", linear_data},
        {"inference", {{"engine", "direct"}}},
        {"training", {{"epochs", 3}}}}},
      {Command::Train,
       {{"seed", 3},
        {"model", {{"kind", "deep"}, {"latent_dims", {2}}, {"obs_dim", 4}, {"hidden", 6}}},
        {"data", {{"source", "deep"}, {"n", 64}, {"n_test", 0}}},
        {"training", {{"epochs", 2}}},
        {"inference", {{"max_steps", 50}}}}},
      {Command::Infer, {{"seed", 4}, {"model", linear_model}, {"data", linear_data}}},
      {Command::EvalElbo, {{"seed", 5}, {"model", linear_model}, {"data", linear_data}}},
      {Command::Whiten,
       {{"seed", 6},
        {"data", {{"source", "patches"}, {"images", {image.string()}}, {"n", 2048}}}}},
      {Command::CompareInference,
       {{"seed", 7},
        {"model", linear_model},
        {"data", linear_data},
        {"inference", {{"encoder_epochs", 3}, {"engine", "iterative"}}}}}};
  int identical = 0;
  std::ostringstream err;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const fs::path cfg = root / ("case" + std::to_string(i) + ".json");
    std::ofstream(cfg) << cases[i].config.dump(2);
    std::string bytes[2];
    bool ok = true;
    for (int run = 0; run < 2; ++run) {
      const fs::path out = root / ("case" + std::to_string(i) + "_run" + std::to_string(run));
      ok = ok && run_experiment({cases[i].command, cfg, {}, out}, err) == kExitOk;
      bytes[run] = slurp(out / "metrics.csv");
    }
    if (ok && !bytes[0].empty() && bytes[0] == bytes[1]) ++identical;
  }
  o.check(identical == static_cast<int>(cases.size()),
          std::to_string(identical) + "/" + std::to_string(cases.size()) +
              " commands produced byte-identical metrics.csv" +
              (err.str().empty() ? "" : " (errors: " + err.str() + ")"));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "predflow_acceptance";
  const fs::path image = argc > 2 ? fs::path(argv[2]) : fs::path(PREDFLOW_TEST_DATA) / "camera.pgm";
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle equivalence (inference)", oracle_inference},
      {"bound and tightness", bound_and_tightness},
      {"gradient correctness", gradient_correctness},
      {"whitening", whitening},
      {"flow correctness", flow_correctness},
      {"temporal coding", temporal_coding},
      {"learning", learning},
      {"amortization ordering", [&] { return amortization(work / "amortization.csv"); }},
      {"reproducibility", [&] { return reproducibility(work / "repro", image); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("threw: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %zu (%s): %s [%.1fs]\n", r.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), r.detail.c_str(), secs);
    std::fflush(stdout);
    failures += r.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
