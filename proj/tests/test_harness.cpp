#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "predflow/harness/datasets.hpp"
#include "predflow/harness/experiments.hpp"
#include "predflow/harness/pgm.hpp"

using namespace predflow;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kData = PREDFLOW_TEST_DATA;
const fs::path kCamera = kData / "camera.pgm";

// Whitening rows from the bundled image put the centre pixel against its
// ring on every interior tile (36 of 36) in the numpy oracle run; the check
// keeps some slack below that.
constexpr double kCenterSurroundThreshold = 0.90;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("predflow_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& j) {
  const fs::path p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PREDFLOW_CLI) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

}  // namespace

// ---- datasets ------------------------------------------------------------------

TEST(Datasets, LinearDatasetIsSeeded) {
  const LinearDataset a = gen_linear_dataset(2, 3, 50, 9), b = gen_linear_dataset(2, 3, 50, 9);
  EXPECT_EQ(a.data.samples, b.data.samples);
  EXPECT_EQ(a.truth.weight, b.truth.weight);
  EXPECT_NE(a.data.samples, gen_linear_dataset(2, 3, 50, 10).data.samples);
  EXPECT_EQ(a.data.samples.rows(), 50);
  EXPECT_EQ(a.data.samples.cols(), 3);
  EXPECT_THROW(gen_linear_dataset(1, 1, 0, 1), DimensionMismatch);
}

TEST(Datasets, UnitModelMarginalVarianceIsTwo) {
  const RowMat x = sample_dataset(LinearGaussianModel::unit(), 100000, 4).samples;
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / static_cast<double>(x.rows() - 1);
  EXPECT_LT(std::abs(var / 2.0 - 1.0), 0.03);
}

TEST(Datasets, TruthScoresBestOnItsOwnSamples) {
  const LinearDataset d = gen_linear_dataset(1, 2, 20000, 5);
  auto mean_ll = [&](const LinearGaussianModel& m) {
    double s = 0;
    for (Index i = 0; i < d.data.samples.rows(); ++i) {
      s += exact_log_marginal(m, d.data.samples.row(i).transpose());
    }
    return s / static_cast<double>(d.data.samples.rows());
  };
  const double truth = mean_ll(d.truth);
  Rng rng(6);
  for (int k = 0; k < 5; ++k) {
    LinearGaussianModel wrong = d.truth;
    wrong.weight += 0.3 * standard_normal(rng, 2, 1);
    wrong.obs_std *= 1.3;
    EXPECT_GT(truth, mean_ll(wrong));
  }
}

TEST(Datasets, MovingSquareDifferencesAreSparse) {
  const Dataset v = gen_moving_square_video(64, 16, 16, 7);
  EXPECT_EQ(v.samples.rows(), 64);
  EXPECT_EQ(v.samples.cols(), 256);
  EXPECT_EQ(v.samples, gen_moving_square_video(64, 16, 16, 7).samples);
  EXPECT_TRUE(((v.samples.array() == 0.0) || (v.samples.array() == 1.0)).all());
  const RowMat y = temporal_normalize(TemporalPredictor::previous_frame(256), v.samples);
  const double nonzero = (y.array() != 0.0).cast<double>().sum();
  // A 4x4 square moving one pixel changes at most two of its edges.
  EXPECT_LE((y.array() != 0.0).rowwise().count().maxCoeff(), 8);
  EXPECT_LT(nonzero / static_cast<double>(y.size()), 0.05);
}

TEST(Datasets, StaticSquareHasNoPredictionError) {
  VideoOptions still;
  still.velocity = 0;
  const Dataset v = gen_moving_square_video(10, 8, 8, 8, still);
  const RowMat y = temporal_normalize(TemporalPredictor::previous_frame(64), v.samples);
  EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
  VideoOptions huge;
  huge.square = 9;
  EXPECT_THROW(gen_moving_square_video(4, 8, 8, 1, huge), DimensionMismatch);
}

TEST(Datasets, PatchesFromBundledImage) {
  const Dataset p = load_patches({kCamera}, 8, 2048, 12);
  EXPECT_EQ(p.samples.cols(), 64);
  EXPECT_EQ(p.samples, load_patches({kCamera}, 8, 2048, 12).samples);
  EXPECT_LT(p.samples.rowwise().mean().cwiseAbs().maxCoeff(), 1e-12);

  const Eigen::SelfAdjointEigenSolver<Mat> eig(sample_covariance(p.samples));
  Vec ev = eig.eigenvalues();
  std::sort(ev.data(), ev.data() + ev.size());
  const double median = 0.5 * (ev[31] + ev[32]);
  EXPECT_GE(ev[63], 5.0 * median);
}

TEST(Datasets, PatchErrors) {
  EXPECT_THROW(load_patches({kData / "missing.pgm"}, 8, 4, 1), IoError);
  EXPECT_THROW(load_patches({kCamera}, 300, 4, 1), DimensionMismatch);
  const fs::path dir = scratch_dir("bad_pgm");
  std::ofstream(dir / "bad.pgm") << "P7\n1 1\n255\n";
  EXPECT_THROW(load_patches({dir / "bad.pgm"}, 1, 1, 1), BadFormat);
}

// ---- PGM ----------------------------------------------------------------------------

TEST(Pgm, BinaryRoundTrip) {
  GrayImage img;
  img.values.resize(3, 4);
  img.values << 0, 1, 2, 3, 100, 101, 102, 103, 252, 253, 254, 255;
  const fs::path dir = scratch_dir("pgm");
  write_pgm(dir / "a.pgm", img);
  const GrayImage back = read_pgm(dir / "a.pgm");
  EXPECT_EQ(back.values, img.values);
  EXPECT_EQ(back.maxval, 255);
}

TEST(Pgm, ReadsAsciiWithComments) {
  const fs::path dir = scratch_dir("pgm_ascii");
  std::ofstream(dir / "a.pgm") << "P2\n# comment\n2 2\n# another\n15\n0 15\n7 3\n";
  const GrayImage img = read_pgm(dir / "a.pgm");
  EXPECT_EQ(img.maxval, 15);
  EXPECT_EQ(img.values(0, 1), 15.0);
  EXPECT_EQ(img.values(1, 0), 7.0);
}

TEST(Pgm, ReadsBundledImage) {
  const GrayImage img = read_pgm(kCamera);
  EXPECT_EQ(img.height(), 256);
  EXPECT_EQ(img.width(), 256);
}

TEST(FilterGrid, IdentityGivesOneWhitePixelPerTile) {
  const Index m = 5;
  const GrayImage g = render_filter_grid(Mat::Identity(m, m), 1, m);
  // ceil(sqrt(5)) = 3 columns, 2 rows of 1x5 tiles, 1-px separators.
  EXPECT_EQ(g.width(), 3 * m + 2);
  EXPECT_EQ(g.height(), 2 * 1 + 1);
  for (Index t = 0; t < m; ++t) {
    const Index r = (t / 3) * 2, c0 = (t % 3) * (m + 1);
    for (Index k = 0; k < m; ++k) EXPECT_EQ(g.values(r, c0 + k), k == t ? 255.0 : 0.0);
  }
}

TEST(FilterGrid, DimensionsFollowGridArithmetic) {
  const GrayImage g = render_filter_grid(Mat::Random(7, 12), 3, 4, 2);
  EXPECT_EQ(g.height(), 4 * 3 + 3);
  EXPECT_EQ(g.width(), 2 * 4 + 1);
  EXPECT_THROW(render_filter_grid(Mat::Random(7, 12), 5, 5), DimensionMismatch);
  EXPECT_EQ(render_filter_grid(Mat::Constant(1, 4, 2.0), 2, 2).values, RowMat::Constant(2, 2, 128.0));
}

TEST(FilterGrid, ZcaFiltersAreCenterSurround) {
  const Dataset p = load_patches({kCamera}, 8, 4096, 13, false);
  const Mat w = fit_zca(p.samples).inverse_scale();
  EXPECT_GE(center_surround_fraction(w, 8, 8), kCenterSurroundThreshold);
  EXPECT_EQ(center_surround_fraction(Mat::Identity(9, 9), 3, 3), 0.0);
}

// ---- config -------------------------------------------------------------------------

TEST(Config, ParsesDefaultsAndOverrides) {
  const ExperimentConfig c = parse_config(json{{"seed", 4}, {"beta", 0.5}}, 9);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.beta, 0.5);
  EXPECT_EQ(c.inference.engine, "pc");
  EXPECT_EQ(c.effective["seed"], 9);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config(json{{"seed", 1}, {"sede", 2}}, {}), ConfigInvalid);
  EXPECT_THROW(parse_config(json{{"seed", 1}, {"model", {{"kind", "linear"}, {"typo", 1}}}}, {}),
               ConfigInvalid);
  EXPECT_THROW(parse_config(json::object(), {}), ConfigInvalid);  // seed is mandatory
  EXPECT_THROW(parse_config(json{{"seed", 1}, {"beta", -1.0}}, {}), ConfigInvalid);
  EXPECT_THROW(parse_config(json{{"seed", "x"}}, {}), ConfigInvalid);
  EXPECT_THROW(parse_config(json{{"seed", 1}, {"inference", {{"engine", "magic"}}}}, {}),
               ConfigInvalid);
}

TEST(RunExperiment, MalformedConfigExitsTwoWithoutOutputs) {
  const fs::path dir = scratch_dir("malformed");
  const fs::path cfg = dir / "bad.json";
  std::ofstream(cfg) << "{ \"seed\": 1, ";
  std::ostringstream err;
  EXPECT_EQ(run_experiment({Command::GenData, cfg, {}, dir / "out"}, err), kExitConfig);
  EXPECT_FALSE(err.str().empty());
  const fs::path cfg2 = write_config(dir, "unknown.json", {{"seed", 1}, {"epochz", 3}});
  EXPECT_EQ(run_experiment({Command::Train, cfg2, {}, dir / "out"}, err), kExitConfig);
  EXPECT_FALSE(fs::exists(dir / "out"));
  EXPECT_FALSE(fs::exists(dir / ".out.partial"));
}

TEST(RunExperiment, RuntimeFailureLeavesNothing) {
  const fs::path dir = scratch_dir("runtime_fail");
  const fs::path cfg = write_config(
      dir, "c.json", {{"seed", 1}, {"data", {{"source", "tensor"}, {"path", "nowhere.tensor"}}},
                      {"whitening", {{"method", "zca"}}}});
  std::ostringstream err;
  EXPECT_EQ(run_experiment({Command::Whiten, cfg, {}, dir / "out"}, err), kExitRuntime);
  EXPECT_FALSE(fs::exists(dir / "out"));
  EXPECT_FALSE(fs::exists(dir / ".out.partial"));
}

TEST(RunExperiment, AmortizedEngineWithoutCheckpointIsAConfigError) {
  const fs::path dir = scratch_dir("no_ckpt");
  const fs::path cfg = write_config(
      dir, "c.json", {{"seed", 1}, {"model", {{"obs_dim", 2}}}, {"inference", {{"engine", "direct"}}}});
  std::ostringstream err;
  EXPECT_EQ(run_experiment({Command::Infer, cfg, {}, dir / "out"}, err), kExitConfig);
}

// ---- CLI end to end -------------------------------------------------------------------

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli("train"), 2);
  EXPECT_EQ(run_cli("frobnicate --config x.json"), 2);
  EXPECT_EQ(run_cli("train --config /nonexistent/config.json --out /tmp/predflow_never"), 2);
  EXPECT_FALSE(fs::exists("/tmp/predflow_never"));
}

TEST(Cli, TrainIsByteReproducible) {
  const fs::path dir = scratch_dir("repro");
  const fs::path cfg = write_config(
      dir, "c.json",
      {{"seed", 21},
       {"model", {{"kind", "linear"}, {"latent_dim", 1}, {"obs_dim", 3}}},
       {"data", {{"source", "linear"}, {"n", 128}, {"n_test", 64}}},
       {"inference", {{"engine", "iterative"}, {"n_iters", 3}}},
       {"training", {{"epochs", 4}, {"batch_size", 32}}}});
  const std::string base = "train --config " + cfg.string() + " --out ";
  ASSERT_EQ(run_cli(base + (dir / "a").string()), 0);
  ASSERT_EQ(run_cli(base + (dir / "b").string()), 0);
  EXPECT_EQ(slurp(dir / "a" / "metrics.csv"), slurp(dir / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "a" / "model.ckpt"), slurp(dir / "b" / "model.ckpt"));
  EXPECT_EQ(slurp(dir / "a" / "metrics.csv").substr(0, 31), "step,elbo,recon,kl,grad_norm\n1,");
  EXPECT_TRUE(fs::exists(dir / "a" / "config.json"));
  ASSERT_EQ(run_cli(base + (dir / "c").string() + " --seed 22"), 0);
  EXPECT_NE(slurp(dir / "a" / "metrics.csv"), slurp(dir / "c" / "metrics.csv"));
  EXPECT_EQ(read_json(dir / "c" / "config.json")["seed"], 22);
}

TEST(Cli, GenDataThenEvalFromCheckpoint) {
  const fs::path dir = scratch_dir("gen_eval");
  const fs::path gen = write_config(dir, "gen.json",
                                    {{"seed", 2},
                                     {"model", {{"latent_dim", 1}, {"obs_dim", 2}}},
                                     {"data", {{"n", 32}, {"n_test", 16}}}});
  ASSERT_EQ(run_cli("gen-data --config " + gen.string() + " --out " + (dir / "gen").string()), 0);
  EXPECT_EQ(load_tensor(dir / "gen" / "data.tensor").matrix().rows(), 32);
  const fs::path eval = write_config(
      dir, "eval.json",
      {{"seed", 3},
       {"checkpoint", "gen/truth.ckpt"},
       {"data", {{"source", "tensor"}, {"path", "gen/test.tensor"}}}});
  ASSERT_EQ(run_cli("eval-elbo --config " + eval.string() + " --out " + (dir / "eval").string()), 0);
  const json s = read_json(dir / "eval" / "summary.json");
  EXPECT_EQ(s["n"], 16);
  EXPECT_NEAR(s["mean_elbo"].get<double>(), s["mean_exact_log_marginal"].get<double>(), 1e-6);
  ASSERT_EQ(run_cli("infer --config " + eval.string() + " --out " + (dir / "infer").string()), 0);
  EXPECT_EQ(load_tensor(dir / "infer" / "posterior.tensor").matrix().cols(), 2);
}

TEST(Cli, WhitenEmitsIdentityCovarianceAndFilters) {
  const fs::path dir = scratch_dir("whiten");
  for (const std::string method : {"zca", "cholesky"}) {
    const fs::path cfg = write_config(
        dir, method + ".json",
        {{"seed", 5},
         {"data", {{"source", "patches"}, {"images", {kCamera.string()}}, {"n", 4096}}},
         {"whitening", {{"method", method}}}});
    const fs::path out = dir / method;
    ASSERT_EQ(run_cli("whiten --config " + cfg.string() + " --out " + out.string()), 0);
    const json r = read_json(out / "whiten.json");
    EXPECT_LE(r["max_abs_cov_error"].get<double>(), 1e-8);
    const GrayImage grid = read_pgm(out / "filters.pgm");
    EXPECT_EQ(grid.height(), 8 * 8 + 7);
    if (method == "zca") {
      EXPECT_LE(r["max_asymmetry"].get<double>(), 1e-10);
      EXPECT_GE(r["center_surround_fraction"].get<double>(), kCenterSurroundThreshold);
    } else {
      EXPECT_EQ(r["max_upper_entry"].get<double>(), 0.0);
    }
  }
}

TEST(Cli, CompareInferenceOnLinearFixture) {
  const fs::path dir = scratch_dir("compare");
  const fs::path cfg = write_config(
      dir, "c.json",
      {{"seed", 3},
       {"model", {{"kind", "linear"}, {"latent_dim", 1}, {"obs_dim", 4}}},
       {"data", {{"source", "linear"}, {"n", 256}, {"n_test", 128}}},
       {"inference", {{"encoder_epochs", 10}}}});
  ASSERT_EQ(run_cli("compare-inference --config " + cfg.string() + " --out " + (dir / "o").string()), 0);
  std::istringstream csv(slurp(dir / "o" / "comparison.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "engine,elbo,exact,gap_to_exact,gap_to_direct");
  std::map<std::string, std::vector<double>> rows;
  while (std::getline(csv, line)) {
    std::istringstream f(line);
    std::string name, cell;
    std::getline(f, name, ',');
    while (std::getline(f, cell, ',')) rows[name].push_back(std::stod(cell));
  }
  ASSERT_EQ(rows.size(), 3u);
  const double exact = rows["pc"][1];
  EXPECT_NEAR(rows["pc"][0], exact, 1e-6);
  for (const auto& [name, r] : rows) {
    EXPECT_LE(r[0], exact + 1e-9) << name;
    EXPECT_LE(r[0], rows["pc"][0] + 1e-9) << name;
  }
  EXPECT_TRUE(fs::exists(dir / "o" / "iterative.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "o" / "direct_training.csv"));
}
