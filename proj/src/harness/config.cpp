#include "predflow/harness/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace predflow {

using nlohmann::json;

DeepFixtureSpec ModelSpec::deep_spec() const {
  return {latent_dims, obs_dim, hidden, activation, obs_std, gain};
}

namespace {

// Reads the keys of one JSON object and remembers which were consumed, so
// anything left over is reported as unknown.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail("must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  void read(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(std::string("'") + key + "' has the wrong type");
    }
  }

  template <class T>
  void read(const char* key, std::optional<T>& out) {
    T v{};
    if (!j_.contains(key)) {
      used_.insert(key);
      return;
    }
    read(key, v);
    out = v;
  }

  const json* child(const char* key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) fail("unknown key '" + k + "'");
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigInvalid(where_ + ": " + msg);
  }

  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

void positive(const Section& s, long v, const char* key) {
  if (v < 1) s.fail(std::string("'") + key + "' must be positive");
}

void positive_real(const Section& s, double v, const char* key) {
  if (!(v > 0.0)) s.fail(std::string("'") + key + "' must be positive");
}

Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size()));
}

Activation activation_of(const Section& s, const std::string& name) {
  try {
    return activation_from_string(name);
  } catch (const Error&) {
    s.fail("unknown activation '" + name + "'");
  }
}

ModelSpec parse_model(const json& j) {
  Section s(j, "model");
  ModelSpec m;
  std::string act = std::string(to_string(m.activation));
  s.read("kind", m.kind);
  s.read("latent_dim", m.latent_dim);
  s.read("latent_dims", m.latent_dims);
  s.read("obs_dim", m.obs_dim);
  s.read("hidden", m.hidden);
  s.read("activation", act);
  s.read("obs_std", m.obs_std);
  s.read("gain", m.gain);
  s.read("init_scale", m.init_scale);
  s.finish();
  m.activation = activation_of(s, act);
  if (m.kind != "linear" && m.kind != "deep") s.fail("kind must be 'linear' or 'deep'");
  positive(s, m.latent_dim, "latent_dim");
  positive(s, m.obs_dim, "obs_dim");
  positive(s, m.hidden, "hidden");
  if (m.latent_dims.empty()) s.fail("'latent_dims' must not be empty");
  for (Index d : m.latent_dims) positive(s, d, "latent_dims");
  positive_real(s, m.obs_std, "obs_std");
  if (!(m.init_scale >= 0.0)) s.fail("'init_scale' must be non-negative");
  return m;
}

LinearGaussianModel parse_truth(const json& j, const ModelSpec& model) {
  Section s(j, "data.truth");
  std::vector<std::vector<double>> w;
  std::vector<double> b, obs, pm, ps;
  s.read("weight", w);
  s.read("bias", b);
  s.read("obs_std", obs);
  s.read("prior_mean", pm);
  s.read("prior_std", ps);
  s.finish();
  if (w.empty() || w.front().empty()) s.fail("'weight' must be a non-empty matrix");
  const auto rows = static_cast<Index>(w.size());
  const auto cols = static_cast<Index>(w.front().size());
  if (rows != model.obs_dim || cols != model.latent_dim) {
    s.fail("'weight' must be obs_dim x latent_dim as given in the model section");
  }
  LinearGaussianModel t;
  t.weight.resize(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (static_cast<Index>(w[r].size()) != cols) s.fail("'weight' rows differ in length");
    for (Index c = 0; c < cols; ++c) t.weight(r, c) = w[r][c];
  }
  auto vec_or = [&](const std::vector<double>& v, Index n, double fill, const char* key) {
    if (v.empty()) return Vec(Vec::Constant(n, fill));
    if (static_cast<Index>(v.size()) != n) s.fail(std::string("'") + key + "' has the wrong length");
    return to_vec(v);
  };
  t.bias = vec_or(b, rows, 0.0, "bias");
  t.obs_std = vec_or(obs, rows, 1.0, "obs_std");
  t.prior_mean = vec_or(pm, cols, 0.0, "prior_mean");
  t.prior_std = vec_or(ps, cols, 1.0, "prior_std");
  if ((t.obs_std.array() <= 0.0).any() || (t.prior_std.array() <= 0.0).any()) {
    s.fail("standard deviations must be positive");
  }
  return t;
}

DataSpec parse_data(const json& j, const ModelSpec& model, const std::filesystem::path& base) {
  Section s(j, "data");
  DataSpec d;
  std::vector<std::string> images;
  std::string path;
  s.read("source", d.source);
  s.read("n", d.n);
  s.read("n_test", d.n_test);
  if (const json* t = s.child("truth")) d.truth = parse_truth(*t, model);
  s.read("images", images);
  s.read("patch_size", d.patch_size);
  s.read("remove_patch_mean", d.remove_patch_mean);
  s.read("frames", d.frames);
  s.read("height", d.height);
  s.read("width", d.width);
  s.read("square", d.video.square);
  s.read("velocity", d.video.velocity);
  s.read("length", d.length);
  s.read("dim", d.dim);
  s.read("rho", d.rho);
  s.read("path", path);
  s.finish();

  static const std::set<std::string> kSources{"linear", "deep", "patches", "video", "ar1",
                                              "tensor"};
  if (!kSources.count(d.source)) s.fail("unknown source '" + d.source + "'");
  positive(s, d.n, "n");
  if (d.n_test < 0) s.fail("'n_test' must be non-negative");
  positive(s, d.patch_size, "patch_size");
  positive(s, d.frames, "frames");
  positive(s, d.height, "height");
  positive(s, d.width, "width");
  positive(s, d.video.square, "square");
  positive(s, d.length, "length");
  positive(s, d.dim, "dim");
  if (!(std::abs(d.rho) < 1.0)) s.fail("'rho' must lie in (-1, 1)");
  if (d.truth && d.source != "linear") s.fail("'truth' applies to the linear source only");
  if (d.source == "linear" && model.kind != "linear") s.fail("linear source needs a linear model");
  if (d.source == "deep" && model.kind != "deep") s.fail("deep source needs a deep model");
  if (d.source == "patches" && images.empty()) s.fail("patch source needs 'images'");
  if (d.source == "video" && (d.video.square > d.height || d.video.square > d.width)) {
    s.fail("square does not fit the frame");
  }
  if (d.source == "tensor" && path.empty()) s.fail("tensor source needs 'path'");
  for (const auto& img : images) d.images.push_back(base / img);
  if (!path.empty()) d.path = base / path;
  return d;
}

InferenceSpec parse_inference(const json& j) {
  Section s(j, "inference");
  InferenceSpec i;
  std::string mode = std::string(to_string(i.mode));
  s.read("engine", i.engine);
  s.read("step", i.ascent.step);
  s.read("max_steps", i.ascent.max_steps);
  s.read("tol", i.ascent.tol);
  s.read("backtracking", i.ascent.backtracking);
  s.read("max_halvings", i.ascent.max_halvings);
  s.read("analytic", i.analytic);
  s.read("n_samples", i.n_samples);
  s.read("fix_scale", i.fix_scale);
  s.read("mode", mode);
  s.read("n_iters", i.n_iters);
  s.read("hidden", i.hidden);
  s.read("encoder_epochs", i.encoder_epochs);
  s.read("encoder_batch", i.encoder_batch);
  s.read("encoder_lr", i.encoder_lr);
  s.read("eval_samples", i.eval_samples);
  s.finish();
  if (i.engine != "pc" && i.engine != "direct" && i.engine != "iterative") {
    s.fail("engine must be 'pc', 'direct' or 'iterative'");
  }
  if (mode != "gradient" && mode != "error") s.fail("mode must be 'gradient' or 'error'");
  i.mode = iterative_mode_from_string(mode);
  positive_real(s, i.ascent.step, "step");
  positive(s, i.ascent.max_steps, "max_steps");
  if (!(i.ascent.tol >= 0.0)) s.fail("'tol' must be non-negative");
  if (i.ascent.max_halvings < 0) s.fail("'max_halvings' must be non-negative");
  positive(s, i.n_samples, "n_samples");
  positive(s, i.n_iters, "n_iters");
  positive(s, i.hidden, "hidden");
  if (i.encoder_epochs < 0) s.fail("'encoder_epochs' must be non-negative");
  positive(s, i.encoder_batch, "encoder_batch");
  positive_real(s, i.encoder_lr, "encoder_lr");
  positive(s, i.eval_samples, "eval_samples");
  return i;
}

TrainingSpec parse_training(const json& j) {
  Section s(j, "training");
  TrainingSpec t;
  std::string m_step = std::string(to_string(t.m_step));
  s.read("epochs", t.epochs);
  s.read("batch_size", t.batch_size);
  s.read("learn_rate", t.learn_rate);
  s.read("m_step", m_step);
  s.read("n_samples", t.n_samples);
  s.read("learn_prior", t.learn_prior);
  s.finish();
  try {
    t.m_step = m_step_from_string(m_step);
  } catch (const Error&) {
    s.fail("m_step must be 'analytic', 'sampled' or 'local'");
  }
  positive(s, t.epochs, "epochs");
  positive(s, t.batch_size, "batch_size");
  if (!(t.learn_rate >= 0.0)) s.fail("'learn_rate' must be non-negative");
  positive(s, t.n_samples, "n_samples");
  return t;
}

WhitenSpec parse_whitening(const json& j) {
  Section s(j, "whitening");
  WhitenSpec w;
  s.read("method", w.method);
  s.read("filter_grid", w.filter_grid);
  s.finish();
  if (w.method != "zca" && w.method != "cholesky") s.fail("method must be 'zca' or 'cholesky'");
  return w;
}

}  // namespace

ExperimentConfig parse_config(const json& j, std::optional<std::uint64_t> seed_override,
                              const std::filesystem::path& base_dir) {
  Section s(j, "config");
  ExperimentConfig c;
  c.effective = j;
  std::optional<std::uint64_t> seed;
  std::string checkpoint, output_dir, description;
  s.read("seed", seed);
  s.read("beta", c.beta);
  s.read("description", description);
  s.read("checkpoint", checkpoint);
  s.read("output_dir", output_dir);
  if (const json* m = s.child("model")) c.model = parse_model(*m);
  if (const json* d = s.child("data")) c.data = parse_data(*d, c.model, base_dir);
  if (const json* i = s.child("inference")) c.inference = parse_inference(*i);
  if (const json* t = s.child("training")) c.training = parse_training(*t);
  if (const json* w = s.child("whitening")) c.whitening = parse_whitening(*w);
  s.finish();
  if (seed_override) seed = seed_override;
  if (!seed) s.fail("'seed' is required (or pass --seed)");
  c.seed = *seed;
  c.effective["seed"] = c.seed;
  if (!(c.beta >= 0.0)) s.fail("'beta' must be non-negative");
  if (!checkpoint.empty()) c.checkpoint = base_dir / checkpoint;
  if (!output_dir.empty()) c.output_dir = base_dir / output_dir;
  if (c.inference.analytic.value_or(false) && c.model.kind != "linear") {
    s.fail("analytic ELBO needs a linear model");
  }
  if (c.training.m_step != MStepEstimator::Sampled && c.model.kind != "linear") {
    s.fail("deep models need the sampled M-step");
  }

  // Data width must agree with the model wherever both are known up front.
  std::optional<Index> width;
  const DataSpec& d = c.data;
  if (d.source == "patches") width = d.patch_size * d.patch_size;
  if (d.source == "video") width = d.height * d.width;
  if (d.source == "ar1") width = d.dim;
  if (width && j.contains("model") && *width != c.model.obs_dim) {
    s.fail("model.obs_dim does not match the data width " + std::to_string(*width));
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigInvalid(path.string() + ": " + e.what());
  }
  return parse_config(j, seed_override, path.parent_path());
}

}  // namespace predflow
