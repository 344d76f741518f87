#include "predflow/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "predflow/errors.hpp"

namespace predflow {

namespace {

// Denominator floor for relative gradient errors; keeps near-zero gradients
// from turning rounding noise into large ratios.
constexpr double kRelativeErrorFloor = 1e-3;

double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }
double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Logistic: return "logistic";
    case Activation::Softplus: return "softplus";
  }
  return "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "tanh") return Activation::Tanh;
  if (name == "logistic") return Activation::Logistic;
  if (name == "softplus") return Activation::Softplus;
  throw BadFormat("unknown activation '" + std::string(name) + "'");
}

Vec activate(Activation a, const Vec& pre) {
  switch (a) {
    case Activation::Identity: return pre;
    case Activation::Tanh: return pre.array().tanh();
    case Activation::Logistic: return pre.unaryExpr(&logistic);
    case Activation::Softplus: return pre.unaryExpr(&softplus);
  }
  return pre;
}

Vec activation_derivative(Activation a, const Vec& pre, const Vec& out) {
  switch (a) {
    case Activation::Identity: return Vec::Ones(pre.size());
    case Activation::Tanh: return 1.0 - out.array().square();
    case Activation::Logistic: return out.array() * (1.0 - out.array());
    // d softplus / dx = logistic(x)
    case Activation::Softplus: return pre.unaryExpr(&logistic);
  }
  return Vec::Ones(pre.size());
}

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    require_dim(l.weight.rows(), l.bias.size(), "layer bias");
    if (i > 0) require_dim(layers_[i - 1].weight.rows(), l.weight.cols(), "layer chaining");
  }
}

Mlp Mlp::random(std::span<const Index> sizes, std::span<const Activation> activations,
                Rng& rng) {
  if (sizes.size() < 2) throw DimensionMismatch("an Mlp needs at least one layer");
  require_dim(static_cast<long>(sizes.size() - 1), static_cast<long>(activations.size()),
              "activation count");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const Index fan_in = sizes[i];
    const Index fan_out = sizes[i + 1];
    const double s = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan_in, 1)));
    Layer l{Mat(fan_out, fan_in), Vec(fan_out), activations[i]};
    for (Index r = 0; r < fan_out; ++r) {
      for (Index c = 0; c < fan_in; ++c) l.weight(r, c) = rng.uniform(-s, s);
    }
    for (Index r = 0; r < fan_out; ++r) l.bias[r] = rng.uniform(-s, s);
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers));
}

Index Mlp::input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.cols(); }
Index Mlp::output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.rows(); }

Index Mlp::parameter_count() const {
  Index n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

// Layout: for each layer, weight (column-major) then bias.
Vec Mlp::flatten() const {
  Vec flat(parameter_count());
  Index k = 0;
  for (const auto& l : layers_) {
    flat.segment(k, l.weight.size()) = l.weight.reshaped();
    k += l.weight.size();
    flat.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return flat;
}

void Mlp::assign(const Vec& flat) {
  require_dim(parameter_count(), flat.size(), "flat parameter vector");
  Index k = 0;
  for (auto& l : layers_) {
    l.weight.reshaped() = flat.segment(k, l.weight.size());
    k += l.weight.size();
    l.bias = flat.segment(k, l.bias.size());
    k += l.bias.size();
  }
}

GradientBundle GradientBundle::zeros_like(const Mlp& net) {
  GradientBundle g;
  for (const auto& l : net.layers()) {
    g.weight.push_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vec::Zero(l.bias.size()));
  }
  g.input = Vec::Zero(net.input_dim());
  return g;
}

GradientBundle& GradientBundle::operator+=(const GradientBundle& other) {
  require_dim(static_cast<long>(weight.size()), static_cast<long>(other.weight.size()),
              "gradient bundle depth");
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i] += other.weight[i];
    bias[i] += other.bias[i];
  }
  input += other.input;
  return *this;
}

GradientBundle& GradientBundle::operator*=(double k) {
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i] *= k;
    bias[i] *= k;
  }
  input *= k;
  return *this;
}

Vec GradientBundle::flatten() const {
  Index n = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) n += weight[i].size() + bias[i].size();
  Vec flat(n);
  Index k = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    flat.segment(k, weight[i].size()) = weight[i].reshaped();
    k += weight[i].size();
    flat.segment(k, bias[i].size()) = bias[i];
    k += bias[i].size();
  }
  return flat;
}

Vec mlp_forward(const Mlp& net, const Vec& x, ForwardCache& cache) {
  require_dim(net.input_dim(), x.size(), "mlp input");
  cache.pre.clear();
  cache.activations.clear();
  cache.activations.push_back(x);
  for (const auto& l : net.layers()) {
    Vec pre = l.weight * cache.activations.back() + l.bias;
    cache.activations.push_back(activate(l.activation, pre));
    cache.pre.push_back(std::move(pre));
  }
  return cache.activations.back();
}

Vec mlp_forward(const Mlp& net, const Vec& x) {
  ForwardCache cache;
  return mlp_forward(net, x, cache);
}

GradientBundle mlp_backward(const Mlp& net, const ForwardCache& cache, const Vec& upstream) {
  require_dim(net.output_dim(), upstream.size(), "mlp upstream");
  const auto& layers = net.layers();
  GradientBundle g;
  g.weight.resize(layers.size());
  g.bias.resize(layers.size());
  Vec delta = upstream;
  for (std::size_t i = layers.size(); i-- > 0;) {
    // dL/dpre = dL/dout * f'(pre); dW = dpre x^T; db = dpre; dx = W^T dpre.
    delta.array() *=
        activation_derivative(layers[i].activation, cache.pre[i], cache.activations[i + 1])
            .array();
    g.weight[i] = delta * cache.activations[i].transpose();
    g.bias[i] = delta;
    delta = layers[i].weight.transpose() * delta;
  }
  g.input = std::move(delta);
  return g;
}

GradientBundle mlp_backward(const Mlp& net, const Vec& x, const Vec& upstream) {
  ForwardCache cache;
  mlp_forward(net, x, cache);
  return mlp_backward(net, cache, upstream);
}

double finite_diff_check(const Mlp& net, const Vec& x, double h) {
  if (!(h > 0.0)) throw DimensionMismatch("finite difference step must be positive");
  const auto loss = [](const Mlp& n, const Vec& input) {
    return 0.5 * mlp_forward(n, input).squaredNorm();
  };
  const Vec out = mlp_forward(net, x);
  const GradientBundle analytic = mlp_backward(net, x, out);

  const auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kRelativeErrorFloor});
  };
  double worst = 0.0;

  const Vec params = net.flatten();
  const Vec analytic_params = analytic.flatten();
  Mlp probe = net;
  for (Index i = 0; i < params.size(); ++i) {
    Vec p = params;
    p[i] = params[i] + h;
    probe.assign(p);
    const double up = loss(probe, x);
    p[i] = params[i] - h;
    probe.assign(p);
    const double down = loss(probe, x);
    worst = std::max(worst, rel((up - down) / (2.0 * h), analytic_params[i]));
  }
  for (Index i = 0; i < x.size(); ++i) {
    Vec xp = x;
    xp[i] = x[i] + h;
    const double up = loss(net, xp);
    xp[i] = x[i] - h;
    const double down = loss(net, xp);
    worst = std::max(worst, rel((up - down) / (2.0 * h), analytic.input[i]));
  }
  return worst;
}

}  // namespace predflow
