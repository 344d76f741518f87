#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "predflow/rng.hpp"
#include "predflow/types.hpp"

namespace predflow {

enum class Activation { Identity, Tanh, Logistic, Softplus };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

// Elementwise activation and its derivative expressed through the
// pre-activation `pre` and the output `out` (whichever is cheaper).
Vec activate(Activation a, const Vec& pre);
Vec activation_derivative(Activation a, const Vec& pre, const Vec& out);

struct Layer {
  Mat weight;  // out x in
  Vec bias;    // out
  Activation activation = Activation::Identity;
};

// Feed-forward stack y = f_L(W_L ... f_1(W_1 x + b_1) ... + b_L).
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<Layer> layers);

  // sizes = {in, h1, ..., out}; one activation per layer. Weights and biases
  // are drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static Mlp random(std::span<const Index> sizes, std::span<const Activation> activations,
                    Rng& rng);

  Index input_dim() const;
  Index output_dim() const;
  std::size_t depth() const { return layers_.size(); }
  Index parameter_count() const;

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }

  Vec flatten() const;
  void assign(const Vec& flat);

 private:
  std::vector<Layer> layers_;
};

// Gradients mirroring an Mlp's parameter shapes plus the input gradient.
struct GradientBundle {
  std::vector<Mat> weight;
  std::vector<Vec> bias;
  Vec input;

  static GradientBundle zeros_like(const Mlp& net);
  GradientBundle& operator+=(const GradientBundle& other);
  GradientBundle& operator*=(double k);
  // Parameter gradients in Mlp::flatten() order (input gradient excluded).
  Vec flatten() const;
};

// Per-layer outputs of one forward pass: activations[0] is the input.
struct ForwardCache {
  std::vector<Vec> pre;
  std::vector<Vec> activations;
};

Vec mlp_forward(const Mlp& net, const Vec& x);
Vec mlp_forward(const Mlp& net, const Vec& x, ForwardCache& cache);

// Vector-Jacobian product: gradient of <upstream, mlp_forward(net, x)> with
// respect to every weight, bias and the input.
GradientBundle mlp_backward(const Mlp& net, const Vec& x, const Vec& upstream);
GradientBundle mlp_backward(const Mlp& net, const ForwardCache& cache, const Vec& upstream);

// Worst relative error between mlp_backward and central differences of the
// loss 0.5 * ||mlp_forward(net, x)||^2, over all parameters and inputs.
double finite_diff_check(const Mlp& net, const Vec& x, double h);

}  // namespace predflow
