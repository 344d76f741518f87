#pragma once

#include <cmath>

#include "predflow/errors.hpp"
#include "predflow/types.hpp"

namespace predflow {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam on a flat parameter vector, ascending the supplied gradient.
class Adam {
 public:
  Adam(Index n, AdamOptions options)
      : options_(options), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

  void ascend(Vec& params, const Vec& grad) {
    require_dim(m_.size(), params.size(), "adam parameters");
    require_dim(m_.size(), grad.size(), "adam gradient");
    ++t_;
    m_ = options_.beta1 * m_ + (1.0 - options_.beta1) * grad;
    v_ = options_.beta2 * v_ + (1.0 - options_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    params.array() += options_.learning_rate * (m_.array() / c1) /
                      ((v_.array() / c2).sqrt() + options_.epsilon);
  }

  long steps() const { return t_; }

 private:
  AdamOptions options_;
  Vec m_;
  Vec v_;
  long t_ = 0;
};

}  // namespace predflow
