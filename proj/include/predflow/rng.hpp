#pragma once

#include <cstdint>

#include "predflow/tensor.hpp"
#include "predflow/types.hpp"

namespace predflow {

// Counter-based generator: the n-th draw is a SplitMix64 hash of (key, n),
// so a stream is fully determined by its seed and can be split into
// independent child streams without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

  // Child stream keyed on `stream`; does not advance this generator.
  Rng split(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Tensor sample_std_normal(Rng& rng, const Tensor::Shape& shape);
Vec standard_normal(Rng& rng, Index n);
Mat standard_normal(Rng& rng, Index rows, Index cols);

}  // namespace predflow
