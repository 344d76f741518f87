#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "predflow/types.hpp"

namespace predflow {

// Dense row-major array of doubles. Immutable once constructed.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor from_matrix(const Eigen::Ref<const RowMat>& m);
  static Tensor from_vector(const Eigen::Ref<const Vec>& v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }

  // Rank-2 view (rank-1 tensors are viewed as a single row).
  Eigen::Map<const RowMat> matrix() const;
  Vec vector() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// PFTENSOR binary layout: "PFTENSOR", u32 rank, rank x u64 dims, f64 payload;
// all little-endian.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace predflow
