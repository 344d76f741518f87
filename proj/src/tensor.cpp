#include "predflow/tensor.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>

#include "predflow/errors.hpp"

namespace predflow {

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'F', 'T', 'E', 'N', 'S', 'O', 'R'};
constexpr std::uint32_t kMaxRank = 16;

std::size_t element_count(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<unsigned char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw BadFormat("truncated tensor stream");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(bytes[i]) << (8 * i);
  }
  return value;
}

}  // namespace

void require_dim(long expected, long actual, const char* what) {
  if (expected != actual) {
    throw DimensionMismatch(std::string(what) + ": expected " + std::to_string(expected) +
                            ", got " + std::to_string(actual));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw DimensionMismatch("tensor shape does not match data length");
  }
}

Tensor Tensor::from_matrix(const Eigen::Ref<const RowMat>& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  Eigen::Map<RowMat>(data.data(), m.rows(), m.cols()) = m;
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::move(data));
}

Tensor Tensor::from_vector(const Eigen::Ref<const Vec>& v) {
  return Tensor({static_cast<std::size_t>(v.size())},
                std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::Map<const RowMat> Tensor::matrix() const {
  if (rank() == 1) return {data_.data(), 1, static_cast<Index>(shape_[0])};
  if (rank() != 2) throw DimensionMismatch("matrix view requires a rank-1 or rank-2 tensor");
  return {data_.data(), static_cast<Index>(shape_[0]), static_cast<Index>(shape_[1])};
}

Vec Tensor::vector() const {
  return Eigen::Map<const Vec>(data_.data(), static_cast<Index>(data_.size()));
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw BadFormat("missing PFTENSOR magic");
  const auto rank = get_le<std::uint32_t>(in);
  if (rank > kMaxRank) throw BadFormat("tensor rank too large");
  Tensor::Shape shape(rank);
  for (auto& d : shape) d = get_le<std::uint64_t>(in);
  const std::size_t n = element_count(shape);
  std::vector<double> data(n);
  for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace predflow
