#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "predflow/errors.hpp"
#include "predflow/linalg.hpp"
#include "predflow/parallel.hpp"
#include "predflow/rng.hpp"
#include "predflow/tensor.hpp"

using namespace predflow;

namespace {

Mat random_spd(Index n, Rng& rng) {
  const Mat m = standard_normal(rng, n, n);
  return m.transpose() * m + Mat::Identity(n, n);
}

}  // namespace

TEST(Tensor, RejectsSizeMismatch) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionMismatch);
}

TEST(Tensor, MatrixViewIsRowMajor) {
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.matrix()(1, 0), 4.0);
  EXPECT_EQ(t.matrix()(0, 2), 3.0);
}

TEST(Tensor, BinaryRoundTripIsExact) {
  Rng rng(3);
  const Tensor t = sample_std_normal(rng, {4, 5, 2});
  std::stringstream buf;
  write_tensor(buf, t);
  EXPECT_EQ(buf.str().substr(0, 8), "PFTENSOR");
  EXPECT_EQ(buf.str().size(), 8u + 4u + 3u * 8u + 40u * 8u);
  EXPECT_EQ(read_tensor(buf), t);
}

TEST(Tensor, ReadRejectsBadMagicAndTruncation) {
  std::stringstream bad("NOTATENSOR000000");
  EXPECT_THROW(read_tensor(bad), BadFormat);

  std::stringstream buf;
  write_tensor(buf, Tensor({3}, {1, 2, 3}));
  std::string bytes = buf.str();
  bytes.resize(bytes.size() - 4);
  std::stringstream cut(bytes);
  EXPECT_THROW(read_tensor(cut), BadFormat);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  EXPECT_EQ(sample_std_normal(a, {100}), sample_std_normal(b, {100}));
}

TEST(Rng, SplitStreamsDiffer) {
  const Rng root(7);
  Rng a = root.split(0), b = root.split(1), a2 = root.split(0);
  EXPECT_NE(a.next_u64(), b.next_u64());
  EXPECT_EQ(root.split(0).next_u64(), a2.next_u64());
}

TEST(Rng, EmptyShapeIsRejected) {
  Rng rng(1);
  EXPECT_THROW(sample_std_normal(rng, {}), DimensionMismatch);
}

TEST(Rng, NormalMoments) {
  Rng rng(42);
  const Tensor t = sample_std_normal(rng, {100000});
  const Vec v = t.vector();
  const double mean = v.mean();
  const double var = (v.array() - mean).square().sum() / (v.size() - 1);
  EXPECT_LT(std::abs(mean), 0.02);
  EXPECT_LT(std::abs(var - 1.0), 0.03);
}

TEST(Rng, UniformStaysInOpenInterval) {
  Rng rng(9);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Cholesky, Examples) {
  EXPECT_DOUBLE_EQ(cholesky(Mat::Constant(1, 1, 4.0))(0, 0), 2.0);
  EXPECT_TRUE(cholesky(Mat::Identity(2, 2)).isApprox(Mat::Identity(2, 2)));
  Mat a(2, 2);
  a << 1, 0.5, 0.5, 1;
  const Mat l = cholesky(a);
  EXPECT_NEAR(l(0, 0), 1.0, 1e-15);
  EXPECT_EQ(l(0, 1), 0.0);
  EXPECT_NEAR(l(1, 0), 0.5, 1e-15);
  EXPECT_NEAR(l(1, 1), 0.8660254037844386, 1e-15);
}

TEST(Cholesky, ReconstructsRandomSpd) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat a = random_spd(1 + trial % 6, rng);
    const Mat l = cholesky(a);
    EXPECT_LT((l * l.transpose() - a).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_TRUE((l.diagonal().array() > 0).all());
    EXPECT_EQ(l.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Cholesky, RejectsIndefiniteAndAsymmetric) {
  Mat a(2, 2);
  a << 1, 2, 2, 1;
  EXPECT_THROW(cholesky(a), NotPositiveDefinite);
  Mat b(2, 2);
  b << 2, 0.1, 0.0, 2;
  EXPECT_THROW(cholesky(b), NotPositiveDefinite);
  EXPECT_THROW(cholesky(Mat::Zero(2, 3)), DimensionMismatch);
}

TEST(SymInvSqrt, Examples) {
  EXPECT_TRUE(sym_inv_sqrt(Mat::Identity(2, 2)).isApprox(Mat::Identity(2, 2)));
  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 4.0;
  d(1, 1) = 0.25;
  const Mat w = sym_inv_sqrt(d);
  EXPECT_NEAR(w(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(w(1, 1), 2.0, 1e-14);
  EXPECT_NEAR(w(0, 1), 0.0, 1e-14);
  Mat a = Mat::Zero(2, 2);
  a(0, 0) = 2.0;
  a(1, 1) = 0.5;
  const Mat w2 = sym_inv_sqrt(a);
  EXPECT_NEAR(w2(0, 0), 0.7071067811865475, 1e-12);
  EXPECT_NEAR(w2(1, 1), 1.414213562373095, 1e-12);
}

TEST(SymInvSqrt, SymmetricAndWhitens) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + trial % 8;
    const Mat a = random_spd(n, rng);
    const Mat w = sym_inv_sqrt(a);
    EXPECT_EQ((w - w.transpose()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LT((w * a * w - Mat::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-8);
    const Mat r = sym_sqrt(a);
    EXPECT_LT((r * r - a).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(SymInvSqrt, RejectsNonPositiveEigenvalue) {
  Mat a(2, 2);
  a << 1, 1, 1, 1;
  EXPECT_THROW(sym_inv_sqrt(a), NotPositiveDefinite);
}

TEST(Logdet, Examples) {
  EXPECT_NEAR(logdet(Mat::Identity(3, 3)), 0.0, 1e-15);
  EXPECT_NEAR(logdet(Mat(2.0 * Mat::Identity(2, 2))), 1.3862943611198906, 1e-14);
  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 2;
  d(1, 1) = 3;
  EXPECT_NEAR(logdet(d), 1.791759469228055, 1e-14);
}

TEST(Logdet, MatchesCofactorDeterminants) {
  Mat a(2, 2);
  a << 3, 1, 1, 2;  // det 5
  EXPECT_NEAR(logdet(a), std::log(5.0), 1e-12);
  Mat b(3, 3);
  b << 4, 2, 0.6, 2, 5, 1.5, 0.6, 1.5, 3;  // cofactor expansion: 40.8
  EXPECT_NEAR(logdet(b), std::log(40.8), 1e-12);
  EXPECT_NEAR(logdet(b), std::log(b.determinant()), 1e-9);
}

TEST(Logdet, FloatScalarInstantiates) {
  Eigen::MatrixXf a = Eigen::MatrixXf::Identity(2, 2) * 2.0f;
  EXPECT_NEAR(logdet(a), std::log(4.0f), 1e-6f);
}

TEST(SampleCovariance, UsesUnbiasedNormalization) {
  RowMat x(3, 1);
  x << 1, 2, 3;
  EXPECT_DOUBLE_EQ(sample_covariance(x)(0, 0), 1.0);
  EXPECT_THROW(sample_covariance(RowMat(1, 2)), DegenerateData);
}

TEST(Parallel, MapPreservesOrderAndPropagatesErrors) {
  const auto out = parallel_map<int>(100, [](std::size_t i) { return static_cast<int>(i * i); });
  for (int i = 0; i < 100; ++i) EXPECT_EQ(out[i], i * i);
  EXPECT_THROW(parallel_for(10, [](std::size_t i) {
                 if (i == 7) throw Diverged("boom");
               }),
               Diverged);
}
