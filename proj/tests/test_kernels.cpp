#include <gtest/gtest.h>

#include <random>

#include "common.hpp"
#include "rgm/kernels.hpp"

using rgm::Matrix;
namespace k = rgm::kernels;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.values()) v = n(rng);
  return m;
}

}  // namespace

// Shapes straddle the parallel threshold so both code paths get exercised.
class KernelParity : public ::testing::TestWithParam<std::tuple<int, int, int>> {};

TEST_P(KernelParity, SerialAndParallelAgreeBitwise) {
  auto [m, n, p] = GetParam();
  std::mt19937_64 rng(m * 131 + n * 17 + p);
  const Matrix a = random_matrix(m, n, rng);
  const Matrix b = random_matrix(n, p, rng);
  const Matrix at = random_matrix(n, m, rng);
  const Matrix bt = random_matrix(p, n, rng);

  Matrix s(m, p), q(m, p);
  k::serial::matmul(a, b, s);
  k::parallel::matmul(a, b, q);
  EXPECT_TRUE(rgm::fixture::bitwise_equal(s, q));

  k::serial::matmul_tn(at, b, s);
  k::parallel::matmul_tn(at, b, q);
  EXPECT_TRUE(rgm::fixture::bitwise_equal(s, q));

  k::serial::matmul_nt(a, bt, s);
  k::parallel::matmul_nt(a, bt, q);
  EXPECT_TRUE(rgm::fixture::bitwise_equal(s, q));

  const Matrix bias = random_matrix(1, p, rng);
  Matrix s2 = s, q2 = s;
  k::serial::add_row_bias(s2, bias);
  k::parallel::add_row_bias(q2, bias);
  EXPECT_TRUE(rgm::fixture::bitwise_equal(s2, q2));

  Matrix cs(1, p), cq(1, p);
  k::serial::column_sums(s, cs);
  k::parallel::column_sums(s, cq);
  EXPECT_TRUE(rgm::fixture::bitwise_equal(cs, cq));
}

INSTANTIATE_TEST_SUITE_P(Shapes, KernelParity,
                         ::testing::Values(std::make_tuple(1, 1, 1), std::make_tuple(3, 5, 2),
                                           std::make_tuple(64, 16, 64), std::make_tuple(257, 33, 129),
                                           std::make_tuple(512, 64, 96)));

TEST(Kernels, MatmulMatchesHandComputation) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{5, 6}, {7, 8}};
  const Matrix c = k::matmul(a, b);
  EXPECT_EQ(c(0, 0), 19);
  EXPECT_EQ(c(0, 1), 22);
  EXPECT_EQ(c(1, 0), 43);
  EXPECT_EQ(c(1, 1), 50);
  const Matrix t = k::matmul_tn(a, b);  // a^T b
  EXPECT_EQ(t(0, 0), 26);
  EXPECT_EQ(t(1, 1), 44);
  const Matrix u = k::matmul_nt(a, b);  // a b^T
  EXPECT_EQ(u(0, 1), 23);
  EXPECT_EQ(k::column_sums(a)(0, 1), 6);
}

TEST(Kernels, ShapeMismatchThrows) {
  EXPECT_THROW(k::matmul(Matrix(2, 3), Matrix(2, 3)), rgm::Error);
}
