#include <gtest/gtest.h>

#include <cpfuse/rng.hpp>
#include <cpfuse/sylvester.hpp>

using namespace cpfuse;

namespace {
Matrix random_spd(Index n, Rng& rng) {
  const Matrix G = randn(n, n, rng);
  return G * G.transpose() + 0.1 * Matrix::Identity(n, n);
}
}  // namespace

TEST(Sylvester, ScaledIdentities) {
  Rng rng(1);
  const Matrix Rhs = randn(5, 3, rng);
  const Matrix X = sylvester_solve(2.0 * Matrix::Identity(5, 5), 0.5 * Matrix::Identity(3, 3), Rhs);
  EXPECT_LT((X - Rhs / 2.5).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Sylvester, ZeroRightHandSide) {
  Rng rng(2);
  const Matrix X = sylvester_solve(random_spd(4, rng), random_spd(2, rng), Matrix::Zero(4, 2));
  EXPECT_EQ(X.norm(), 0.0);
}

TEST(Sylvester, ResidualOnRandomInstances) {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const Matrix P = random_spd(8, rng), Q = random_spd(3, rng), Rhs = randn(8, 3, rng);
    const Matrix X = sylvester_solve(P, Q, Rhs);
    ASSERT_LE((P * X + X * Q - Rhs).norm(), 1e-10 * Rhs.norm());
  }
}

TEST(Sylvester, PsdOperandWithPositiveOther) {
  Rng rng(4);
  const Matrix G = randn(6, 2, rng);
  const Matrix P = G * G.transpose();  // rank 2, PSD
  const Matrix Q = random_spd(3, rng), Rhs = randn(6, 3, rng);
  const Matrix X = sylvester_solve(P, Q, Rhs);
  EXPECT_LE((P * X + X * Q - Rhs).norm(), 1e-10 * Rhs.norm());
}

TEST(Sylvester, SingularPencilIsReported) {
  Matrix P = Matrix::Zero(3, 3);
  Matrix Q = Matrix::Zero(2, 2);
  Q(0, 0) = 1.0;
  EXPECT_THROW(sylvester_solve(P, Q, Matrix::Ones(3, 2)), SingularSystemError);
  EXPECT_THROW(sylvester_solve(Matrix::Identity(3, 3), Matrix::Identity(2, 2), Matrix::Ones(2, 2)),
               DimensionError);
}
