#include <gtest/gtest.h>

#include <cpfuse/als.hpp>
#include <cpfuse/compress.hpp>

#include "test_util.hpp"

using namespace cpfuse;
using testutil::factor_error;

namespace {

CpModel random_model(Index I, Index J, Index K, Index R, Rng& rng) {
  return {randn(I, R, rng), randn(J, R, rng), randn(K, R, rng)};
}

// Random Tucker tensor with the given multilinear rank.
DenseTensor3 tucker_tensor(std::array<Index, 3> dims, std::array<Index, 3> ranks, Rng& rng) {
  DenseTensor3 G(ranks[0], ranks[1], ranks[2]);
  std::normal_distribution<double> d;
  for (auto& v : G.data()) v = d(rng);
  return mode_product(mode_product(mode_product(G, randn(dims[0], ranks[0], rng), 1),
                                   randn(dims[1], ranks[1], rng), 2),
                      randn(dims[2], ranks[2], rng), 3);
}

double rel_err(const DenseTensor3& X, const DenseTensor3& Y) {
  return (X.vec() - Y.vec()).norm() / Y.vec().norm();
}

}  // namespace

TEST(Hosvd, BasesAreOrthonormal) {
  Rng rng(1);
  const auto Y = tucker_tensor({12, 10, 9}, {4, 5, 3}, rng);
  for (auto mode : {SvdMode::dense, SvdMode::randomized}) {
    const auto b = truncated_hosvd(Y, {3, 3, 3}, mode, rng);
    EXPECT_LT(orthonormality_error(b.U), 1e-12);
    EXPECT_LT(orthonormality_error(b.V), 1e-12);
    EXPECT_LT(orthonormality_error(b.W), 1e-12);
    EXPECT_EQ(b.core.dims(), (std::array<Index, 3>{3, 3, 3}));
  }
}

TEST(Hosvd, FullRanksAreLossless) {
  Rng rng(2);
  DenseTensor3 Y(4, 5, 3);
  std::normal_distribution<double> d;
  for (auto& v : Y.data()) v = d(rng);
  const auto b = truncated_hosvd(Y, {4, 5, 3}, SvdMode::dense, rng);
  EXPECT_LT(rel_err(expand_core(b), Y), 1e-12);
}

TEST(Hosvd, ExactMultilinearRankIsRecovered) {
  Rng rng(3);
  const std::array<Index, 3> ranks{2, 3, 4};
  const auto Y = tucker_tensor({15, 14, 13}, ranks, rng);
  for (auto mode : {SvdMode::dense, SvdMode::randomized}) {
    const auto b = truncated_hosvd(Y, ranks, mode, rng);
    EXPECT_LT(rel_err(expand_core(b), Y), 1e-10);
  }
}

TEST(Hosvd, RandomizedCapturesDenseEnergy) {
  Rng rng(4);
  auto Y = tucker_tensor({40, 35, 30}, {6, 6, 6}, rng);
  std::normal_distribution<double> d(0.0, 0.05);
  for (auto& v : Y.data()) v += d(rng);
  const auto dense = truncated_hosvd(Y, {4, 4, 4}, SvdMode::dense, rng);
  const double e_dense = dense.core.vec().squaredNorm();
  for (int t = 0; t < 5; ++t) {
    const auto rnd = truncated_hosvd(Y, {4, 4, 4}, SvdMode::randomized, rng);
    EXPECT_GE(rnd.core.vec().squaredNorm(), 0.99 * e_dense);
  }
}

TEST(Hosvd, RejectsBadRanks) {
  Rng rng(5);
  DenseTensor3 Y(3, 3, 3);
  EXPECT_THROW(truncated_hosvd(Y, {4, 1, 1}, SvdMode::dense, rng), std::invalid_argument);
  EXPECT_THROW(truncated_hosvd(Y, {0, 1, 1}, SvdMode::dense, rng), std::invalid_argument);
}

TEST(JointBasis, SpansSharedThirdFactor) {
  Rng rng(6);
  const Index K = 20, R = 3;
  CpModel m = random_model(9, 8, K, R, rng), mp = random_model(7, 6, K, R, rng);
  mp.C = m.C;
  const Matrix W = joint_mode3_basis(cp_to_tensor(m), cp_to_tensor(mp), 0.1, 0.01, R,
                                     SvdMode::dense, rng);
  EXPECT_LT(orthonormality_error(W), 1e-12);
  EXPECT_LT((m.C - W * (W.transpose() * m.C)).norm(), 1e-10 * m.C.norm());
}

TEST(JointBasis, WeightsFavourTheCleanTensor) {
  // Different third factors; the rank-R basis follows the low-noise tensor.
  Rng rng(7);
  const Index K = 20, R = 2;
  CpModel m = random_model(9, 8, K, R, rng), mp = random_model(7, 6, K, R, rng);
  const Matrix W = joint_mode3_basis(cp_to_tensor(m), cp_to_tensor(mp), 10.0, 0.01, R,
                                     SvdMode::dense, rng);
  const double res_p = (mp.C - W * (W.transpose() * mp.C)).norm() / mp.C.norm();
  const double res = (m.C - W * (W.transpose() * m.C)).norm() / m.C.norm();
  EXPECT_LT(res_p, 1e-2);
  EXPECT_GT(res, 0.1);
}

TEST(CompressModel, DecompressRoundTrip) {
  Rng rng(8);
  const auto Y = tucker_tensor({10, 9, 8}, {3, 3, 3}, rng);
  const auto b = truncated_hosvd(Y, {3, 3, 3}, SvdMode::dense, rng);
  const CpModel core{randn(3, 2, rng), randn(3, 2, rng), randn(3, 2, rng)};
  const CpModel back = compress_model(decompress_model(core, b), b);
  for (int f = 0; f < 3; ++f) EXPECT_LT((back.factor(f) - core.factor(f)).norm(), 1e-12);
  // The decompressed CP tensor equals the expansion of the compressed one.
  CompressionBases bc = b;
  bc.core = cp_to_tensor(core);
  EXPECT_LT(rel_err(cp_to_tensor(decompress_model(core, b)), expand_core(bc)), 1e-12);
}

TEST(CompressModel, RejectsMismatchedBases) {
  Rng rng(9);
  const auto Y = tucker_tensor({10, 9, 8}, {3, 3, 3}, rng);
  const auto b = truncated_hosvd(Y, {3, 3, 3}, SvdMode::dense, rng);
  const CpModel wrong{randn(4, 2, rng), randn(3, 2, rng), randn(3, 2, rng)};
  EXPECT_THROW(decompress_model(wrong, b), DimensionError);
}

TEST(CompressedProblem, RequiresDirectCoupling) {
  Rng rng(10);
  const CpModel m = random_model(6, 6, 6, 2, rng);
  HybridGaussianCoupling g{randn(6, 6, rng), Matrix::Identity(6, 6), 0.1, {}};
  CoupledProblem p{cp_to_tensor(m), cp_to_tensor(m), GaussianNoise{0.1}, GaussianNoise{0.1}, g, 2, 2};
  EXPECT_THROW(compress_coupled_problem(p, {2, 2, 2}, {2, 2, 2}, SvdMode::dense, rng),
               std::invalid_argument);
  p.coupling = HybridGaussianCoupling::direct(6, 0.1);
  EXPECT_THROW(compress_coupled_problem(p, {2, 2, 2}, {2, 2, 3}, SvdMode::dense, rng),
               std::invalid_argument);
}

TEST(CompressedProblem, NoiselessPipelineRecoversFactors) {
  Rng rng(11);
  const Index n = 30, R = 3;
  CpModel m = random_model(n, n, n, R, rng), mp = random_model(n, n, n, R, rng);
  mp.C = m.C;
  CoupledProblem p{cp_to_tensor(m), cp_to_tensor(mp), GaussianNoise{0.01}, GaussianNoise{0.01},
                   HybridGaussianCoupling::direct(n, 0.01), R, R};
  const auto cc = compress_coupled_problem(p, {R, R, R}, {R, R, R}, SvdMode::randomized, rng);
  EXPECT_EQ(cc.problem.Y.dims(), (std::array<Index, 3>{R, R, R}));
  AlsConfig cfg;
  cfg.restarts = 3;
  cfg.delta_min = 1e-15;
  cfg.k_max = 2000;
  const auto sol = coupled_als(cc.problem, cfg, rng);
  EXPECT_LT(factor_error(decompress_model(sol.model, cc.bases), m), 1e-5);
  EXPECT_LT(factor_error(decompress_model(sol.model_p, cc.bases_p), mp), 1e-5);
}
