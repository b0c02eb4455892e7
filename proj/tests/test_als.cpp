#include <gtest/gtest.h>

#include <cpfuse/als.hpp>
#include <cpfuse/kernel.hpp>

#include "test_util.hpp"

using namespace cpfuse;
using testutil::factor_error;

namespace {

CpModel random_model(Index I, Index J, Index K, Index R, Rng& rng) {
  return {randn(I, R, rng), randn(J, R, rng), randn(K, R, rng)};
}

DenseTensor3 add_noise(DenseTensor3 T, double sigma, Rng& rng) {
  std::normal_distribution<double> d(0.0, sigma);
  for (auto& v : T.data()) v += d(rng);
  return T;
}

// Central-difference gradient of the total objective w.r.t. C and C'.
std::pair<Matrix, Matrix> fd_gradient_c(const CoupledProblem& p, const CpModel& m, const CpModel& mp) {
  const double h = 1e-4;
  Matrix gC(m.C.rows(), m.C.cols()), gCp(mp.C.rows(), mp.C.cols());
  for (Index i = 0; i < m.C.size(); ++i) {
    CpModel a = m, b = m;
    a.C.data()[i] += h;
    b.C.data()[i] -= h;
    gC.data()[i] = (total_objective(p, a, mp) - total_objective(p, b, mp)) / (2 * h);
  }
  for (Index i = 0; i < mp.C.size(); ++i) {
    CpModel a = mp, b = mp;
    a.C.data()[i] += h;
    b.C.data()[i] -= h;
    gCp.data()[i] = (total_objective(p, m, a) - total_objective(p, m, b)) / (2 * h);
  }
  return {gC, gCp};
}

struct Instance {
  CpModel m, mp;
  CoupledProblem p;
};

Instance coupled_instance(Rng& rng, double sn, double snp, double sc, Index K = 6, Index R = 3) {
  CpModel m = random_model(5, 4, K, R, rng);
  CpModel mp = random_model(4, 5, K, R, rng);
  mp.C = m.C + sc * randn(K, R, rng);
  CoupledProblem p{add_noise(cp_to_tensor(m), sn, rng), add_noise(cp_to_tensor(mp), snp, rng),
                   GaussianNoise{sn}, GaussianNoise{snp}, HybridGaussianCoupling::direct(K, sc), R, R};
  return {m, mp, p};
}

CoupledBlockState block_state(const Instance& in, const CpModel& m, const CpModel& mp,
                              const HybridGaussianCoupling& g) {
  return CoupledBlockState::make(unfold(in.p.Y, 3), unfold(in.p.Yp, 3), m, mp,
                                 std::get<GaussianNoise>(in.p.noise).sigma,
                                 std::get<GaussianNoise>(in.p.noise_p).sigma, g.H, g.Hp, g.sigma_c,
                                 coupled_mask(g, m.rank()));
}

}  // namespace

TEST(UncoupledAls, NoiselessRecovery) {
  Rng rng(1);
  const CpModel truth = random_model(8, 7, 6, 3, rng);
  AlsConfig cfg;
  cfg.k_max = 2000;
  cfg.delta_min = 0;
  const auto sol = uncoupled_als(cp_to_tensor(truth), 3, cfg, rng);
  const auto Y = cp_to_tensor(truth);
  EXPECT_LT((cp_to_tensor(sol.model).vec() - Y.vec()).norm() / Y.vec().norm(), 1e-6);
  EXPECT_LT(factor_error(sol.model, truth), 1e-6);
}

TEST(UncoupledAls, RankOneInOneSweep) {
  Rng rng(2);
  const CpModel truth = random_model(5, 4, 3, 1, rng);
  const auto Y = cp_to_tensor(truth);
  AlsConfig cfg;
  cfg.k_max = 1;
  const auto sol = uncoupled_als(Y, 1, cfg, rng);
  EXPECT_LT((cp_to_tensor(sol.model).vec() - Y.vec()).norm() / Y.vec().norm(), 1e-10);
}

TEST(UncoupledAls, ResidualNonIncreasing) {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const auto Y = add_noise(cp_to_tensor(random_model(6, 6, 6, 3, rng)), 0.3, rng);
    AlsConfig cfg;
    cfg.k_max = 100;
    cfg.delta_min = 0;
    const auto sol = uncoupled_als(Y, 3, cfg, rng);
    const auto& o = sol.trace.objective_per_iter;
    for (std::size_t k = 1; k < o.size(); ++k) EXPECT_LE(o[k], o[k - 1] * (1 + 1e-12) + 1e-14);
  }
}

TEST(AlsNormalization, RescalingLeavesModelUnchanged) {
  Rng rng(4);
  for (auto scaling : {FactorScaling::l2, FactorScaling::first_row}) {
    CpModel m = random_model(5, 4, 3, 3, rng);
    const auto before = cp_to_tensor(m);
    int reseeded = 0;
    detail::rescale_into(m.A, m.C, scaling, rng, reseeded);
    detail::rescale_into(m.B, m.C, scaling, rng, reseeded);
    EXPECT_EQ(reseeded, 0);
    EXPECT_LT((cp_to_tensor(m).vec() - before.vec()).cwiseAbs().maxCoeff(), 1e-12);
    if (scaling == FactorScaling::first_row)
      EXPECT_LT((m.A.row(0).array() - 1.0).abs().maxCoeff(), 1e-15);
    else
      EXPECT_LT((m.A.colwise().norm().array() - 1.0).abs().maxCoeff(), 1e-14);
  }
}

TEST(JointUpdate, DecoupledLimitIsUncoupledLs) {
  Rng rng(5);
  auto in = coupled_instance(rng, 0.1, 0.1, 0.5);
  auto g = std::get<HybridGaussianCoupling>(in.p.coupling);
  g.sigma_c = 1e6;
  const CpModel m = random_model(5, 4, 6, 3, rng), mp = random_model(4, 5, 6, 3, rng);
  const auto s = block_state(in, m, mp, g);
  const auto cf = update_coupled_factors_joint(s);
  const Matrix KR = khatri_rao(m.B, m.A);
  const Matrix ls = unfold(in.p.Y, 3) * KR * (KR.transpose() * KR).inverse();
  EXPECT_LT((cf.C - ls).cwiseAbs().maxCoeff(), 1e-6);
  const auto sq = update_coupled_factors_sequential(s);
  EXPECT_LT((sq.C - ls).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(JointUpdate, StrongCouplingMakesFactorsClose) {
  Rng rng(6);
  auto in = coupled_instance(rng, 1e-9, 1e-9, 0.0);
  in.p.noise = GaussianNoise{0.1};
  in.p.noise_p = GaussianNoise{0.1};
  auto g = std::get<HybridGaussianCoupling>(in.p.coupling);
  g.sigma_c = 1e-4;
  // Perturbed A, B so that the two tensors disagree slightly about C.
  CpModel m = in.m, mp = in.mp;
  m.A += 0.01 * randn(5, 3, rng);
  const auto cf = update_coupled_factors_joint(block_state(in, m, mp, g));
  EXPECT_LT((cf.C - cf.Cp).norm(), 10 * g.sigma_c * std::sqrt(18.0));
}

TEST(JointUpdate, GradientVanishesAtSolution) {
  Rng rng(7);
  for (auto sc : {0.05, 1.0}) {
    auto in = coupled_instance(rng, 0.5, 0.8, sc);
    // General transformation and a subset of coupled columns.
    HybridGaussianCoupling g{randn(7, 6, rng), randn(7, 6, rng), sc, {0, 2}};
    in.p.coupling = g;
    CpModel m = random_model(5, 4, 6, 3, rng), mp = random_model(4, 5, 6, 3, rng);
    const auto cf = update_coupled_factors_joint(block_state(in, m, mp, g));
    m.C = cf.C;
    mp.C = cf.Cp;
    const auto [gC, gCp] = fd_gradient_c(in.p, m, mp);
    EXPECT_LT(std::sqrt(gC.squaredNorm() + gCp.squaredNorm()), 1e-8 * std::max(1.0, total_objective(in.p, m, mp)));
  }
}

TEST(SequentialUpdate, BlockGradientsVanish) {
  Rng rng(8);
  auto in = coupled_instance(rng, 0.5, 0.8, 0.3);
  for (bool subset : {false, true}) {
    HybridGaussianCoupling g{randn(7, 6, rng), randn(7, 6, rng), 0.3, {}};
    if (subset) g.coupled_cols = {1};
    in.p.coupling = g;
    CpModel m = random_model(5, 4, 6, 3, rng), mp = random_model(4, 5, 6, 3, rng);
    const auto cf = update_coupled_factors_sequential(block_state(in, m, mp, g));
    m.C = cf.C;
    mp.C = cf.Cp;
    // C' was solved last: its block gradient vanishes at the new (C, C').
    const auto gCp = fd_gradient_c(in.p, m, mp).second;
    const double scale = std::max(1.0, total_objective(in.p, m, mp));
    EXPECT_LT(gCp.norm(), 1e-8 * scale);
  }
}

TEST(SequentialUpdate, CBlockExactGivenPreviousCp) {
  Rng rng(9);
  auto in = coupled_instance(rng, 0.5, 0.8, 0.3);
  HybridGaussianCoupling g{randn(7, 6, rng), randn(7, 6, rng), 0.3, {}};
  in.p.coupling = g;
  CpModel m = random_model(5, 4, 6, 3, rng), mp = random_model(4, 5, 6, 3, rng);
  const auto cf = update_coupled_factors_sequential(block_state(in, m, mp, g));
  m.C = cf.C;  // mp.C still the previous value
  const auto gC = fd_gradient_c(in.p, m, mp).first;
  EXPECT_LT(gC.norm(), 1e-8 * std::max(1.0, total_objective(in.p, m, mp)));
}

TEST(CoupledAls, CUpdateDoesNotIncreaseObjective) {
  Rng rng(10);
  auto in = coupled_instance(rng, 0.2, 0.3, 0.2);
  for (auto mode : {UpdateMode::joint, UpdateMode::sequential}) {
    CpModel m = random_model(5, 4, 6, 3, rng), mp = random_model(4, 5, 6, 3, rng);
    const auto& g = std::get<HybridGaussianCoupling>(in.p.coupling);
    for (int it = 0; it < 5; ++it) {
      const double before = total_objective(in.p, m, mp);
      const auto s = block_state(in, m, mp, g);
      const auto cf = mode == UpdateMode::joint ? update_coupled_factors_joint(s)
                                                : update_coupled_factors_sequential(s);
      m.C = cf.C;
      mp.C = cf.Cp;
      EXPECT_LE(total_objective(in.p, m, mp), before * (1 + 1e-12));
      m.A = solve_right_pinv(unfold(in.p.Y, 1), khatri_rao(m.C, m.B));
    }
  }
}

TEST(CoupledAls, NoiselessExactRecovery) {
  Rng rng(11);
  const Index n = 10, R = 3;
  CpModel m = random_model(n, n, n, R, rng);
  CpModel mp = random_model(n, n, n, R, rng);
  mp.C = m.C;
  CoupledProblem p{cp_to_tensor(m), cp_to_tensor(mp), GaussianNoise{0.01}, GaussianNoise{0.01},
                   HybridGaussianCoupling::direct(n, 0.01), R, R};
  AlsConfig cfg;
  cfg.restarts = 2;
  cfg.delta_min = 1e-14;
  const auto sol = coupled_als(p, cfg, rng);
  EXPECT_LT(factor_error(sol.model, m), 1e-6);
  EXPECT_LT(factor_error(sol.model_p, mp), 1e-6);
}

TEST(CoupledAls, JointAndSequentialAgree) {
  Rng rng(12);
  auto in = coupled_instance(rng, 0.05, 0.05, 0.1);
  AlsConfig cfg;
  cfg.restarts = 1;
  cfg.delta_min = 1e-15;
  cfg.k_max = 3000;
  Rng r1(5), r2(5);
  auto [m0, mp0] = als_warm_start(in.p, cfg, r1);
  const auto a = coupled_als_from(in.p, cfg, m0, mp0, r1);
  cfg.update_mode = UpdateMode::sequential;
  const auto b = coupled_als_from(in.p, cfg, m0, mp0, r2);
  EXPECT_LT(testutil::rel(a.model.C, b.model.C), 1e-6);
  EXPECT_LT(testutil::rel(a.model_p.C, b.model_p.C), 1e-6);
}

TEST(CoupledAls, HardModeEngagesBelowThreshold) {
  Rng rng(13);
  auto in = coupled_instance(rng, 0.1, 0.1, 1e-7);
  AlsConfig cfg;
  cfg.restarts = 1;
  cfg.k_max = 20;
  const auto sol = coupled_als(in.p, cfg, rng);
  EXPECT_TRUE(sol.trace.hard_mode);
  EXPECT_LT((sol.model.C - sol.model_p.C).norm(), 1e-12 * sol.model.C.norm());
  in.p.coupling = HybridGaussianCoupling::direct(6, 0.05);
  EXPECT_FALSE(coupled_als(in.p, cfg, rng).trace.hard_mode);
}

TEST(CoupledAls, GeneralHardCouplingSatisfiesConstraint) {
  Rng rng(14);
  auto in = coupled_instance(rng, 0.1, 0.1, 0.0);
  // Interpolation-style coupling between grids of different length.
  const auto tl = uniform_grid(9, 4.0 / 9), tk = uniform_grid(5, 4.0 / 5), tkp = uniform_grid(7, 4.0 / 7);
  HardCoupling hc{dirichlet_interpolation_matrix(tl, tk, 5, 4.0), dirichlet_interpolation_matrix(tl, tkp, 7, 4.0)};
  CpModel m = random_model(5, 4, 5, 2, rng), mp = random_model(4, 5, 7, 2, rng);
  CoupledProblem p{add_noise(cp_to_tensor(m), 0.1, rng), add_noise(cp_to_tensor(mp), 0.1, rng),
                   GaussianNoise{0.1}, GaussianNoise{0.1}, hc, 2, 2};
  AlsConfig cfg;
  cfg.restarts = 1;
  cfg.k_max = 30;
  const auto sol = coupled_als(p, cfg, rng);
  EXPECT_TRUE(sol.trace.hard_mode);
  EXPECT_LT((hc.H * sol.model.C - hc.Hp * sol.model_p.C).norm(), 1e-9 * (1 + sol.model.C.norm()));
}

TEST(CoupledAls, ZeroColumnIsReseeded) {
  Rng rng(15);
  auto in = coupled_instance(rng, 0.1, 0.1, 0.1);
  CpModel m = random_model(5, 4, 6, 3, rng), mp = random_model(4, 5, 6, 3, rng);
  m.A.col(1).setZero();
  AlsConfig cfg;
  cfg.k_max = 5;
  const auto sol = coupled_als_from(in.p, cfg, m, mp, rng);
  EXPECT_GE(sol.trace.reseeded_columns, 1);
  for (double v : sol.trace.objective_per_iter) EXPECT_TRUE(std::isfinite(v));
}

TEST(CoupledAls, DeterministicForSeed) {
  Rng setup(16);
  auto in = coupled_instance(setup, 0.1, 0.1, 0.1);
  AlsConfig cfg;
  cfg.restarts = 3;
  cfg.k_max = 50;
  Rng a(99), b(99);
  const auto x = coupled_als(in.p, cfg, a), y = coupled_als(in.p, cfg, b);
  EXPECT_EQ(x.model.C, y.model.C);
  EXPECT_EQ(x.trace.objective_per_iter, y.trace.objective_per_iter);
  EXPECT_EQ(x.trace.restart_index, y.trace.restart_index);
}

TEST(CoupledAls, RejectsUnsupportedProblems) {
  Rng rng(17);
  auto in = coupled_instance(rng, 0.1, 0.1, 0.1);
  AlsConfig cfg;
  in.p.coupling = LaplaceCoupling{1.0};
  EXPECT_THROW(coupled_als(in.p, cfg, rng), std::invalid_argument);
  cfg.k_max = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(JointUpdate, RowwisePathMatchesStackedSolve) {
  Rng rng(31);
  for (std::vector<Index> cols : {std::vector<Index>{}, std::vector<Index>{1}}) {
    auto in = coupled_instance(rng, 0.05, 0.02, 0.1);
    const auto g = HybridGaussianCoupling::direct(6, 0.1, cols);
    const CpModel m = random_model(5, 4, 6, 3, rng), mp = random_model(4, 5, 6, 3, rng);
    const auto s = block_state(in, m, mp, g);
    const auto a = detail::joint_rowwise_solve(s), b = detail::joint_stacked_solve(s);
    EXPECT_LT((a.C - b.C).norm(), 1e-10 * b.C.norm());
    EXPECT_LT((a.Cp - b.Cp).norm(), 1e-10 * b.Cp.norm());
  }
}

TEST(Alignment, PairMovesSharedComponentIntoCoupledSlot) {
  Rng rng(41);
  const Index K = 8;
  CpModel ref{randn(5, 3, rng), randn(5, 3, rng), randn(K, 3, rng)};
  CpModel cand{randn(4, 3, rng), randn(4, 3, rng), randn(K, 3, rng)};
  // Only ref column 2 and cand column 0 (negated) are shared.
  cand.C.col(0) = -ref.C.col(2);
  const auto spec = HybridGaussianCoupling::direct(K, 0.1, {1});
  const auto [r, c] = align_pair(ref, cand, spec);
  EXPECT_LT((r.C.col(1) - ref.C.col(2)).norm(), 1e-14);
  EXPECT_LT((c.C.col(1) - r.C.col(1)).norm(), 1e-14);
  EXPECT_LT((c.A.col(1) + cand.A.col(0)).norm(), 1e-14);
  // The CP tensors are unchanged.
  EXPECT_LT((cp_to_tensor(r).vec() - cp_to_tensor(ref).vec()).norm(), 1e-12);
  EXPECT_LT((cp_to_tensor(c).vec() - cp_to_tensor(cand).vec()).norm(), 1e-12);
}

TEST(Alignment, PairIgnoresCostOfUncoupledComponents) {
  // s is shared; u and v are free, and total-cost matching prefers s-v, u-s.
  const Index K = 3;
  Matrix C(K, 2), Cp(K, 2);
  C << 1.5, 3, 1.5, 0, 0, 0;
  Cp << 0, 1.5, 3, 1.5, 0, 0.01;
  Rng rng(3);
  const CpModel ref{randn(3, 2, rng), randn(3, 2, rng), C}, cand{randn(3, 2, rng), randn(3, 2, rng), Cp};
  const auto total = align_components(ref, cand, HybridGaussianCoupling::direct(K, 0.1));
  EXPECT_GT((total.C.col(0) - C.col(0)).norm(), 1.0);
  for (Index slot : {0, 1}) {
    const auto [r, c] = align_pair(ref, cand, HybridGaussianCoupling::direct(K, 0.1, {slot}));
    EXPECT_LT((r.C.col(slot) - c.C.col(slot)).norm(), 0.02);
    EXPECT_LT((r.C.col(slot) - C.col(0)).norm(), 1e-15);
  }
}
