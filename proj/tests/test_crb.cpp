#include <gtest/gtest.h>

#include <cpfuse/crb.hpp>
#include <cpfuse/rng.hpp>

#include <set>
#include <tuple>

using namespace cpfuse;

namespace {

// Jacobian of vec(X) w.r.t. [A~, B~, C] (component-major inside each
// factor). The model is affine in every single entry, so a unit step is exact.
Matrix jacobian(const CpModel& m) {
  const Index R = m.rank();
  const Vector x0 = cp_to_tensor(m).vec();
  std::vector<Vector> cols;
  for (int f = 0; f < 3; ++f) {
    const Index first = f < 2 ? 1 : 0;
    for (Index r = 0; r < R; ++r)
      for (Index i = first; i < m.factor(f).rows(); ++i) {
        CpModel p = m;
        p.factor(f)(i, r) += 1.0;
        cols.push_back(cp_to_tensor(p).vec() - x0);
      }
  }
  Matrix J(x0.size(), static_cast<Index>(cols.size()));
  for (Index c = 0; c < J.cols(); ++c) J.col(c) = cols[static_cast<std::size_t>(c)];
  return J;
}

Matrix fisher_oracle(const CpModel& m, double sigma) {
  const Matrix J = jacobian(m);
  return J.transpose() * J / (sigma * sigma);
}

Matrix block_diag(const Matrix& X, const Matrix& Y) {
  Matrix M = Matrix::Zero(X.rows() + Y.rows(), X.cols() + Y.cols());
  M.topLeftCorner(X.rows(), X.cols()) = X;
  M.bottomRightCorner(Y.rows(), Y.cols()) = Y;
  return M;
}

CrbScenario small_scenario(Rng& rng, BoundMode mode = BoundMode::hybrid) {
  CrbScenario s;
  s.mode = mode;
  s.At = randn(2, 2, rng);
  s.Bt = randn(3, 2, rng);
  s.Apt = randn(3, 2, rng);
  s.Bpt = randn(2, 2, rng);
  s.Cp = randn(3, 2, rng);
  s.H = randn(4, 3, rng);
  s.sigma_c = 0.3;
  s.sigma_n = 0.2;
  s.sigma_np = 0.1;
  if (mode == BoundMode::bayesian) s.sigma_A = s.sigma_B = s.sigma_Ap = s.sigma_Bp = s.sigma_Cp = 0.5;
  return s;
}

CpModel unprimed(const CrbScenario& s, const Matrix& C) {
  return {with_unit_first_row(s.At), with_unit_first_row(s.Bt), C};
}
CpModel primed(const CrbScenario& s) {
  return {with_unit_first_row(s.Apt), with_unit_first_row(s.Bpt), s.Cp};
}

}  // namespace

TEST(Fisher, RankOneHandExample) {
  // a = (1, 2), b = (1, 3), c = (1, -1): AA = 5, BB = 10, CC = 2.
  CpModel m{Matrix(2, 1), Matrix(2, 1), Matrix(2, 1)};
  m.A << 1, 2;
  m.B << 1, 3;
  m.C << 1, -1;
  Matrix expect(4, 4);
  // order: a2, b2, c1, c2
  expect << 20, 12, 20, -20,
            12, 10, 15, -15,
            20, 15, 50, 0,
           -20, -15, 0, 50;
  EXPECT_LT((fisher_blocks(m, 1.0) - expect).norm(), 1e-12);
  EXPECT_LT((fisher_blocks(m, 0.5) - 4.0 * expect).norm(), 1e-12);
}

TEST(Fisher, MatchesJacobianOracle) {
  Rng rng(1);
  for (auto dims : {std::tuple<Index, Index, Index, Index>{3, 4, 5, 2}, {4, 3, 2, 3}, {2, 2, 6, 1}}) {
    const auto [I, J, K, R] = dims;
    const CpModel m{with_unit_first_row(randn(I - 1, R, rng)), with_unit_first_row(randn(J - 1, R, rng)),
                    randn(K, R, rng)};
    const Matrix F = fisher_blocks(m, 0.3);
    const Matrix O = fisher_oracle(m, 0.3);
    EXPECT_LT((F - O).norm(), 1e-10 * O.norm());
    EXPECT_LT((F - F.transpose()).norm(), 1e-14 * F.norm());
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(F).eigenvalues().minCoeff(), -1e-9 * F.norm());
  }
}

TEST(Fisher, RejectsFreeFirstRow) {
  Rng rng(2);
  const CpModel m{randn(3, 2, rng), with_unit_first_row(randn(2, 2, rng)), randn(3, 2, rng)};
  EXPECT_THROW(fisher_blocks(m, 1.0), std::invalid_argument);
}

TEST(ExpectedFisher, HybridMatchesSigmaPointOracle) {
  // Fisher entries are quadratic in C, so the symmetric sigma points
  // mu +/- sigma e_i give the Gaussian expectation exactly.
  Rng rng(3);
  const CrbScenario s = small_scenario(rng);
  const Matrix mu = s.H * s.Cp;
  const Matrix F0 = fisher_oracle(unprimed(s, mu), s.sigma_n);
  Matrix E = F0;
  for (Index i = 0; i < mu.size(); ++i) {
    Matrix up = mu, dn = mu;
    up.data()[i] += s.sigma_c;
    dn.data()[i] -= s.sigma_c;
    E += 0.5 * (fisher_oracle(unprimed(s, up), s.sigma_n) + fisher_oracle(unprimed(s, dn), s.sigma_n)) - F0;
  }
  const Matrix expect = block_diag(E, fisher_oracle(primed(s), s.sigma_np));
  const Matrix got = expected_fisher_hybrid(s);
  EXPECT_LT((got - expect).norm(), 1e-10 * expect.norm());
}

TEST(ExpectedFisher, HybridIncludesCouplingVariance) {
  // The C-variance term scales the A~/B~ diagonal blocks by K sigma_c^2.
  Rng rng(4);
  CrbScenario s = small_scenario(rng);
  s.Cp.setZero();
  s.sigma_c = 2.0;
  const Matrix F = expected_fisher_hybrid(s);
  const double BB = (with_unit_first_row(s.Bt).transpose() * with_unit_first_row(s.Bt))(0, 0);
  const double K = static_cast<double>(s.K());
  EXPECT_NEAR(F(0, 0), BB * K * 4.0 / (s.sigma_n * s.sigma_n), 1e-9 * F(0, 0));
}

TEST(ExpectedFisher, BayesianMatchesMonteCarlo) {
  Rng rng(5);
  const CrbScenario s = small_scenario(rng, BoundMode::bayesian);
  const int N = 40000;
  Matrix acc = Matrix::Zero(expected_fisher_bayesian(s).rows(), expected_fisher_bayesian(s).cols());
  for (int n = 0; n < N; ++n) {
    const Matrix At = s.At + randn(s.At.rows(), s.At.cols(), rng, s.sigma_A);
    const Matrix Bt = s.Bt + randn(s.Bt.rows(), s.Bt.cols(), rng, s.sigma_B);
    const Matrix Apt = s.Apt + randn(s.Apt.rows(), s.Apt.cols(), rng, s.sigma_Ap);
    const Matrix Bpt = s.Bpt + randn(s.Bpt.rows(), s.Bpt.cols(), rng, s.sigma_Bp);
    const Matrix Cp = s.Cp + randn(s.Cp.rows(), s.Cp.cols(), rng, s.sigma_Cp);
    const Matrix C = s.H * Cp + randn(s.K(), s.R(), rng, s.sigma_c);
    const CpModel m{with_unit_first_row(At), with_unit_first_row(Bt), C};
    const CpModel mp{with_unit_first_row(Apt), with_unit_first_row(Bpt), Cp};
    acc += block_diag(fisher_oracle(m, s.sigma_n), fisher_oracle(mp, s.sigma_np));
  }
  acc /= N;
  const Matrix got = expected_fisher_bayesian(s);
  EXPECT_LT((got - acc).norm(), 0.03 * got.norm());
}

TEST(ExpectedFisher, BayesianWithVanishingPriorsIsHybrid) {
  Rng rng(6);
  CrbScenario b = small_scenario(rng, BoundMode::bayesian);
  b.sigma_A = b.sigma_B = b.sigma_Ap = b.sigma_Bp = b.sigma_Cp = 1e-9;
  CrbScenario h = b;
  h.mode = BoundMode::hybrid;
  const Matrix Fh = expected_fisher_hybrid(h);
  EXPECT_LT((expected_fisher_bayesian(b) - Fh).norm(), 1e-10 * Fh.norm());
}

TEST(PriorMatrix, HandExample) {
  CrbScenario s;
  s.At = Matrix::Ones(1, 1);
  s.Bt = Matrix::Ones(1, 1);
  s.Apt = Matrix::Ones(1, 1);
  s.Bpt = Matrix::Ones(1, 1);
  s.Cp = Matrix::Ones(1, 1);
  s.H.resize(2, 1);
  s.H << 1, 2;
  s.sigma_c = 0.5;
  // blocks: A~(1) B~(1) C(2) A'~(1) B'~(1) C'(1)
  Matrix expect = Matrix::Zero(7, 7);
  expect(2, 2) = expect(3, 3) = 4;
  expect(6, 6) = 20;
  expect(2, 6) = expect(6, 2) = -4;
  expect(3, 6) = expect(6, 3) = -8;
  EXPECT_LT((prior_matrix(s) - expect).norm(), 1e-14);

  s.mode = BoundMode::bayesian;
  s.sigma_A = 1.0;
  s.sigma_B = 0.5;
  s.sigma_Ap = 0.25;
  s.sigma_Bp = 2.0;
  s.sigma_Cp = 1.0;
  expect(0, 0) = 1;
  expect(1, 1) = 4;
  expect(4, 4) = 16;
  expect(5, 5) = 0.25;
  expect(6, 6) = 21;
  EXPECT_LT((prior_matrix(s) - expect).norm(), 1e-14);
}

TEST(Bound, PositiveAndInverseOfInformation) {
  Rng rng(7);
  for (auto mode : {BoundMode::hybrid, BoundMode::bayesian}) {
    const CrbScenario s = small_scenario(rng, mode);
    const auto b = bound(s);
    EXPECT_GT(b.per_parameter.minCoeff(), 0.0);
    const Matrix Jm = (mode == BoundMode::hybrid ? expected_fisher_hybrid(s) : expected_fisher_bayesian(s)) +
                      prior_matrix(s);
    const Matrix Id = Matrix::Identity(Jm.rows(), Jm.cols());
    EXPECT_LT((b.matrix * Jm - Id).norm(), 1e-8);
    double total = 0;
    for (int k = 0; k < 6; ++k) total += b.block_trace(k);
    EXPECT_NEAR(total, b.per_parameter.sum(), 1e-12 * total);
  }
}

TEST(Bound, CouplingBoundOnCpIsMonotoneInSigmaC) {
  Rng rng(8);
  CrbScenario s = small_scenario(rng);
  double prev = 0.0;
  for (double sc : {1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0}) {
    s.sigma_c = sc;
    const double t = bound(s).block_trace(5);
    EXPECT_GE(t, prev * (1 - 1e-9)) << sc;
    prev = t;
  }
}

TEST(Bound, WeakCouplingReducesToPrimedBound) {
  Rng rng(9);
  CrbScenario s = small_scenario(rng);
  s.sigma_c = 1e3;
  const auto b = bound(s);
  const Matrix Fp = fisher_oracle(primed(s), s.sigma_np);
  const Matrix Bp = Fp.inverse();
  const Index n = s.Cp.size();
  const Index o = b.offsets[5] - b.offsets[3];
  const Matrix got = b.matrix.bottomRightCorner(n, n);
  const Matrix expect = Bp.block(o, o, n, n);
  EXPECT_LT((got - expect).norm(), 1e-4 * expect.norm());
}

TEST(Bound, LabelsAreABijection) {
  Rng rng(10);
  const CrbScenario s = small_scenario(rng);
  const auto b = bound(s);
  ASSERT_EQ(static_cast<Index>(b.block_index.size()), b.per_parameter.size());
  std::set<std::string> names;
  for (const auto& l : b.block_index) names.insert(to_string(l));
  EXPECT_EQ(names.size(), b.block_index.size());
  EXPECT_EQ(to_string(b.block_index.front()), "A(2,1)");
  EXPECT_EQ(to_string(b.block_index.back()), "C'(3,2)");
  EXPECT_EQ(b.offsets[6], b.per_parameter.size());
}

TEST(Bound, SingularSystemNamesBlock) {
  Rng rng(11);
  CrbScenario s = small_scenario(rng);
  s.Cp.col(1).setZero();  // A'~ and B'~ of component 2 leave the model
  try {
    bound(s);
    FAIL() << "expected SingularSystemError";
  } catch (const SingularSystemError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("deficient block"), std::string::npos) << msg;
    EXPECT_TRUE(msg.find("A'~") != std::string::npos || msg.find("B'~") != std::string::npos) << msg;
  }
}

TEST(Bound, RejectsInvalidScenario) {
  Rng rng(12);
  CrbScenario s = small_scenario(rng);
  s.sigma_c = 0.0;
  EXPECT_THROW(bound(s), std::invalid_argument);
  CrbScenario t = small_scenario(rng);
  t.H = randn(4, 2, rng);
  EXPECT_THROW(bound(t), DimensionError);
  CrbScenario u = small_scenario(rng, BoundMode::bayesian);
  u.sigma_Cp = 0.0;
  EXPECT_THROW(bound(u), std::invalid_argument);
}
