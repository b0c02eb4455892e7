#pragma once

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "assignment.hpp"
#include "coupling.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "rng.hpp"
#include "sylvester.hpp"
#include "tensor.hpp"

namespace cpfuse {

enum class UpdateMode { joint, sequential };

/// How the column scale of A, B and A' is fixed after each update. `l2` gives
/// unit-norm columns; `first_row` divides each column by its first entry.
enum class FactorScaling { l2, first_row };

struct AlsConfig {
  int k_max = 500;
  double delta_min = 1e-8;
  int restarts = 5;
  bool warm_start = true;
  int warm_iters = 1000;
  UpdateMode update_mode = UpdateMode::joint;
  /// Hard coupling replaces the flexible one when sigma_c / min(sigma_n, sigma_n')
  /// drops below this ratio.
  double hard_threshold = 1e-3;
  FactorScaling scaling = FactorScaling::l2;

  void validate() const {
    if (k_max < 1) throw std::invalid_argument("AlsConfig: k_max must be >= 1");
    if (delta_min < 0) throw std::invalid_argument("AlsConfig: delta_min must be >= 0");
    if (restarts < 1) throw std::invalid_argument("AlsConfig: restarts must be >= 1");
    if (warm_iters < 0) throw std::invalid_argument("AlsConfig: warm_iters must be >= 0");
  }
};

enum class Termination { converged, max_iters };

inline const char* to_string(Termination t) {
  return t == Termination::converged ? "converged" : "max_iters";
}

struct SolveTrace {
  /// Objective before the first iteration, then after each iteration.
  std::vector<double> objective_per_iter;
  int iterations = 0;
  Termination termination = Termination::max_iters;
  int restart_index = 0;
  bool hard_mode = false;
  int reseeded_columns = 0;
  int fallback_solves = 0;

  double final_objective() const {
    return objective_per_iter.empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : objective_per_iter.back();
  }
};

struct UncoupledSolution {
  CpModel model;
  SolveTrace trace;
};

struct CoupledSolution {
  CpModel model;
  CpModel model_p;
  SolveTrace trace;
};

namespace detail {

inline CpModel random_model(std::array<Index, 3> dims, Index R, Rng& rng) {
  return {randn(dims[0], R, rng), randn(dims[1], R, rng), randn(dims[2], R, rng)};
}

/// Fixes the scale of every column of F per `scaling` and multiplies the
/// removed scale into the matching column of `absorb`. Degenerate columns are
/// redrawn from `rng`.
inline void rescale_into(Matrix& F, Matrix& absorb, FactorScaling scaling, Rng& rng,
                         int& reseeded) {
  for (Index r = 0; r < F.cols(); ++r) {
    double s = scaling == FactorScaling::l2 ? F.col(r).norm() : F(0, r);
    if (!std::isfinite(s) || std::abs(s) < 1e-300 ||
        (scaling == FactorScaling::first_row && std::abs(s) < 1e-12 * F.col(r).norm())) {
      F.col(r) = randn(F.rows(), 1, rng);
      ++reseeded;
      s = scaling == FactorScaling::l2 ? F.col(r).norm() : F(0, r);
    }
    F.col(r) /= s;
    absorb.col(r) *= s;
  }
}

struct Unfoldings {
  Matrix Y1, Y2, Y3;
  explicit Unfoldings(const DenseTensor3& Y) : Y1(unfold(Y, 1)), Y2(unfold(Y, 2)), Y3(unfold(Y, 3)) {}
};

inline double residual(const Matrix& Y3, const CpModel& m) {
  return (Y3 - cp_unfold3(m)).squaredNorm();
}

inline bool relative_stop(double prev, double cur, double first, double delta_min) {
  if (first == 0.0) return true;
  return std::abs((cur - prev) / first) <= delta_min;
}

}  // namespace detail

/// Standard ALS for one tensor: each factor is the least-squares solution
/// against the current Khatri-Rao design, A and B are rescaled per
/// cfg.scaling with the scale moved into C. Objective is ||Y - (A,B,C)||_F^2.
inline UncoupledSolution uncoupled_als_from(const DenseTensor3& Y, CpModel init,
                                            const AlsConfig& cfg, Rng& rng, int k_max) {
  init.validate();
  if (init.dims() != Y.dims()) throw DimensionError("uncoupled_als: init dims differ from data");
  const detail::Unfoldings U(Y);
  SolveTrace trace;
  CpModel m = std::move(init);
  trace.objective_per_iter.push_back(detail::residual(U.Y3, m));
  const double first = trace.objective_per_iter.front();
  for (int k = 1; k <= k_max; ++k) {
    m.A = solve_right_pinv(U.Y1, khatri_rao(m.C, m.B));
    detail::rescale_into(m.A, m.C, cfg.scaling, rng, trace.reseeded_columns);
    m.B = solve_right_pinv(U.Y2, khatri_rao(m.C, m.A));
    detail::rescale_into(m.B, m.C, cfg.scaling, rng, trace.reseeded_columns);
    m.C = solve_right_pinv(U.Y3, khatri_rao(m.B, m.A));
    const double obj = detail::residual(U.Y3, m);
    const double prev = trace.objective_per_iter.back();
    trace.objective_per_iter.push_back(obj);
    trace.iterations = k;
    if (detail::relative_stop(prev, obj, first, cfg.delta_min)) {
      trace.termination = Termination::converged;
      break;
    }
  }
  return {std::move(m), std::move(trace)};
}

/// Uncoupled ALS from a random N(0,1) initialization, run for cfg.k_max
/// iterations at most.
inline UncoupledSolution uncoupled_als(const DenseTensor3& Y, Index R, const AlsConfig& cfg,
                                       Rng& rng) {
  if (R < 1) throw std::invalid_argument("uncoupled_als: R must be >= 1");
  cfg.validate();
  auto init = detail::random_model(Y.dims(), R, rng);
  return uncoupled_als_from(Y, std::move(init), cfg, rng, cfg.k_max);
}

// ---------------------------------------------------------------------------
// Component alignment
// ---------------------------------------------------------------------------

struct Alignment {
  std::vector<Index> perm;    ///< perm[r]: candidate column placed at position r
  std::vector<double> signs;  ///< sign applied to the moved candidate column
  double cost = 0.0;
};

/// Pairwise cost of matching reference column r with candidate column s
/// under the coupling family, before any sign choice.
inline Alignment align_permutation(const Matrix& C, const Matrix& Cp, const CouplingSpec& spec) {
  if (C.cols() != Cp.cols()) throw DimensionError("align_components: component counts differ");
  const Index R = C.cols();
  const auto mask = coupled_mask(spec, R);
  Matrix cost = Matrix::Zero(R, R);
  Matrix flip = Matrix::Ones(R, R);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, HybridGaussianCoupling> ||
                      std::is_same_v<T, HardCoupling>) {
          const Matrix HC = s.H * C, HCp = s.Hp * Cp;
          for (Index r = 0; r < R; ++r) {
            if (!mask[static_cast<std::size_t>(r)]) continue;
            for (Index q = 0; q < R; ++q) {
              const double plus = (HC.col(r) - HCp.col(q)).squaredNorm();
              const double minus = (HC.col(r) + HCp.col(q)).squaredNorm();
              cost(r, q) = std::min(plus, minus);
              flip(r, q) = minus < plus ? -1.0 : 1.0;
            }
          }
        } else if constexpr (std::is_same_v<T, TweedieCoupling>) {
          for (Index r = 0; r < R; ++r)
            for (Index q = 0; q < R; ++q)
              cost(r, q) = beta_divergence_sum(Matrix(C.col(r)), Matrix(Cp.col(q)), s.beta_c);
        } else if constexpr (std::is_same_v<T, LaplaceCoupling>) {
          for (Index r = 0; r < R; ++r)
            for (Index q = 0; q < R; ++q) cost(r, q) = (C.col(r) - Cp.col(q)).lpNorm<1>();
        } else {
          for (Index r = 0; r < R; ++r)
            for (Index q = 0; q < R; ++q)
              cost(r, q) = ((C.col(r) - Cp.col(q)) / s.delta_c).array().square().log1p().sum();
        }
      },
      spec);
  Alignment out;
  out.perm = hungarian(cost);
  out.cost = assignment_cost(cost, out.perm);
  out.signs.resize(static_cast<std::size_t>(R));
  for (Index r = 0; r < R; ++r) out.signs[r] = flip(r, out.perm[r]);
  return out;
}

/// Permutes (and sign-corrects) the columns of `candidate` so that its C
/// matches `reference`'s C under the coupling cost. A sign flip on C' is
/// compensated on A'.
inline CpModel align_components(const CpModel& reference, const CpModel& candidate,
                                const CouplingSpec& spec) {
  if (reference.rank() != candidate.rank())
    throw DimensionError("align_components: component counts differ");
  const auto al = align_permutation(reference.C, candidate.C, spec);
  CpModel out = candidate.permuted(al.perm);
  for (Index r = 0; r < out.rank(); ++r)
    if (al.signs[r] < 0) {
      out.C.col(r) *= -1.0;
      out.A.col(r) *= -1.0;
    }
  return out;
}

/// Like align_components, but for a partial mask the reference is permuted
/// as well. Only the coupled pairs are scored: the m best-matching pairs
/// (m = number of coupled slots) are chosen by an assignment padded with
/// R - m free rows and columns, and the leftovers fill the uncoupled slots.
inline std::pair<CpModel, CpModel> align_pair(const CpModel& reference, const CpModel& candidate,
                                              const CouplingSpec& spec) {
  const Index R = reference.rank();
  if (candidate.rank() != R) throw DimensionError("align_pair: component counts differ");
  const auto mask = coupled_mask(spec, R);
  const auto* g = std::get_if<HybridGaussianCoupling>(&spec);
  const Index m = static_cast<Index>(std::count(mask.begin(), mask.end(), true));
  if (!g || m == R) return {reference, align_components(reference, candidate, spec)};

  const Matrix HC = g->H * reference.C, HCp = g->Hp * candidate.C;
  const Index n = 2 * R - m;
  Matrix cost = Matrix::Zero(n, n);
  Matrix flip = Matrix::Ones(R, R);
  for (Index r = 0; r < R; ++r)
    for (Index q = 0; q < R; ++q) {
      const double plus = (HC.col(r) - HCp.col(q)).squaredNorm();
      const double minus = (HC.col(r) + HCp.col(q)).squaredNorm();
      cost(r, q) = std::min(plus, minus);
      flip(r, q) = minus < plus ? -1.0 : 1.0;
    }
  cost.bottomRightCorner(R - m, R - m).setConstant(1e3 * (1.0 + cost.topLeftCorner(R, R).sum()));
  const auto match = hungarian(cost);

  std::vector<Index> coupled_ref, coupled_cand, free_ref, free_cand;
  std::vector<bool> cand_used(static_cast<std::size_t>(R), false);
  for (Index r = 0; r < R; ++r) {
    const Index q = match[static_cast<std::size_t>(r)];
    if (q < R) {
      coupled_ref.push_back(r);
      coupled_cand.push_back(q);
      cand_used[static_cast<std::size_t>(q)] = true;
    } else {
      free_ref.push_back(r);
    }
  }
  for (Index q = 0; q < R; ++q)
    if (!cand_used[static_cast<std::size_t>(q)]) free_cand.push_back(q);

  std::vector<Index> ref_perm(static_cast<std::size_t>(R)), cand_perm(static_cast<std::size_t>(R));
  std::vector<double> signs(static_cast<std::size_t>(R), 1.0);
  std::size_t ic = 0, iu = 0;
  for (std::size_t slot = 0; slot < mask.size(); ++slot) {
    if (mask[slot]) {
      ref_perm[slot] = coupled_ref[ic];
      cand_perm[slot] = coupled_cand[ic];
      signs[slot] = flip(coupled_ref[ic], coupled_cand[ic]);
      ++ic;
    } else {
      ref_perm[slot] = free_ref[iu];
      cand_perm[slot] = free_cand[iu];
      ++iu;
    }
  }
  CpModel ref = reference.permuted(ref_perm), cand = candidate.permuted(cand_perm);
  for (Index r = 0; r < R; ++r)
    if (signs[static_cast<std::size_t>(r)] < 0) {
      cand.C.col(r) *= -1.0;
      cand.A.col(r) *= -1.0;
    }
  return {std::move(ref), std::move(cand)};
}

// ---------------------------------------------------------------------------
// Coupled factor updates
// ---------------------------------------------------------------------------

/// Everything the C/C' block solve needs, with A, B, A', B' held fixed.
struct CoupledBlockState {
  Matrix D, Dp;    ///< Khatri-Rao Gram matrices (B kr A)^T (B kr A), primed alike
  Matrix M, Mp;    ///< Y_(3) (B kr A) and Y'_(3) (B' kr A')
  double w = 1.0;  ///< 1 / sigma_n^2
  double wp = 1.0; ///< 1 / sigma_n'^2
  Matrix H, Hp;
  double kappa = 0.0;  ///< 1 / sigma_c^2
  std::vector<bool> mask;
  Matrix C, Cp;  ///< current iterates (used by the sequential mode)

  static CoupledBlockState make(const Matrix& Y3, const Matrix& Y3p, const CpModel& m,
                                const CpModel& mp, double sigma_n, double sigma_np,
                                const Matrix& H, const Matrix& Hp, double sigma_c,
                                std::vector<bool> mask) {
    CoupledBlockState s;
    const Matrix KR = khatri_rao(m.B, m.A), KRp = khatri_rao(mp.B, mp.A);
    s.D = (m.A.transpose() * m.A).cwiseProduct(m.B.transpose() * m.B);
    s.Dp = (mp.A.transpose() * mp.A).cwiseProduct(mp.B.transpose() * mp.B);
    s.M = Y3 * KR;
    s.Mp = Y3p * KRp;
    s.w = 1.0 / (sigma_n * sigma_n);
    s.wp = 1.0 / (sigma_np * sigma_np);
    s.H = H;
    s.Hp = Hp;
    s.kappa = std::isfinite(sigma_c) ? 1.0 / (sigma_c * sigma_c) : 0.0;
    s.mask = std::move(mask);
    s.C = m.C;
    s.Cp = mp.C;
    return s;
  }
};

struct CoupledFactors {
  Matrix C, Cp;
  bool fallback = false;
};

namespace detail {

inline bool all_coupled(const std::vector<bool>& mask) {
  return std::all_of(mask.begin(), mask.end(), [](bool b) { return b; });
}

// Data-term Hessian block w * (D kron I_K) added into G at (offset, offset).
inline void add_gram_kron_identity(Matrix& G, Index offset, const Matrix& D, Index K, double w) {
  const Index R = D.rows();
  for (Index r = 0; r < R; ++r)
    for (Index s = 0; s < R; ++s)
      G.block(offset + r * K, offset + s * K, K, K).diagonal().array() += w * D(r, s);
}

inline Vector solve_spd(const Matrix& G, const Vector& b, bool& fallback) {
  Eigen::LLT<Matrix> llt(G);
  if (llt.info() == Eigen::Success) {
    Vector x = llt.solve(b);
    if (x.allFinite()) return x;
  }
  fallback = true;
  return G.completeOrthogonalDecomposition().solve(b);
}

inline Matrix as_matrix(const Vector& v, Index offset, Index rows, Index cols) {
  return Eigen::Map<const Matrix>(v.data() + offset, rows, cols);
}

inline Vector as_vector(const Matrix& M) {
  return Eigen::Map<const Vector>(M.data(), M.size());
}

}  // namespace detail

namespace detail {

inline CoupledFactors joint_stacked_solve(const CoupledBlockState& s) {
  const Index K = s.H.cols(), Kp = s.Hp.cols(), R = s.D.rows();
  const Index n1 = K * R, n2 = Kp * R;
  Matrix G = Matrix::Zero(n1 + n2, n1 + n2);
  detail::add_gram_kron_identity(G, 0, s.D, K, s.w);
  detail::add_gram_kron_identity(G, n1, s.Dp, Kp, s.wp);
  if (s.kappa > 0.0) {
    const Matrix HtH = s.kappa * s.H.transpose() * s.H;
    const Matrix HptHp = s.kappa * s.Hp.transpose() * s.Hp;
    const Matrix HtHp = s.kappa * s.H.transpose() * s.Hp;
    for (Index r = 0; r < R; ++r) {
      if (!s.mask[static_cast<std::size_t>(r)]) continue;
      G.block(r * K, r * K, K, K) += HtH;
      G.block(n1 + r * Kp, n1 + r * Kp, Kp, Kp) += HptHp;
      G.block(r * K, n1 + r * Kp, K, Kp) -= HtHp;
      G.block(n1 + r * Kp, r * K, Kp, K) -= HtHp.transpose();
    }
  }
  Vector b(n1 + n2);
  b.head(n1) = s.w * detail::as_vector(s.M);
  b.tail(n2) = s.wp * detail::as_vector(s.Mp);
  CoupledFactors out;
  const Vector x = detail::solve_spd(G, b, out.fallback);
  out.C = detail::as_matrix(x, 0, K, R);
  out.Cp = detail::as_matrix(x, n1, Kp, R);
  return out;
}

// H = H' = I: the normal equations separate by row and share one 2R x 2R matrix.
inline CoupledFactors joint_rowwise_solve(const CoupledBlockState& s) {
  const Index R = s.D.rows(), K = s.M.rows();
  Matrix G = Matrix::Zero(2 * R, 2 * R);
  G.topLeftCorner(R, R) = s.w * s.D;
  G.bottomRightCorner(R, R) = s.wp * s.Dp;
  for (Index r = 0; r < R; ++r) {
    if (!s.mask[static_cast<std::size_t>(r)]) continue;
    G(r, r) += s.kappa;
    G(R + r, R + r) += s.kappa;
    G(r, R + r) -= s.kappa;
    G(R + r, r) -= s.kappa;
  }
  Matrix rhs(2 * R, K);
  rhs.topRows(R) = s.w * s.M.transpose();
  rhs.bottomRows(R) = s.wp * s.Mp.transpose();
  CoupledFactors out;
  Matrix X;
  Eigen::LLT<Matrix> llt(G);
  if (llt.info() == Eigen::Success) X = llt.solve(rhs);
  if (llt.info() != Eigen::Success || !X.allFinite()) {
    out.fallback = true;
    X = G.completeOrthogonalDecomposition().solve(rhs);
  }
  out.C = X.topRows(R).transpose();
  out.Cp = X.bottomRows(R).transpose();
  return out;
}

}  // namespace detail

/// Joint minimization over (C, C') of the C-dependent part of
///   w ||Y_(3) - C (B kr A)^T||^2 + w' ||Y'_(3) - C' (B' kr A')^T||^2
///   + kappa ||H C_S - H' C'_S||^2
/// through the stacked normal equations in [vec C; vec C'].
inline CoupledFactors update_coupled_factors_joint(const CoupledBlockState& s) {
  if (s.H.cols() == s.Hp.cols() && s.H.rows() == s.H.cols() && s.H.isIdentity(0.0) &&
      s.Hp.isIdentity(0.0))
    return detail::joint_rowwise_solve(s);
  return detail::joint_stacked_solve(s);
}

namespace detail {

// Solves kappa * HtH * X * Sel + w * X * D = Rhs for X.
inline Matrix solve_masked_sylvester(const Matrix& HtH, const Matrix& D, double w,
                                     const std::vector<bool>& mask, const Matrix& Rhs,
                                     bool& fallback) {
  if (all_coupled(mask)) return sylvester_solve(HtH, w * D, Rhs);
  const Index K = HtH.rows(), R = D.rows();
  Matrix G = Matrix::Zero(K * R, K * R);
  add_gram_kron_identity(G, 0, D, K, w);
  for (Index r = 0; r < R; ++r)
    if (mask[static_cast<std::size_t>(r)]) G.block(r * K, r * K, K, K) += HtH;
  return as_matrix(solve_spd(G, as_vector(Rhs), fallback), 0, K, R);
}

inline Matrix mask_columns(Matrix M, const std::vector<bool>& mask) {
  for (Index r = 0; r < M.cols(); ++r)
    if (!mask[static_cast<std::size_t>(r)]) M.col(r).setZero();
  return M;
}

}  // namespace detail

/// Block-coordinate version: C from its own normal equations with C' fixed
/// at its previous value, then C' with the new C.
inline CoupledFactors update_coupled_factors_sequential(const CoupledBlockState& s) {
  CoupledFactors out;
  const Matrix HtH = s.kappa * s.H.transpose() * s.H;
  const Matrix HptHp = s.kappa * s.Hp.transpose() * s.Hp;
  const Matrix rhs_c =
      s.w * s.M + detail::mask_columns(s.kappa * s.H.transpose() * (s.Hp * s.Cp), s.mask);
  if (s.kappa > 0.0)
    out.C = detail::solve_masked_sylvester(HtH, s.D, s.w, s.mask, rhs_c, out.fallback);
  else
    out.C = s.M * symmetric_pinv(s.D);
  const Matrix rhs_cp =
      s.wp * s.Mp + detail::mask_columns(s.kappa * s.Hp.transpose() * (s.H * out.C), s.mask);
  if (s.kappa > 0.0)
    out.Cp = detail::solve_masked_sylvester(HptHp, s.Dp, s.wp, s.mask, rhs_cp, out.fallback);
  else
    out.Cp = s.Mp * symmetric_pinv(s.Dp);
  return out;
}

/// Equality-coupled update: minimizes the two data terms subject to
/// H c_r = H' c'_r on the coupled columns.
inline CoupledFactors update_coupled_factors_hard(const CoupledBlockState& s) {
  const Index K = s.H.cols(), Kp = s.Hp.cols(), R = s.D.rows();
  CoupledFactors out;
  const bool identity = K == Kp && s.H.rows() == K && s.H.isIdentity(0.0) &&
                        s.Hp.isIdentity(0.0) && detail::all_coupled(s.mask);
  if (identity) {
    const Matrix shared = (s.w * s.M + s.wp * s.Mp) * symmetric_pinv(s.w * s.D + s.wp * s.Dp);
    out.C = shared;
    out.Cp = shared;
    return out;
  }
  // Null-space parameterization of the constraint rows [H, -H'] per coupled column.
  const Index n1 = K * R, n2 = Kp * R, L = s.H.rows();
  Index ncoupled = 0;
  for (bool b : s.mask) ncoupled += b;
  Matrix Ceq = Matrix::Zero(L * ncoupled, n1 + n2);
  for (Index r = 0, row = 0; r < R; ++r) {
    if (!s.mask[static_cast<std::size_t>(r)]) continue;
    Ceq.block(row, r * K, L, K) = s.H;
    Ceq.block(row, n1 + r * Kp, L, Kp) = -s.Hp;
    row += L;
  }
  Eigen::JacobiSVD<Matrix> svd(Ceq, Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const double tol = 1e-10 * (sv.size() ? sv(0) : 1.0);
  Index rank = 0;
  while (rank < sv.size() && sv(rank) > tol) ++rank;
  const Matrix N = svd.matrixV().rightCols(n1 + n2 - rank);
  Matrix G = Matrix::Zero(n1 + n2, n1 + n2);
  detail::add_gram_kron_identity(G, 0, s.D, K, s.w);
  detail::add_gram_kron_identity(G, n1, s.Dp, Kp, s.wp);
  Vector b(n1 + n2);
  b.head(n1) = s.w * detail::as_vector(s.M);
  b.tail(n2) = s.wp * detail::as_vector(s.Mp);
  Vector x = Vector::Zero(n1 + n2);
  if (N.cols() > 0) {
    const Matrix Gr = N.transpose() * G * N;
    x = N * detail::solve_spd(Gr, N.transpose() * b, out.fallback);
  }
  out.C = detail::as_matrix(x, 0, K, R);
  out.Cp = detail::as_matrix(x, n1, Kp, R);
  return out;
}

// ---------------------------------------------------------------------------
// Coupled ALS
// ---------------------------------------------------------------------------

struct GaussianCouplingView {
  Matrix H, Hp;
  double sigma_c = 0.0;  ///< 0 for hard couplings
  bool hard = false;
  std::vector<bool> mask;
};

namespace detail {

inline GaussianCouplingView gaussian_view(const CoupledProblem& p, const AlsConfig& cfg) {
  const auto* gn = std::get_if<GaussianNoise>(&p.noise);
  const auto* gnp = std::get_if<GaussianNoise>(&p.noise_p);
  if (!gn || !gnp) throw std::invalid_argument("coupled_als: Gaussian likelihoods required");
  GaussianCouplingView v;
  v.mask = coupled_mask(p.coupling, p.R);
  if (const auto* h = std::get_if<HybridGaussianCoupling>(&p.coupling)) {
    v.H = h->H;
    v.Hp = h->Hp;
    v.sigma_c = h->sigma_c;
    v.hard = h->sigma_c / std::min(gn->sigma, gnp->sigma) < cfg.hard_threshold;
  } else if (const auto* hc = std::get_if<HardCoupling>(&p.coupling)) {
    v.H = hc->H;
    v.Hp = hc->Hp;
    v.hard = true;
  } else {
    throw std::invalid_argument("coupled_als: hybrid Gaussian or hard coupling required");
  }
  return v;
}

}  // namespace detail

/// Objective used by the coupled ALS iterations. In hard mode the coupling
/// term is identically zero on the feasible set and is left out.
inline double coupled_als_objective(const Matrix& Y3, const Matrix& Y3p, const CpModel& m,
                                    const CpModel& mp, double sigma_n, double sigma_np,
                                    const GaussianCouplingView& v) {
  double obj = detail::residual(Y3, m) / (sigma_n * sigma_n) +
               detail::residual(Y3p, mp) / (sigma_np * sigma_np);
  if (!v.hard) {
    const Matrix Dif =
        v.H * detail::select_cols(m.C, v.mask) - v.Hp * detail::select_cols(mp.C, v.mask);
    obj += Dif.squaredNorm() / (v.sigma_c * v.sigma_c);
  }
  return obj;
}

/// Coupled ALS iterations from a given (aligned) starting point. A, B and A'
/// are rescaled each iteration (A, B scale into C; A' scale into B'), B', C
/// and C' are left unnormalized.
inline CoupledSolution coupled_als_from(const CoupledProblem& p, const AlsConfig& cfg,
                                        CpModel m, CpModel mp, Rng& rng, int k_max = -1) {
  validate_problem(p);
  cfg.validate();
  m.validate();
  mp.validate();
  if (m.dims() != p.Y.dims() || mp.dims() != p.Yp.dims())
    throw DimensionError("coupled_als: starting models do not match the data");
  if (m.rank() != mp.rank())
    throw DimensionError("coupled_als: both models need the same number of components");
  if (k_max < 0) k_max = cfg.k_max;
  const auto view = detail::gaussian_view(p, cfg);
  const double sn = std::get<GaussianNoise>(p.noise).sigma;
  const double snp = std::get<GaussianNoise>(p.noise_p).sigma;
  const detail::Unfoldings U(p.Y), Up(p.Yp);

  SolveTrace trace;
  trace.hard_mode = view.hard;
  detail::rescale_into(m.A, m.C, cfg.scaling, rng, trace.reseeded_columns);
  detail::rescale_into(m.B, m.C, cfg.scaling, rng, trace.reseeded_columns);
  detail::rescale_into(mp.A, mp.B, cfg.scaling, rng, trace.reseeded_columns);
  auto objective = [&] { return coupled_als_objective(U.Y3, Up.Y3, m, mp, sn, snp, view); };
  trace.objective_per_iter.push_back(objective());
  const double first = trace.objective_per_iter.front();

  for (int k = 1; k <= k_max; ++k) {
    m.A = solve_right_pinv(U.Y1, khatri_rao(m.C, m.B));
    detail::rescale_into(m.A, m.C, cfg.scaling, rng, trace.reseeded_columns);
    mp.A = solve_right_pinv(Up.Y1, khatri_rao(mp.C, mp.B));
    detail::rescale_into(mp.A, mp.B, cfg.scaling, rng, trace.reseeded_columns);
    m.B = solve_right_pinv(U.Y2, khatri_rao(m.C, m.A));
    detail::rescale_into(m.B, m.C, cfg.scaling, rng, trace.reseeded_columns);
    mp.B = solve_right_pinv(Up.Y2, khatri_rao(mp.C, mp.A));

    const auto state = CoupledBlockState::make(U.Y3, Up.Y3, m, mp, sn, snp, view.H, view.Hp,
                                               view.hard ? std::numeric_limits<double>::infinity()
                                                         : view.sigma_c,
                                               view.mask);
    CoupledFactors cf = view.hard ? update_coupled_factors_hard(state)
                        : cfg.update_mode == UpdateMode::joint
                            ? update_coupled_factors_joint(state)
                            : update_coupled_factors_sequential(state);
    trace.fallback_solves += cf.fallback;
    m.C = std::move(cf.C);
    mp.C = std::move(cf.Cp);

    const double obj = objective();
    const double prev = trace.objective_per_iter.back();
    trace.objective_per_iter.push_back(obj);
    trace.iterations = k;
    if (detail::relative_stop(prev, obj, first, cfg.delta_min)) {
      trace.termination = Termination::converged;
      break;
    }
  }
  return {std::move(m), std::move(mp), std::move(trace)};
}

/// Warm start for the coupled solvers: two uncoupled ALS runs, the second
/// aligned to the first under the coupling cost.
inline std::pair<CpModel, CpModel> als_warm_start(const CoupledProblem& p, const AlsConfig& cfg,
                                                  Rng& rng) {
  AlsConfig warm = cfg;
  warm.k_max = std::max(1, cfg.warm_iters);
  auto a = uncoupled_als(p.Y, p.R, warm, rng);
  auto b = uncoupled_als(p.Yp, p.Rp, warm, rng);
  return {std::move(a.model), align_components(a.model, b.model, p.coupling)};
}

/// Full coupled ALS with restarts; each restart draws its own stream from
/// `rng` up front and the run with the smallest final objective wins.
inline CoupledSolution coupled_als(const CoupledProblem& p, const AlsConfig& cfg, Rng& rng) {
  validate_problem(p);
  cfg.validate();
  if (p.R != p.Rp) throw DimensionError("coupled_als: R and R' must match");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(cfg.restarts));
  for (auto& s : seeds) s = rng();
  std::optional<CoupledSolution> best;
  for (int r = 0; r < cfg.restarts; ++r) {
    Rng local(seeds[static_cast<std::size_t>(r)]);
    CpModel m, mp;
    if (cfg.warm_start) {
      std::tie(m, mp) = als_warm_start(p, cfg, local);
    } else {
      m = detail::random_model(p.Y.dims(), p.R, local);
      mp = detail::random_model(p.Yp.dims(), p.Rp, local);
    }
    auto sol = coupled_als_from(p, cfg, std::move(m), std::move(mp), local);
    sol.trace.restart_index = r;
    if (!best || sol.trace.final_objective() < best->trace.final_objective())
      best = std::move(sol);
  }
  return std::move(*best);
}

}  // namespace cpfuse
