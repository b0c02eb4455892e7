#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "../als.hpp"
#include "../compress.hpp"
#include "../crb.hpp"
#include "../kernel.hpp"
#include "../mu.hpp"
#include "config.hpp"
#include "metrics.hpp"

namespace cpfuse::harness {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// One solver outcome on one trial at one sweep point.
struct ResultRow {
  std::string scenario;
  std::string method;
  std::string sweep_name;
  double sweep_value = 0.0;
  std::size_t sweep_index = 0;
  std::size_t trial = 0;
  /// Squared error summed over the entries of A, B, C, A', B', C'.
  std::array<double, 6> se{kNaN, kNaN, kNaN, kNaN, kNaN, kNaN};
  /// Squared error of C and C' split into coupled and uncoupled columns.
  double se_C_coupled = kNaN, se_C_uncoupled = kNaN;
  double se_Cp_coupled = kNaN, se_Cp_uncoupled = kNaN;
  /// Integrated squared error of the continuous-time components.
  double recon_C = kNaN, recon_Cp = kNaN;
  double objective = kNaN;
  int iterations = 0;
  std::string termination;
  double runtime_s = 0.0;
  std::string status = "ok";
};

/// Ground truth of one trial.
struct Truth {
  CpModel m, mp;
  Matrix alpha;  ///< sinusoid amplitudes (sampling-rate scenario)
};

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

namespace detail {

inline Matrix first_row_ones(Matrix M) {
  M.row(0).setOnes();
  return M;
}

inline Matrix l2_columns(const Matrix& M) { return normalize_columns(M, Norm::l2).matrix; }
inline Matrix l1_columns(const Matrix& M) { return normalize_columns(M, Norm::l1).matrix; }

inline DenseTensor3 standard_noise(std::array<Index, 3> d, Rng& rng) {
  DenseTensor3 E(d[0], d[1], d[2]);
  std::normal_distribution<double> n;
  for (auto& v : E.data()) v = n(rng);
  return E;
}

inline DenseTensor3 add_scaled(DenseTensor3 X, const DenseTensor3& E, double sigma) {
  for (std::size_t i = 0; i < X.data().size(); ++i) X.data()[i] += sigma * E.data()[i];
  return X;
}

inline double pearson(const Vector& x, const Vector& y) {
  const Vector a = x.array() - x.mean(), b = y.array() - y.mean();
  return a.dot(b) / (a.norm() * b.norm());
}

/// a2 = a1 + eps * g with eps chosen by bisection so corr(a1, a2) = target.
inline Vector collinear_partner(const Vector& a1, const Vector& g, double target) {
  auto corr = [&](double eps) { return pearson(a1, a1 + eps * g); };
  double lo = 0.0, hi = 1e-3;
  while (corr(hi) > target && hi < 1e6) hi *= 2;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (corr(mid) > target ? lo : hi) = mid;
  }
  return a1 + 0.5 * (lo + hi) * g;
}

inline std::vector<double> sample_times(Index count, double duration) {
  return uniform_grid(count, duration / static_cast<double>(count));
}

inline Matrix sampled_sines(const Matrix& alpha, const std::vector<double>& freqs,
                            const std::vector<double>& t) {
  Matrix C = Matrix::Zero(static_cast<Index>(t.size()), alpha.cols());
  for (Index k = 0; k < C.rows(); ++k)
    for (Index r = 0; r < C.cols(); ++r)
      for (std::size_t i = 0; i < freqs.size(); ++i)
        C(k, r) += alpha(static_cast<Index>(i), r) *
                   std::sin(2 * std::numbers::pi * freqs[i] * t[static_cast<std::size_t>(k)]);
  return C;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Deterministic factors of the similar-factors scenario: first rows of A, B,
/// A', B' equal to one, C' ~ N(0, 1). m.C holds C' (the mean of C).
inline Truth similar_factors_truth(const ExperimentConfig& c, Rng& rng) {
  using detail::first_row_ones;
  Truth t;
  t.m.A = first_row_ones(randn(c.I, c.R, rng));
  t.m.B = first_row_ones(randn(c.J, c.R, rng));
  t.mp.A = first_row_ones(randn(c.Ip, c.R, rng));
  t.mp.B = first_row_ones(randn(c.Jp, c.R, rng));
  t.mp.C = randn(c.Kp, c.R, rng);
  t.m.C = t.mp.C;
  return t;
}

/// l2-normalized A, B, A', B' and C' ~ N(0, 1); m.C holds C'.
inline Truth normalized_truth(const ExperimentConfig& c, Rng& rng) {
  using detail::l2_columns;
  Truth t;
  t.m.A = l2_columns(randn(c.I, c.R, rng));
  t.m.B = l2_columns(randn(c.J, c.R, rng));
  t.mp.A = l2_columns(randn(c.Ip, c.R, rng));
  t.mp.B = l2_columns(randn(c.Jp, c.R, rng));
  t.mp.C = randn(c.Kp, c.R, rng);
  t.m.C = t.mp.C;
  return t;
}

/// Positive factors (absolute Gaussians, l1 columns) with two nearly
/// collinear columns in A, and C ~ Gamma(1/phi_c, phi_c C').
inline Truth gamma_truth(const ExperimentConfig& c, Rng& rng) {
  using detail::l1_columns;
  Truth t;
  Matrix A = rand_abs_normal(c.I, c.R, rng);
  if (c.R >= 2) A.col(1) = detail::collinear_partner(A.col(0), rand_abs_normal(c.I, 1, rng).col(0), c.collinearity);
  t.m.A = l1_columns(A);
  t.m.B = l1_columns(rand_abs_normal(c.J, c.R, rng));
  t.mp.A = l1_columns(rand_abs_normal(c.Ip, c.R, rng));
  t.mp.B = l1_columns(rand_abs_normal(c.Jp, c.R, rng));
  t.mp.C = rand_abs_normal(c.Kp, c.R, rng);
  t.m.C = t.mp.C;
  for (Index i = 0; i < t.m.C.size(); ++i)
    t.m.C.data()[i] =
        std::gamma_distribution<double>(1.0 / c.phi_c, c.phi_c * t.mp.C.data()[i])(rng);
  return t;
}

/// l2-normalized A, B, A', B'; C and C' sample the same sum of sines on
/// their own grids over [0, duration).
inline Truth sines_truth(const ExperimentConfig& c, Rng& rng) {
  using detail::l2_columns;
  Truth t;
  t.m.A = l2_columns(randn(c.I, c.R, rng));
  t.m.B = l2_columns(randn(c.J, c.R, rng));
  t.mp.A = l2_columns(randn(c.Ip, c.R, rng));
  t.mp.B = l2_columns(randn(c.Jp, c.R, rng));
  t.alpha = randn(static_cast<Index>(c.frequencies.size()), c.R, rng);
  t.m.C = detail::sampled_sines(t.alpha, c.frequencies, detail::sample_times(c.K, c.duration));
  t.mp.C = detail::sampled_sines(t.alpha, c.frequencies, detail::sample_times(c.Kp, c.duration));
  return t;
}

inline DenseTensor3 gamma_observation(const DenseTensor3& X, double phi, Rng& rng) {
  DenseTensor3 Y = X;
  for (auto& v : Y.data()) v = std::gamma_distribution<double>(1.0 / phi, phi * v)(rng);
  return Y;
}

/// Interpolation matrices (L x K, L x K') of the sampling-rate coupling.
inline std::pair<Matrix, Matrix> interpolation_coupling(const ExperimentConfig& c, Index L) {
  const double step = c.duration / static_cast<double>(L);
  const auto tl = uniform_grid(L, step);
  const double P = c.kernel_period == "literal" ? static_cast<double>(L - 1) * step : c.duration;
  return {dirichlet_interpolation_matrix(tl, detail::sample_times(c.K, c.duration), c.K, P),
          dirichlet_interpolation_matrix(tl, detail::sample_times(c.Kp, c.duration), c.Kp, P)};
}

// ---------------------------------------------------------------------------
// Solver wrappers
// ---------------------------------------------------------------------------

/// Best of cfg.restarts random-start uncoupled ALS runs.
inline UncoupledSolution best_uncoupled_als(const DenseTensor3& Y, Index R, const AlsConfig& cfg,
                                            Rng& rng, int iters) {
  std::optional<UncoupledSolution> best;
  for (int r = 0; r < cfg.restarts; ++r) {
    auto sol = uncoupled_als_from(Y, cpfuse::detail::random_model(Y.dims(), R, rng), cfg, rng, iters);
    sol.trace.restart_index = r;
    if (!best || sol.trace.final_objective() < best->trace.final_objective()) best = std::move(sol);
  }
  return std::move(*best);
}

/// Every random-start uncoupled MU run (cfg.restarts of them).
inline std::vector<UncoupledSolution> uncoupled_mu_runs(const DenseTensor3& Y, const TweedieNoise& noise,
                                                        Index R, const MuConfig& cfg, Rng& rng) {
  std::vector<UncoupledSolution> runs;
  for (int r = 0; r < cfg.restarts; ++r) {
    runs.push_back(uncoupled_mu_from(Y, noise, cpfuse::detail::random_positive_model(Y.dims(), R, rng), cfg,
                                     rng, cfg.k_max));
    runs.back().trace.restart_index = r;
  }
  return runs;
}

inline const UncoupledSolution& best_of(const std::vector<UncoupledSolution>& runs) {
  return *std::min_element(runs.begin(), runs.end(), [](const auto& a, const auto& b) {
    return a.trace.final_objective() < b.trace.final_objective();
  });
}

inline UncoupledSolution best_uncoupled_mu(const DenseTensor3& Y, const TweedieNoise& noise, Index R,
                                           const MuConfig& cfg, Rng& rng) {
  return best_of(uncoupled_mu_runs(Y, noise, R, cfg, rng));
}

// ---------------------------------------------------------------------------
// Row construction
// ---------------------------------------------------------------------------

struct RowContext {
  const ExperimentConfig* cfg = nullptr;
  std::size_t sweep_index = 0;
  std::size_t trial = 0;
  Canon canon = Canon::l2;
};

inline ResultRow blank_row(const RowContext& ctx, const std::string& method) {
  ResultRow r;
  r.scenario = to_string(ctx.cfg->scenario);
  if (ctx.cfg->scenario == Scenario::sampling_rates)
    r.scenario += std::string("/") + to_string(ctx.cfg->variant);
  r.method = method;
  r.sweep_name = ctx.cfg->sweep_name();
  r.sweep_value = ctx.cfg->sweep[ctx.sweep_index];
  r.sweep_index = ctx.sweep_index;
  r.trial = ctx.trial;
  return r;
}

/// Aligns both estimates to the truth and fills the error columns.
inline ResultRow scored_row(const RowContext& ctx, const std::string& method, const CpModel& est,
                            const CpModel& est_p, const Truth& truth, const SolveTrace* trace) {
  ResultRow row = blank_row(ctx, method);
  const CpModel e = align_to_truth(est, truth.m, ctx.canon);
  const CpModel ep = align_to_truth(est_p, truth.mp, ctx.canon);
  for (int f = 0; f < 3; ++f) {
    row.se[static_cast<std::size_t>(f)] = squared_error(e.factor(f), truth.m.factor(f));
    row.se[static_cast<std::size_t>(f + 3)] = squared_error(ep.factor(f), truth.mp.factor(f));
  }
  std::vector<bool> mask(static_cast<std::size_t>(truth.m.rank()), ctx.cfg->coupled_cols.empty());
  for (Index c : ctx.cfg->coupled_cols)
    if (c >= 0 && c < truth.m.rank()) mask[static_cast<std::size_t>(c)] = true;
  row.se_C_coupled = row.se_C_uncoupled = row.se_Cp_coupled = row.se_Cp_uncoupled = 0.0;
  for (Index r = 0; r < truth.m.rank(); ++r) {
    const double sc = (e.C.col(r) - truth.m.C.col(r)).squaredNorm();
    const double scp = (ep.C.col(r) - truth.mp.C.col(r)).squaredNorm();
    (mask[static_cast<std::size_t>(r)] ? row.se_C_coupled : row.se_C_uncoupled) += sc;
    (mask[static_cast<std::size_t>(r)] ? row.se_Cp_coupled : row.se_Cp_uncoupled) += scp;
  }
  if (trace) {
    row.objective = trace->final_objective();
    row.iterations = trace->iterations;
    row.termination = to_string(trace->termination);
  }
  return row;
}

/// Runs `fn` and appends its row; failures become a row with the message.
inline void attempt(std::vector<ResultRow>& out, const RowContext& ctx, const std::string& method,
                    const std::function<ResultRow()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    ResultRow r = fn();
    if (r.runtime_s == 0.0) r.runtime_s = detail::seconds_since(t0);
    out.push_back(std::move(r));
  } catch (const std::exception& e) {
    ResultRow r = blank_row(ctx, method);
    r.status = std::string("error: ") + e.what();
    r.runtime_s = detail::seconds_since(t0);
    out.push_back(std::move(r));
  }
}

// ---------------------------------------------------------------------------
// Scenario trials
// ---------------------------------------------------------------------------

/// Shared state computed once per run (fixed ground truth).
struct RunContext {
  std::optional<Truth> fixed;
};

inline RunContext make_run_context(const ExperimentConfig& c) {
  RunContext ctx;
  if (c.fixed_truth) {
    Rng rng = derive_rng(c.seed, std::string(to_string(c.scenario)) + "/truth", 0);
    switch (c.scenario) {
      case Scenario::similar_factors: ctx.fixed = similar_factors_truth(c, rng); break;
      case Scenario::gamma_coupling: ctx.fixed = gamma_truth(c, rng); break;
      case Scenario::sampling_rates: ctx.fixed = sines_truth(c, rng); break;
      default: ctx.fixed = normalized_truth(c, rng); break;
    }
  }
  return ctx;
}

namespace detail {

inline void require_same_K(const ExperimentConfig& c) {
  if (c.K != c.Kp) throw DimensionError("scenario needs K == K'");
}

// Coupled ALS from the aligned pair of uncoupled solutions.
inline CoupledSolution coupled_from_uncoupled(const CoupledProblem& p, const AlsConfig& cfg,
                                              const CpModel& m, const CpModel& mp, Rng& rng,
                                              int k_max = -1) {
  auto [ref, cand] = align_pair(m, mp, p.coupling);
  return coupled_als_from(p, cfg, std::move(ref), std::move(cand), rng, k_max);
}

inline std::vector<ResultRow> similar_factors_trial(const ExperimentConfig& c, const RunContext& run,
                                                    std::size_t trial, Rng& rng) {
  require_same_K(c);
  const Truth base = run.fixed ? *run.fixed : similar_factors_truth(c, rng);
  const Matrix G = randn(c.K, c.R, rng);
  const DenseTensor3 E = standard_noise({c.I, c.J, c.K}, rng);
  const DenseTensor3 Yp = add_scaled(cp_to_tensor(base.mp), standard_noise({c.Ip, c.Jp, c.Kp}, rng), c.sigma_np);
  const auto unc_p = best_uncoupled_als(Yp, c.R, c.als, rng, c.als.warm_iters);
  std::vector<ResultRow> rows;
  for (std::size_t si = 0; si < c.sweep.size(); ++si) {
    const RowContext ctx{&c, si, trial, Canon::first_row};
    const double sc = 1.0 / c.sweep[si];
    Truth t = base;
    t.m.C = base.mp.C + sc * G;
    const DenseTensor3 Y = add_scaled(cp_to_tensor(t.m), E, c.sigma_n);
    std::optional<UncoupledSolution> unc;
    attempt(rows, ctx, "uncoupled", [&] {
      unc = best_uncoupled_als(Y, c.R, c.als, rng, c.als.warm_iters);
      return scored_row(ctx, "uncoupled", unc->model, unc_p.model, t, &unc->trace);
    });
    if (!unc) continue;
    CoupledProblem p{Y, Yp, GaussianNoise{c.sigma_n}, GaussianNoise{c.sigma_np},
                     HybridGaussianCoupling::direct(c.K, sc), c.R, c.R};
    attempt(rows, ctx, "flexible", [&] {
      const auto sol = coupled_from_uncoupled(p, c.als, unc->model, unc_p.model, rng);
      return scored_row(ctx, "flexible", sol.model, sol.model_p, t, &sol.trace);
    });
    p.coupling = HardCoupling::direct(c.K);
    attempt(rows, ctx, "hard", [&] {
      const auto sol = coupled_from_uncoupled(p, c.als, unc->model, unc_p.model, rng);
      return scored_row(ctx, "hard", sol.model, sol.model_p, t, &sol.trace);
    });
  }
  return rows;
}

inline std::vector<ResultRow> shared_component_trial(const ExperimentConfig& c, const RunContext& run,
                                                     std::size_t trial, Rng& rng) {
  require_same_K(c);
  const Truth base = run.fixed ? *run.fixed : normalized_truth(c, rng);
  const Matrix G = randn(c.K, c.R, rng);
  const Matrix Cfree = randn(c.K, c.R, rng);
  const DenseTensor3 E = standard_noise({c.I, c.J, c.K}, rng);
  const DenseTensor3 Yp = add_scaled(cp_to_tensor(base.mp), standard_noise({c.Ip, c.Jp, c.Kp}, rng), c.sigma_np);
  const auto unc_p = best_uncoupled_als(Yp, c.R, c.als, rng, c.als.warm_iters);
  const auto mask = coupled_mask(HybridGaussianCoupling::direct(c.K, 1.0, c.coupled_cols), c.R);
  std::vector<ResultRow> rows;
  for (std::size_t si = 0; si < c.sweep.size(); ++si) {
    const RowContext ctx{&c, si, trial, Canon::l2};
    const double sc = c.sweep[si];
    Truth t = base;
    for (Index r = 0; r < c.R; ++r)
      t.m.C.col(r) = mask[static_cast<std::size_t>(r)] ? Vector(base.mp.C.col(r) + sc * G.col(r))
                                                       : Vector(Cfree.col(r));
    const DenseTensor3 Y = add_scaled(cp_to_tensor(t.m), E, c.sigma_n);
    std::optional<UncoupledSolution> unc;
    attempt(rows, ctx, "uncoupled", [&] {
      unc = best_uncoupled_als(Y, c.R, c.als, rng, c.als.warm_iters);
      return scored_row(ctx, "uncoupled", unc->model, unc_p.model, t, &unc->trace);
    });
    if (!unc) continue;
    const CoupledProblem p{Y, Yp, GaussianNoise{c.sigma_n}, GaussianNoise{c.sigma_np},
                           HybridGaussianCoupling::direct(c.K, sc, c.coupled_cols), c.R, c.R};
    attempt(rows, ctx, "flexible", [&] {
      const auto sol = coupled_from_uncoupled(p, c.als, unc->model, unc_p.model, rng);
      return scored_row(ctx, "flexible", sol.model, sol.model_p, t, &sol.trace);
    });
  }
  return rows;
}

inline std::vector<ResultRow> compressed_trial(const ExperimentConfig& c, const RunContext& run,
                                               std::size_t trial, Rng& rng) {
  require_same_K(c);
  Truth base = run.fixed ? *run.fixed : normalized_truth(c, rng);
  Truth t = base;
  t.m.C = base.mp.C + c.sigma_c * randn(c.K, c.R, rng);
  const DenseTensor3 E = standard_noise({c.I, c.J, c.K}, rng);
  const DenseTensor3 Yp = add_scaled(cp_to_tensor(t.mp), standard_noise({c.Ip, c.Jp, c.Kp}, rng), c.sigma_np);
  const auto unc_p = best_uncoupled_als(Yp, c.R, c.als, rng, c.als.warm_iters);
  AlsConfig fixed_iters = c.als;
  fixed_iters.delta_min = 0.0;
  fixed_iters.k_max = c.bench_iters;
  std::vector<ResultRow> rows;
  for (std::size_t si = 0; si < c.sweep.size(); ++si) {
    const RowContext ctx{&c, si, trial, Canon::l2};
    SnrParams sp;
    sp.R = c.R;
    sp.sigma_c = c.sigma_c;
    sp.I = c.I;
    sp.J = c.J;
    const double sn = sigma_for_snr(SnrFormula::normalized_Y, sp, c.sweep[si]);
    const DenseTensor3 Y = add_scaled(cp_to_tensor(t.m), E, sn);
    std::optional<UncoupledSolution> unc;
    attempt(rows, ctx, "uncoupled", [&] {
      unc = best_uncoupled_als(Y, c.R, c.als, rng, c.als.warm_iters);
      return scored_row(ctx, "uncoupled", unc->model, unc_p.model, t, &unc->trace);
    });
    if (!unc) continue;
    const CpModel warm_p = unc_p.model;
    const CoupledProblem p{Y, Yp, GaussianNoise{sn}, GaussianNoise{c.sigma_np},
                           HybridGaussianCoupling::direct(c.K, c.sigma_c), c.R, c.R};
    attempt(rows, ctx, "coupled", [&] {
      const auto aligned = align_components(unc->model, warm_p, p.coupling);
      const auto t0 = std::chrono::steady_clock::now();
      const auto sol = coupled_als_from(p, fixed_iters, unc->model, aligned, rng);
      const double secs = seconds_since(t0);
      auto row = scored_row(ctx, "coupled", sol.model, sol.model_p, t, &sol.trace);
      row.runtime_s = secs;
      return row;
    });
    attempt(rows, ctx, "coupled_compressed", [&] {
      const auto aligned = align_components(unc->model, warm_p, p.coupling);
      const auto t0 = std::chrono::steady_clock::now();
      const auto cc = compress_coupled_problem(p, c.ranks, c.ranks, SvdMode::randomized, rng);
      const auto sol = coupled_als_from(cc.problem, fixed_iters, compress_model(unc->model, cc.bases),
                                        compress_model(aligned, cc.bases_p), rng);
      const double secs = seconds_since(t0);
      auto row = scored_row(ctx, "coupled_compressed", decompress_model(sol.model, cc.bases),
                            decompress_model(sol.model_p, cc.bases_p), t, &sol.trace);
      row.runtime_s = secs;
      return row;
    });
    attempt(rows, ctx, "uncoupled_compressed_independent", [&] {
      const auto b = truncated_hosvd(Y, c.ranks, SvdMode::randomized, rng);
      const auto bp = truncated_hosvd(Yp, c.ranks, SvdMode::randomized, rng);
      const auto s = uncoupled_als_from(b.core, compress_model(unc->model, b), fixed_iters, rng, c.bench_iters);
      const auto sp2 = uncoupled_als_from(bp.core, compress_model(warm_p, bp), fixed_iters, rng, c.bench_iters);
      return scored_row(ctx, "uncoupled_compressed_independent", decompress_model(s.model, b),
                        decompress_model(sp2.model, bp), t, &s.trace);
    });
    attempt(rows, ctx, "uncoupled_compressed_joint", [&] {
      const auto cc = compress_coupled_problem(p, c.ranks, c.ranks, SvdMode::randomized, rng);
      const auto s = uncoupled_als_from(cc.problem.Y, compress_model(unc->model, cc.bases), fixed_iters, rng,
                                        c.bench_iters);
      const auto sp2 = uncoupled_als_from(cc.problem.Yp, compress_model(warm_p, cc.bases_p), fixed_iters, rng,
                                          c.bench_iters);
      return scored_row(ctx, "uncoupled_compressed_joint", decompress_model(s.model, cc.bases),
                        decompress_model(sp2.model, cc.bases_p), t, &s.trace);
    });
  }
  return rows;
}

inline std::vector<ResultRow> gamma_trial(const ExperimentConfig& c, const RunContext& run,
                                          std::size_t trial, Rng& rng) {
  require_same_K(c);
  const Truth t = run.fixed ? *run.fixed : gamma_truth(c, rng);
  const DenseTensor3 Xp = cp_to_tensor(t.mp), X = cp_to_tensor(t.m);
  const DenseTensor3 Yp = gamma_observation(Xp, c.phi_p, rng);
  const TweedieNoise np{c.beta_p, c.phi_p};
  const auto unc_p = best_uncoupled_mu(Yp, np, c.R, c.mu, rng);
  std::vector<ResultRow> rows;
  for (std::size_t si = 0; si < c.sweep.size(); ++si) {
    const RowContext ctx{&c, si, trial, Canon::l1};
    const double phi = c.sweep[si];
    const DenseTensor3 Y = gamma_observation(X, phi, rng);
    const TweedieNoise n{c.beta, phi};
    std::vector<UncoupledSolution> runs;
    attempt(rows, ctx, "uncoupled", [&] {
      runs = uncoupled_mu_runs(Y, n, c.R, c.mu, rng);
      const auto& best = best_of(runs);
      return scored_row(ctx, "uncoupled", best.model, unc_p.model, t, &best.trace);
    });
    if (runs.empty()) continue;
    const CoupledProblem p{Y, Yp, n, np, TweedieCoupling{c.beta_c, c.phi_c}, c.R, c.R};
    // One coupled run per uncoupled restart; the lowest coupled objective wins.
    attempt(rows, ctx, "coupled", [&] {
      std::optional<CoupledSolution> best;
      for (const auto& u : runs) {
        auto sol = coupled_mu_from(p, c.mu, u.model, align_components(u.model, unc_p.model, p.coupling), rng);
        if (!best || sol.trace.final_objective() < best->trace.final_objective()) best = std::move(sol);
      }
      return scored_row(ctx, "coupled", best->model, best->model_p, t, &best->trace);
    });
  }
  return rows;
}

inline std::vector<ResultRow> sampling_trial(const ExperimentConfig& c, const RunContext& run,
                                             std::size_t trial, Rng& rng) {
  const Truth t = run.fixed ? *run.fixed : sines_truth(c, rng);
  const DenseTensor3 E = standard_noise({c.I, c.J, c.K}, rng);
  const DenseTensor3 Ep = standard_noise({c.Ip, c.Jp, c.Kp}, rng);
  const auto times = sample_times(c.K, c.duration), times_p = sample_times(c.Kp, c.duration);
  double snp = c.sigma_np;
  if (c.variant == SamplingVariant::coarse_grid && c.noise_from_snr) {
    SnrParams sp;
    sp.R = c.R;
    sp.I = c.Ip;
    sp.J = c.Jp;
    sp.frequencies = c.frequencies;
    sp.K = c.Kp;
    sp.T = c.duration / static_cast<double>(c.Kp);
    snp = sigma_for_snr(SnrFormula::sum_of_sines, sp, c.snr_p_db);
  }
  const DenseTensor3 Yp = add_scaled(cp_to_tensor(t.mp), Ep, snp);
  const auto unc_p = best_uncoupled_als(Yp, c.R, c.als, rng, c.als.warm_iters);
  auto truth_fn = [&](Index r, double time) {
    double v = 0.0;
    for (std::size_t i = 0; i < c.frequencies.size(); ++i)
      v += t.alpha(static_cast<Index>(i), r) * std::sin(2 * std::numbers::pi * c.frequencies[i] * time);
    return v;
  };
  auto with_recon = [&](ResultRow row, const CpModel& est, const CpModel& est_p) {
    if (c.variant != SamplingVariant::coarse_grid) return row;
    const CpModel e = align_to_truth(est, t.m, Canon::l2), ep = align_to_truth(est_p, t.mp, Canon::l2);
    row.recon_C = reconstruct_continuous_error(e.C, times, c.duration, truth_fn, c.fine_grid);
    row.recon_Cp = reconstruct_continuous_error(ep.C, times_p, c.duration, truth_fn, c.fine_grid);
    return row;
  };

  std::vector<ResultRow> rows;
  std::optional<UncoupledSolution> unc_fixed;
  for (std::size_t si = 0; si < c.sweep.size(); ++si) {
    const RowContext ctx{&c, si, trial, Canon::l2};
    const double v = c.sweep[si];
    double sn = c.sigma_n, sc = c.sigma_c;
    Index L = c.L;
    if (c.variant == SamplingVariant::snr_sweep) sn = snp * std::pow(10.0, v / 20.0);
    if (c.variant == SamplingVariant::l_sweep) L = static_cast<Index>(std::lround(v));
    if (c.variant == SamplingVariant::coarse_grid) sc = v;
    const DenseTensor3 Y = add_scaled(cp_to_tensor(t.m), E, sn);

    std::optional<UncoupledSolution> unc;
    attempt(rows, ctx, "uncoupled", [&] {
      if (c.variant == SamplingVariant::snr_sweep || !unc_fixed)
        unc_fixed = best_uncoupled_als(Y, c.R, c.als, rng, c.als.warm_iters);
      unc = unc_fixed;
      return with_recon(scored_row(ctx, "uncoupled", unc->model, unc_p.model, t, &unc->trace),
                        unc->model, unc_p.model);
    });
    if (!unc) continue;

    Matrix H, Hp;
    if (c.variant == SamplingVariant::coarse_grid) {
      H = Matrix::Identity(c.K, c.K);
      Hp = dirichlet_interpolation_matrix(times, times_p, c.Kp, c.duration);
    } else {
      std::tie(H, Hp) = interpolation_coupling(c, L);
    }
    auto coupled = [&](const std::string& name, double sigma_c) {
      attempt(rows, ctx, name, [&] {
        const CoupledProblem p{Y, Yp, GaussianNoise{sn}, GaussianNoise{snp},
                               HybridGaussianCoupling{H, Hp, sigma_c, c.coupled_cols}, c.R, c.R};
        const auto sol = coupled_from_uncoupled(p, c.als, unc->model, unc_p.model, rng);
        return with_recon(scored_row(ctx, name, sol.model, sol.model_p, t, &sol.trace), sol.model,
                          sol.model_p);
      });
    };
    coupled("flexible", sc);
    if (c.variant != SamplingVariant::coarse_grid) coupled("approx_hard", c.sigma_c_hard);
  }
  return rows;
}

inline std::vector<ResultRow> warm_cold_trial(const ExperimentConfig& c, const RunContext& run,
                                              std::size_t trial, Rng& rng) {
  require_same_K(c);
  const Truth base = run.fixed ? *run.fixed : normalized_truth(c, rng);
  const Matrix G = randn(c.K, c.R, rng);
  const DenseTensor3 E = standard_noise({c.I, c.J, c.K}, rng);
  const DenseTensor3 Yp = add_scaled(cp_to_tensor(base.mp), standard_noise({c.Ip, c.Jp, c.Kp}, rng), c.sigma_np);
  const auto unc_p = best_uncoupled_als(Yp, c.R, c.als, rng, c.als.warm_iters);
  std::vector<ResultRow> rows;
  for (std::size_t si = 0; si < c.sweep.size(); ++si) {
    const RowContext ctx{&c, si, trial, Canon::l2};
    const double sc = c.sweep[si];
    Truth t = base;
    t.m.C = base.mp.C + sc * G;
    const DenseTensor3 Y = add_scaled(cp_to_tensor(t.m), E, c.sigma_n);
    const CoupledProblem p{Y, Yp, GaussianNoise{c.sigma_n}, GaussianNoise{c.sigma_np},
                           HybridGaussianCoupling::direct(c.K, sc), c.R, c.R};
    attempt(rows, ctx, "warm", [&] {
      const auto unc = best_uncoupled_als(Y, c.R, c.als, rng, c.als.warm_iters);
      const auto sol = coupled_from_uncoupled(p, c.als, unc.model, unc_p.model, rng);
      return scored_row(ctx, "warm", sol.model, sol.model_p, t, &sol.trace);
    });
    attempt(rows, ctx, "cold", [&] {
      const auto sol = coupled_als_from(p, c.als, cpfuse::detail::random_model(Y.dims(), c.R, rng),
                                        cpfuse::detail::random_model(Yp.dims(), c.R, rng), rng);
      return scored_row(ctx, "cold", sol.model, sol.model_p, t, &sol.trace);
    });
  }
  return rows;
}

}  // namespace detail

/// All rows of one trial; `rng` is the trial's private stream.
inline std::vector<ResultRow> run_trial(const ExperimentConfig& c, const RunContext& run,
                                        std::size_t trial, Rng& rng) {
  switch (c.scenario) {
    case Scenario::similar_factors: return detail::similar_factors_trial(c, run, trial, rng);
    case Scenario::shared_component: return detail::shared_component_trial(c, run, trial, rng);
    case Scenario::compressed: return detail::compressed_trial(c, run, trial, rng);
    case Scenario::gamma_coupling: return detail::gamma_trial(c, run, trial, rng);
    case Scenario::sampling_rates: return detail::sampling_trial(c, run, trial, rng);
    case Scenario::warm_cold: return detail::warm_cold_trial(c, run, trial, rng);
  }
  throw std::invalid_argument("run_trial: unknown scenario");
}

// ---------------------------------------------------------------------------
// Bounds for the similar-factors sweep
// ---------------------------------------------------------------------------

/// Hybrid bound setup for the similar-factors truth at coupling level sigma_c.
inline CrbScenario similar_factors_bound_scenario(const ExperimentConfig& c, const Truth& t, double sigma_c) {
  CrbScenario s;
  s.mode = BoundMode::hybrid;
  s.At = t.m.A.bottomRows(t.m.A.rows() - 1);
  s.Bt = t.m.B.bottomRows(t.m.B.rows() - 1);
  s.Apt = t.mp.A.bottomRows(t.mp.A.rows() - 1);
  s.Bpt = t.mp.B.bottomRows(t.mp.B.rows() - 1);
  s.Cp = t.mp.C;
  s.H = Matrix::Identity(c.K, c.Kp);
  s.sigma_c = sigma_c;
  s.sigma_n = c.sigma_n;
  s.sigma_np = c.sigma_np;
  return s;
}

/// Trace of the HCRB C-block at every sweep point (1 / sigma_c values).
inline std::vector<double> similar_factors_hcrb_trace(const ExperimentConfig& c, const Truth& t) {
  std::vector<double> out;
  for (double v : c.sweep) out.push_back(bound(similar_factors_bound_scenario(c, t, 1.0 / v)).block_trace(2));
  return out;
}

}  // namespace cpfuse::harness
