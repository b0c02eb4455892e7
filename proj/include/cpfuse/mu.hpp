#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "als.hpp"
#include "coupling.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace cpfuse {

struct MuConfig {
  int k_max = 2000;
  double delta_min = 1e-8;
  int restarts = 5;
  double epsilon = 1e-12;
  bool warm_start = true;
  int warm_iters = 1000;

  void validate() const {
    if (k_max < 1) throw std::invalid_argument("MuConfig: k_max must be >= 1");
    if (delta_min < 0) throw std::invalid_argument("MuConfig: delta_min must be >= 0");
    if (restarts < 1) throw std::invalid_argument("MuConfig: restarts must be >= 1");
    if (!(epsilon > 0)) throw std::invalid_argument("MuConfig: epsilon must be > 0");
    if (warm_iters < 0) throw std::invalid_argument("MuConfig: warm_iters must be >= 0");
  }
};

enum class MuFactor { A, B, C, Ap, Bp, Cp };

struct GradientParts {
  Matrix minus;
  Matrix plus;
};

namespace detail {

inline void require_positive(const Matrix& M, const char* what) {
  if (!(M.array() > 0.0).all() || !M.allFinite())
    throw std::invalid_argument(std::string("multiplicative updates: ") + what +
                                " must be strictly positive");
}

inline const TweedieNoise& tweedie_noise(const NoiseModel& n) {
  const auto* t = std::get_if<TweedieNoise>(&n);
  if (!t) throw std::invalid_argument("multiplicative updates need Tweedie likelihoods");
  return *t;
}

inline const TweedieCoupling& tweedie_coupling(const CouplingSpec& s) {
  const auto* t = std::get_if<TweedieCoupling>(&s);
  if (!t) throw std::invalid_argument("multiplicative updates need a Tweedie coupling");
  if (!(t->beta_c > 1.0 && t->beta_c <= 3.0))
    throw std::invalid_argument("multiplicative updates: beta_c must lie in (1, 3]");
  return *t;
}

// Data-term split for factor `mode` (0, 1, 2) of one tensor.
inline GradientParts data_gradient_parts(const DenseTensor3& Y, const CpModel& m, int mode,
                                         const TweedieNoise& noise) {
  const Matrix Y3 = unfold(Y, 3);
  const Matrix X3 = cp_unfold3(m);
  const Matrix Z3 = (Y3.array() * X3.array().pow(-noise.beta)).matrix();
  const Matrix W3 = X3.array().pow(1.0 - noise.beta).matrix();
  Matrix KR;
  Matrix Zn, Wn;
  if (mode == 2) {
    KR = khatri_rao(m.B, m.A);
    Zn = Z3;
    Wn = W3;
  } else {
    const int unf = mode + 1;
    KR = mode == 0 ? khatri_rao(m.C, m.B) : khatri_rao(m.C, m.A);
    Zn = unfold(refold(Z3, 3, Y.dims()), unf);
    Wn = unfold(refold(W3, 3, Y.dims()), unf);
  }
  return {(Zn * KR) / noise.phi, (Wn * KR) / noise.phi};
}

}  // namespace detail

/// Positive and negative parts of the gradient of the Tweedie objective with
/// respect to one factor, grad = plus - minus.
inline GradientParts mu_gradient_parts(MuFactor factor, const CoupledProblem& p,
                                       const CpModel& m, const CpModel& mp) {
  const auto& noise = detail::tweedie_noise(p.noise);
  const auto& noise_p = detail::tweedie_noise(p.noise_p);
  const auto& cpl = detail::tweedie_coupling(p.coupling);
  for (int f = 0; f < 3; ++f) {
    detail::require_positive(m.factor(f), "factors");
    detail::require_positive(mp.factor(f), "factors");
  }
  if ((p.Y.vec().array() <= 0.0).any() || (p.Yp.vec().array() <= 0.0).any())
    throw std::invalid_argument("multiplicative updates: data must be strictly positive");
  if (m.C.rows() != mp.C.rows() || m.rank() != mp.rank())
    throw DimensionError("multiplicative updates: C and C' must have the same shape");

  const double bc = cpl.beta_c;
  const double w = 1.0 / (cpl.phi_c * (bc - 1.0));
  switch (factor) {
    case MuFactor::A: return detail::data_gradient_parts(p.Y, m, 0, noise);
    case MuFactor::B: return detail::data_gradient_parts(p.Y, m, 1, noise);
    case MuFactor::Ap: return detail::data_gradient_parts(p.Yp, mp, 0, noise_p);
    case MuFactor::Bp: return detail::data_gradient_parts(p.Yp, mp, 1, noise_p);
    case MuFactor::C: {
      auto g = detail::data_gradient_parts(p.Y, m, 2, noise);
      g.minus.array() += w * m.C.array().pow(1.0 - bc);
      g.plus.array() += 0.5 * bc / m.C.array() + w * mp.C.array().pow(1.0 - bc);
      return g;
    }
    case MuFactor::Cp: {
      auto g = detail::data_gradient_parts(p.Yp, mp, 2, noise_p);
      g.minus.array() += m.C.array() * mp.C.array().pow(-bc) / cpl.phi_c;
      g.plus.array() += mp.C.array().pow(1.0 - bc) / cpl.phi_c;
      return g;
    }
  }
  throw std::invalid_argument("mu_gradient_parts: unknown factor");
}

/// F * minus / max(plus, epsilon), elementwise, floored at the smallest
/// normal double so long runs cannot underflow to zero.
inline Matrix mu_step(const Matrix& F, const Matrix& grad_plus, const Matrix& grad_minus,
                      double epsilon) {
  if (F.rows() != grad_plus.rows() || F.cols() != grad_plus.cols() ||
      F.rows() != grad_minus.rows() || F.cols() != grad_minus.cols())
    throw DimensionError("mu_step: shape mismatch");
  return (F.array() * grad_minus.array() / grad_plus.array().max(epsilon))
      .max(std::numeric_limits<double>::min())
      .matrix();
}

namespace detail {

inline void rescale_l1_into(Matrix& F, Matrix& absorb, Rng& rng, int& reseeded) {
  for (Index r = 0; r < F.cols(); ++r) {
    double s = F.col(r).lpNorm<1>();
    if (!(s > 0.0) || !std::isfinite(s)) {
      F.col(r) = rand_abs_normal(F.rows(), 1, rng);
      ++reseeded;
      s = F.col(r).lpNorm<1>();
    }
    F.col(r) /= s;
    absorb.col(r) *= s;
  }
}

inline CpModel random_positive_model(std::array<Index, 3> dims, Index R, Rng& rng) {
  return {rand_abs_normal(dims[0], R, rng), rand_abs_normal(dims[1], R, rng),
          rand_abs_normal(dims[2], R, rng)};
}

}  // namespace detail

/// Uncoupled multiplicative updates for one Tweedie-distributed tensor, with
/// l1-normalized A and B (scales into C).
inline UncoupledSolution uncoupled_mu_from(const DenseTensor3& Y, const TweedieNoise& noise,
                                           CpModel m, const MuConfig& cfg, Rng& rng, int k_max) {
  m.validate();
  if (m.dims() != Y.dims()) throw DimensionError("uncoupled_mu: init dims differ from data");
  const Matrix Y3 = unfold(Y, 3);
  SolveTrace trace;
  auto objective = [&] { return data_term(Y3, cp_unfold3(m), noise); };
  trace.objective_per_iter.push_back(objective());
  const double first = trace.objective_per_iter.front();
  for (int k = 1; k <= k_max; ++k) {
    for (int f = 0; f < 3; ++f) {
      auto g = detail::data_gradient_parts(Y, m, f, noise);
      m.factor(f) = mu_step(m.factor(f), g.plus, g.minus, cfg.epsilon);
      if (f < 2) detail::rescale_l1_into(m.factor(f), m.C, rng, trace.reseeded_columns);
    }
    const double obj = objective();
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

inline UncoupledSolution uncoupled_mu(const DenseTensor3& Y, const TweedieNoise& noise, Index R,
                                      const MuConfig& cfg, Rng& rng) {
  if (R < 1) throw std::invalid_argument("uncoupled_mu: R must be >= 1");
  cfg.validate();
  if ((Y.vec().array() <= 0.0).any())
    throw std::invalid_argument("uncoupled_mu: data must be strictly positive");
  auto init = detail::random_positive_model(Y.dims(), R, rng);
  return uncoupled_mu_from(Y, noise, std::move(init), cfg, rng, cfg.k_max);
}

/// Coupled multiplicative updates from a given starting point: one sweep
/// updates A, A', B, B', C, C' in that order; A, B scales go into C and the
/// A' scale into B'.
inline CoupledSolution coupled_mu_from(const CoupledProblem& p, const MuConfig& cfg, CpModel m,
                                       CpModel mp, Rng& rng, int k_max = -1) {
  validate_problem(p);
  cfg.validate();
  detail::tweedie_coupling(p.coupling);
  if (m.dims() != p.Y.dims() || mp.dims() != p.Yp.dims())
    throw DimensionError("coupled_mu: starting models do not match the data");
  if (k_max < 0) k_max = cfg.k_max;
  SolveTrace trace;
  detail::rescale_l1_into(m.A, m.C, rng, trace.reseeded_columns);
  detail::rescale_l1_into(m.B, m.C, rng, trace.reseeded_columns);
  detail::rescale_l1_into(mp.A, mp.B, rng, trace.reseeded_columns);
  trace.objective_per_iter.push_back(total_objective(p, m, mp));
  const double first = trace.objective_per_iter.front();
  auto step = [&](MuFactor f, Matrix& F) {
    auto g = mu_gradient_parts(f, p, m, mp);
    F = mu_step(F, g.plus, g.minus, cfg.epsilon);
  };
  for (int k = 1; k <= k_max; ++k) {
    step(MuFactor::A, m.A);
    detail::rescale_l1_into(m.A, m.C, rng, trace.reseeded_columns);
    step(MuFactor::Ap, mp.A);
    detail::rescale_l1_into(mp.A, mp.B, rng, trace.reseeded_columns);
    step(MuFactor::B, m.B);
    detail::rescale_l1_into(m.B, m.C, rng, trace.reseeded_columns);
    step(MuFactor::Bp, mp.B);
    step(MuFactor::C, m.C);
    step(MuFactor::Cp, mp.C);
    const double obj = total_objective(p, m, mp);
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

inline std::pair<CpModel, CpModel> mu_warm_start(const CoupledProblem& p, const MuConfig& cfg,
                                                 Rng& rng) {
  MuConfig warm = cfg;
  warm.k_max = std::max(1, cfg.warm_iters);
  auto a = uncoupled_mu(p.Y, detail::tweedie_noise(p.noise), p.R, warm, rng);
  auto b = uncoupled_mu(p.Yp, detail::tweedie_noise(p.noise_p), p.Rp, warm, rng);
  return {std::move(a.model), align_components(a.model, b.model, p.coupling)};
}

/// Coupled MU with restarts; the run with the smallest final objective wins.
inline CoupledSolution coupled_mu(const CoupledProblem& p, const MuConfig& cfg, Rng& rng) {
  validate_problem(p);
  cfg.validate();
  if (p.R != p.Rp) throw DimensionError("coupled_mu: R and R' must match");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(cfg.restarts));
  for (auto& s : seeds) s = rng();
  std::optional<CoupledSolution> best;
  for (int r = 0; r < cfg.restarts; ++r) {
    Rng local(seeds[static_cast<std::size_t>(r)]);
    CpModel m, mp;
    if (cfg.warm_start) {
      std::tie(m, mp) = mu_warm_start(p, cfg, local);
    } else {
      m = detail::random_positive_model(p.Y.dims(), p.R, local);
      mp = detail::random_positive_model(p.Yp.dims(), p.Rp, local);
    }
    auto sol = coupled_mu_from(p, cfg, std::move(m), std::move(mp), local);
    sol.trace.restart_index = r;
    if (!best || sol.trace.final_objective() < best->trace.final_objective())
      best = std::move(sol);
  }
  return std::move(*best);
}

}  // namespace cpfuse
