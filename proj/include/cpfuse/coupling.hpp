#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace cpfuse {

// ---------------------------------------------------------------------------
// Coupling families between the third factors C (K x R) and C' (K' x R).
// ---------------------------------------------------------------------------

/// H C = H' C' + Gamma with i.i.d. N(0, sigma_c^2) entries, restricted to
/// `coupled_cols` (empty means every column).
struct HybridGaussianCoupling {
  Matrix H;
  Matrix Hp;
  double sigma_c = 1.0;
  std::vector<Index> coupled_cols;

  static HybridGaussianCoupling direct(Index K, double sigma_c,
                                       std::vector<Index> cols = {}) {
    return {Matrix::Identity(K, K), Matrix::Identity(K, K), sigma_c, std::move(cols)};
  }
};

/// Tweedie saddle-point coupling of positive factors, C | C' with shape
/// beta_c and dispersion phi_c.
struct TweedieCoupling {
  double beta_c = 2.0;
  double phi_c = 1.0;
};

struct LaplaceCoupling {
  double delta_c = 1.0;
};

struct CauchyCoupling {
  double delta_c = 1.0;
};

/// Equality constraint H C = H' C'.
struct HardCoupling {
  Matrix H;
  Matrix Hp;

  static HardCoupling direct(Index K) {
    return {Matrix::Identity(K, K), Matrix::Identity(K, K)};
  }
};

using CouplingSpec = std::variant<HybridGaussianCoupling, TweedieCoupling, LaplaceCoupling,
                                  CauchyCoupling, HardCoupling>;

struct GaussianNoise {
  double sigma = 1.0;
};

struct TweedieNoise {
  double beta = 2.0;
  double phi = 1.0;
};

using NoiseModel = std::variant<GaussianNoise, TweedieNoise>;

struct CoupledProblem {
  DenseTensor3 Y;
  DenseTensor3 Yp;
  NoiseModel noise;
  NoiseModel noise_p;
  CouplingSpec coupling;
  Index R = 1;
  Index Rp = 1;
};

/// 0/1 mask over the R columns that take part in the coupling.
inline std::vector<bool> coupled_mask(const CouplingSpec& spec, Index R) {
  std::vector<bool> mask(static_cast<std::size_t>(R), true);
  if (const auto* g = std::get_if<HybridGaussianCoupling>(&spec); g && !g->coupled_cols.empty()) {
    std::fill(mask.begin(), mask.end(), false);
    for (Index c : g->coupled_cols) {
      if (c < 0 || c >= R)
        throw std::invalid_argument("coupled column index " + std::to_string(c) +
                                    " out of range");
      mask[static_cast<std::size_t>(c)] = true;
    }
  }
  return mask;
}

/// Checks field ranges and the H/H' shapes against the third dimensions.
inline void validate_coupling(const CouplingSpec& spec, Index K, Index Kp) {
  auto check_pair = [&](const Matrix& H, const Matrix& Hp) {
    if (H.rows() != Hp.rows())
      throw DimensionError("coupling: H and H' must have the same row count");
    if (H.cols() != K || Hp.cols() != Kp)
      throw DimensionError("coupling: H must have K columns and H' must have K' columns");
  };
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, HybridGaussianCoupling>) {
          check_pair(s.H, s.Hp);
          if (!(s.sigma_c > 0.0)) throw std::invalid_argument("coupling: sigma_c must be > 0");
        } else if constexpr (std::is_same_v<T, HardCoupling>) {
          check_pair(s.H, s.Hp);
        } else if constexpr (std::is_same_v<T, TweedieCoupling>) {
          if (!(s.phi_c > 0.0)) throw std::invalid_argument("coupling: phi_c must be > 0");
          if (K != Kp) throw DimensionError("Tweedie coupling needs K == K'");
        } else {
          if (!(s.delta_c > 0.0)) throw std::invalid_argument("coupling: delta_c must be > 0");
          if (K != Kp) throw DimensionError("elementwise coupling needs K == K'");
        }
      },
      spec);
}

// ---------------------------------------------------------------------------
// Beta divergence
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr double kBetaLimitBand = 1e-8;

inline double beta_div_unchecked(double x, double y, double beta) {
  if (std::abs(beta - 1.0) < kBetaLimitBand) return x * std::log(x / y) - x + y;
  if (std::abs(beta - 2.0) < kBetaLimitBand) return x / y - std::log(x / y) - 1.0;
  if (beta == 3.0) return (x - y) * (x - y) / (2.0 * x * y * y);
  const double kappa = (1.0 - beta) * (2.0 - beta);
  return std::pow(x, 2.0 - beta) / kappa - x * std::pow(y, 1.0 - beta) / (1.0 - beta) +
         std::pow(y, 2.0 - beta) / (2.0 - beta);
}
}  // namespace detail

/// d_beta(x | y). beta = 1 and beta = 2 use the closed-form limits
/// (generalized KL and Itakura-Saito).
inline double beta_divergence(double x, double y, double beta) {
  if (!(x > 0.0) || !(y > 0.0))
    throw std::invalid_argument("beta_divergence: arguments must be positive");
  return detail::beta_div_unchecked(x, y, beta);
}

/// Sum of d_beta(x_n | y_n) over paired entries.
inline double beta_divergence_sum(std::span<const double> x, std::span<const double> y,
                                  double beta) {
  if (x.size() != y.size()) throw DimensionError("beta_divergence_sum: length mismatch");
  double s = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    if (!(x[n] > 0.0) || !(y[n] > 0.0))
      throw std::invalid_argument("beta_divergence_sum: entries must be positive");
    s += detail::beta_div_unchecked(x[n], y[n], beta);
  }
  return s;
}

inline double beta_divergence_sum(const Matrix& X, const Matrix& Y, double beta) {
  if (X.rows() != Y.rows() || X.cols() != Y.cols())
    throw DimensionError("beta_divergence_sum: shape mismatch");
  return beta_divergence_sum(std::span<const double>(X.data(), static_cast<std::size_t>(X.size())),
                             std::span<const double>(Y.data(), static_cast<std::size_t>(Y.size())),
                             beta);
}

// ---------------------------------------------------------------------------
// Coupling cost and total objective
// ---------------------------------------------------------------------------

namespace detail {
inline Matrix select_cols(const Matrix& M, const std::vector<bool>& mask) {
  Index n = 0;
  for (bool b : mask) n += b;
  Matrix out(M.rows(), n);
  for (Index r = 0, c = 0; r < M.cols(); ++r)
    if (mask[static_cast<std::size_t>(r)]) out.col(c++) = M.col(r);
  return out;
}
}  // namespace detail

/// Hard-coupling constraint tolerance, relative to ||H C||_F.
inline constexpr double kHardCouplingTol = 1e-9;

/// The coupling term of the MAP objective. The Cauchy value is the literal
/// -sum log(1 + ((C - C')/delta)^2).
inline double coupling_cost(const Matrix& C, const Matrix& Cp, const CouplingSpec& spec) {
  if (C.cols() != Cp.cols()) throw DimensionError("coupling_cost: column counts differ");
  validate_coupling(spec, C.rows(), Cp.rows());
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, HybridGaussianCoupling>) {
          const auto mask = coupled_mask(spec, C.cols());
          const Matrix D = s.H * detail::select_cols(C, mask) - s.Hp * detail::select_cols(Cp, mask);
          return D.squaredNorm() / (s.sigma_c * s.sigma_c);
        } else if constexpr (std::is_same_v<T, HardCoupling>) {
          const Matrix HC = s.H * C;
          const double gap = (HC - s.Hp * Cp).norm();
          return gap <= kHardCouplingTol * std::max(1.0, HC.norm())
                     ? 0.0
                     : std::numeric_limits<double>::infinity();
        } else if constexpr (std::is_same_v<T, LaplaceCoupling>) {
          return (C - Cp).lpNorm<1>() / (2.0 * s.delta_c);
        } else if constexpr (std::is_same_v<T, CauchyCoupling>) {
          return -((C - Cp) / s.delta_c).array().square().log1p().sum();
        } else {
          if ((C.array() <= 0.0).any() || (Cp.array() <= 0.0).any())
            throw std::invalid_argument("coupling_cost: Tweedie coupling needs positive entries");
          return 0.5 * s.beta_c * C.array().log().sum() +
                 beta_divergence_sum(C, Cp, s.beta_c) / s.phi_c;
        }
      },
      spec);
}

/// Negative log-likelihood term of one tensor (up to constants).
inline double data_term(const Matrix& Y3, const Matrix& X3, const NoiseModel& noise) {
  if (Y3.rows() != X3.rows() || Y3.cols() != X3.cols())
    throw DimensionError("data_term: model and data shapes differ");
  if (const auto* g = std::get_if<GaussianNoise>(&noise))
    return (Y3 - X3).squaredNorm() / (g->sigma * g->sigma);
  const auto& t = std::get<TweedieNoise>(noise);
  return beta_divergence_sum(Y3, X3, t.beta) / t.phi;
}

inline void validate_noise(const NoiseModel& noise) {
  std::visit(
      [](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, GaussianNoise>) {
          if (!(n.sigma > 0.0)) throw std::invalid_argument("noise: sigma must be > 0");
        } else if (!(n.phi > 0.0)) {
          throw std::invalid_argument("noise: phi must be > 0");
        }
      },
      noise);
}

/// Rejects likelihood/coupling pairings the objective is not defined for:
/// Tweedie couplings go with Tweedie likelihoods, everything else with
/// Gaussian likelihoods.
inline void validate_problem(const CoupledProblem& p) {
  validate_noise(p.noise);
  validate_noise(p.noise_p);
  const bool tweedie_coupling = std::holds_alternative<TweedieCoupling>(p.coupling);
  const bool tweedie_1 = std::holds_alternative<TweedieNoise>(p.noise);
  const bool tweedie_2 = std::holds_alternative<TweedieNoise>(p.noise_p);
  if (tweedie_1 != tweedie_coupling || tweedie_2 != tweedie_coupling)
    throw std::invalid_argument(
        "problem: Tweedie couplings require Tweedie likelihoods on both tensors and "
        "Gaussian-family couplings require Gaussian likelihoods");
  validate_coupling(p.coupling, p.Y.dim(2), p.Yp.dim(2));
}

inline double total_objective(const CoupledProblem& p, const CpModel& m, const CpModel& mp) {
  validate_problem(p);
  m.validate();
  mp.validate();
  if (m.dims() != p.Y.dims() || mp.dims() != p.Yp.dims())
    throw DimensionError("total_objective: model dims do not match the data");
  return data_term(unfold(p.Y, 3), cp_unfold3(m), p.noise) +
         data_term(unfold(p.Yp, 3), cp_unfold3(mp), p.noise_p) +
         coupling_cost(m.C, mp.C, p.coupling);
}

}  // namespace cpfuse
