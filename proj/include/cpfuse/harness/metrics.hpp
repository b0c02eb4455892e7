#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "../assignment.hpp"
#include "../errors.hpp"
#include "../kernel.hpp"
#include "../tensor.hpp"

namespace cpfuse::harness {

// ---------------------------------------------------------------------------
// SNR
// ---------------------------------------------------------------------------

enum class SnrFormula {
  unnormalized_Y,
  unnormalized_Yp,
  normalized_Y,
  normalized_Yp,
  shared_component_Y,
  sum_of_sines
};

struct SnrParams {
  Index R = 1;
  double sigma_n = 1.0;
  double sigma_c = 0.0;
  Index I = 0, J = 0;
  Index shared = 0;  ///< number of coupled components
  std::vector<double> frequencies;
  Index K = 0;
  double T = 0.0;
};

/// Expected signal-to-noise ratio in dB for the synthetic generators.
inline double snr_db(SnrFormula f, const SnrParams& p) {
  if (p.R < 1 || !(p.sigma_n > 0)) throw std::invalid_argument("snr_db: need R >= 1 and sigma_n > 0");
  const double s2 = p.sigma_n * p.sigma_n;
  const double R = static_cast<double>(p.R);
  auto need_ij = [&] {
    if (p.I < 1 || p.J < 1) throw std::invalid_argument("snr_db: formula needs I and J");
    return static_cast<double>(p.I * p.J);
  };
  double ratio = 0.0;
  switch (f) {
    case SnrFormula::unnormalized_Y: ratio = R * (1 + p.sigma_c * p.sigma_c) / s2; break;
    case SnrFormula::unnormalized_Yp: ratio = R / s2; break;
    case SnrFormula::normalized_Y: ratio = R * (1 + p.sigma_c * p.sigma_c) / (need_ij() * s2); break;
    case SnrFormula::normalized_Yp: ratio = R / (need_ij() * s2); break;
    case SnrFormula::shared_component_Y:
      if (p.shared < 1 || p.shared > p.R)
        throw std::invalid_argument("snr_db: shared component count must lie in [1, R]");
      ratio = (static_cast<double>(p.shared) * p.sigma_c * p.sigma_c + R) / (need_ij() * s2);
      break;
    case SnrFormula::sum_of_sines: {
      if (p.frequencies.empty() || p.K < 1 || !(p.T > 0))
        throw std::invalid_argument("snr_db: sum_of_sines needs frequencies, K and T");
      double s = 0.0;
      for (double fi : p.frequencies)
        for (Index k = 1; k <= p.K; ++k) {
          const double v = std::sin(2 * std::numbers::pi * fi * static_cast<double>(k) * p.T);
          s += v * v;
        }
      ratio = R * s / (need_ij() * static_cast<double>(p.K) * s2);
      break;
    }
  }
  return 10.0 * std::log10(ratio);
}

/// Noise level that gives the requested SNR (every formula scales as 1/sigma^2).
inline double sigma_for_snr(SnrFormula f, SnrParams p, double target_db) {
  p.sigma_n = 1.0;
  return std::pow(10.0, (snr_db(f, p) - target_db) / 20.0);
}

// ---------------------------------------------------------------------------
// Alignment and scoring
// ---------------------------------------------------------------------------

/// How the generator fixed the scaling ambiguity of the ground truth.
enum class Canon { first_row, l2, l1 };

/// Rescales A and B per `canon` (scales go into C).
inline CpModel canonicalize(CpModel m, Canon canon) {
  for (int f = 0; f < 2; ++f) {
    Matrix& F = m.factor(f);
    for (Index r = 0; r < F.cols(); ++r) {
      const double s = canon == Canon::first_row ? F(0, r)
                       : canon == Canon::l2      ? F.col(r).norm()
                                                 : F.col(r).lpNorm<1>();
      if (s == 0.0) continue;
      F.col(r) /= s;
      m.C.col(r) *= s;
    }
  }
  return m;
}

/// Puts an estimate in the truth's convention and component order. Under l2
/// the remaining signs of a and b are chosen per matched pair; the pairing is
/// the minimum total squared error assignment.
inline CpModel align_to_truth(const CpModel& estimate, const CpModel& truth, Canon canon) {
  estimate.validate();
  truth.validate();
  if (estimate.dims() != truth.dims() || estimate.rank() != truth.rank())
    throw DimensionError("align_to_truth: estimate and truth shapes differ");
  const CpModel e = canonicalize(estimate, canon);
  const Index R = truth.rank();
  Matrix cost(R, R), sa(R, R), sb(R, R);
  for (Index r = 0; r < R; ++r)
    for (Index s = 0; s < R; ++s) {
      double a = 1.0, b = 1.0;
      if (canon == Canon::l2) {
        a = truth.A.col(r).dot(e.A.col(s)) < 0 ? -1.0 : 1.0;
        b = truth.B.col(r).dot(e.B.col(s)) < 0 ? -1.0 : 1.0;
      }
      sa(r, s) = a;
      sb(r, s) = b;
      cost(r, s) = (truth.A.col(r) - a * e.A.col(s)).squaredNorm() +
                   (truth.B.col(r) - b * e.B.col(s)).squaredNorm() +
                   (truth.C.col(r) - a * b * e.C.col(s)).squaredNorm();
    }
  const auto match = hungarian(cost);
  CpModel out = e.permuted(match);
  for (Index r = 0; r < R; ++r) {
    const double a = sa(r, match[static_cast<std::size_t>(r)]);
    const double b = sb(r, match[static_cast<std::size_t>(r)]);
    out.A.col(r) *= a;
    out.B.col(r) *= b;
    out.C.col(r) *= a * b;
  }
  return out;
}

/// Squared error summed over all entries of one factor.
inline double squared_error(const Matrix& estimate, const Matrix& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
    throw DimensionError("squared_error: shapes differ");
  return (estimate - truth).squaredNorm();
}

/// (1/N) sum_n ||F_n - F||^2 for factor `mode` of already aligned estimates.
inline double total_mse(const std::vector<CpModel>& estimates, const CpModel& truth, int mode) {
  if (estimates.empty()) throw std::invalid_argument("total_mse: no estimates");
  double s = 0.0;
  for (const auto& e : estimates) s += squared_error(e.factor(mode), truth.factor(mode));
  return s / static_cast<double>(estimates.size());
}

// ---------------------------------------------------------------------------
// Continuous-time reconstruction
// ---------------------------------------------------------------------------

/// Interpolates every column of C_hat onto `fine_grid_size` points of
/// [0, period] with the Dirichlet kernel and integrates the squared error
/// against truth(r, t) with the trapezoid rule; summed over components.
inline double reconstruct_continuous_error(const Matrix& C_hat, std::span<const double> sample_times,
                                           double period,
                                           const std::function<double(Index, double)>& truth,
                                           Index fine_grid_size) {
  if (static_cast<Index>(sample_times.size()) != C_hat.rows())
    throw DimensionError("reconstruct_continuous_error: one sample time per row expected");
  if (fine_grid_size < 2) throw std::invalid_argument("reconstruct_continuous_error: grid too small");
  const double h = period / static_cast<double>(fine_grid_size - 1);
  const auto fine = uniform_grid(fine_grid_size, h);
  const Matrix H = dirichlet_interpolation_matrix(fine, sample_times, C_hat.rows(), period);
  const Matrix Z = H * C_hat;
  double total = 0.0;
  for (Index r = 0; r < C_hat.cols(); ++r) {
    double acc = 0.0;
    for (Index n = 0; n < fine_grid_size; ++n) {
      const double d = Z(n, r) - truth(r, fine[static_cast<std::size_t>(n)]);
      acc += (n == 0 || n == fine_grid_size - 1 ? 0.5 : 1.0) * d * d;
    }
    total += acc * h;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Monte-Carlo statistics
// ---------------------------------------------------------------------------

struct MeanCi {
  double mean = 0.0;
  double half_width = 0.0;  ///< 95% normal-approximation half width
  std::size_t n = 0;
};

inline MeanCi mean_ci(const std::vector<double>& x) {
  MeanCi out;
  out.n = x.size();
  if (x.empty()) return out;
  double s = 0.0;
  for (double v : x) s += v;
  out.mean = s / static_cast<double>(x.size());
  if (x.size() > 1) {
    double v2 = 0.0;
    for (double v : x) v2 += (v - out.mean) * (v - out.mean);
    const double sd = std::sqrt(v2 / static_cast<double>(x.size() - 1));
    out.half_width = 1.959963984540054 * sd / std::sqrt(static_cast<double>(x.size()));
  }
  return out;
}

}  // namespace cpfuse::harness
