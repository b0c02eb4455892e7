#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>

#include "tensor.hpp"

namespace cpfuse {

/// Periodic band-limited (Dirichlet) interpolation matrix:
///   H(l, k) = sin(K pi d / P) / (K sin(pi d / P)),  d = t_l - t_k.
/// Entries where d is a multiple of P take the limit value 1. `sample_count`
/// is the number of source samples spanning one period and must be odd.
inline Matrix dirichlet_interpolation_matrix(std::span<const double> target_times,
                                             std::span<const double> source_times,
                                             Index sample_count, double period) {
  if (sample_count < 1 || sample_count % 2 == 0)
    throw std::invalid_argument("dirichlet_interpolation_matrix: sample count must be odd");
  if (!(period > 0.0))
    throw std::invalid_argument("dirichlet_interpolation_matrix: period must be positive");
  const double Kd = static_cast<double>(sample_count);
  Matrix H(static_cast<Index>(target_times.size()), static_cast<Index>(source_times.size()));
  for (Index l = 0; l < H.rows(); ++l)
    for (Index k = 0; k < H.cols(); ++k) {
      const double u = (target_times[static_cast<std::size_t>(l)] -
                        source_times[static_cast<std::size_t>(k)]) /
                       period;
      // Reduce to (-1/2, 1/2]; the kernel has period P for odd K.
      const double frac = u - std::round(u);
      if (std::abs(frac) < 1e-13) {
        H(l, k) = 1.0;
        continue;
      }
      const double x = std::numbers::pi * frac;
      H(l, k) = std::sin(Kd * x) / (Kd * std::sin(x));
    }
  return H;
}

/// Uniform grid t_n = n * step, n = 0..count-1.
inline std::vector<double> uniform_grid(Index count, double step) {
  std::vector<double> t(static_cast<std::size_t>(count));
  for (Index n = 0; n < count; ++n) t[static_cast<std::size_t>(n)] = static_cast<double>(n) * step;
  return t;
}

}  // namespace cpfuse
