#pragma once

#include <cpfuse/tensor.hpp>

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

namespace testutil {

using cpfuse::CpModel;
using cpfuse::Index;
using cpfuse::Matrix;

// Unit-l2 columns in A and B, sign fixed by the largest-magnitude entry,
// everything absorbed in C.
inline CpModel canonical(CpModel m) {
  for (int f = 0; f < 2; ++f) {
    Matrix& F = m.factor(f);
    for (Index r = 0; r < F.cols(); ++r) {
      Index imax = 0;
      F.col(r).cwiseAbs().maxCoeff(&imax);
      const double s = F.col(r).norm() * (F(imax, r) < 0 ? -1.0 : 1.0);
      F.col(r) /= s;
      m.C.col(r) *= s;
    }
  }
  return m;
}

inline double rel(const Matrix& X, const Matrix& Y) { return (X - Y).norm() / Y.norm(); }

// Largest relative factor error over A, B, C after the best component
// permutation (exhaustive search).
inline double factor_error(const CpModel& est, const CpModel& truth) {
  const CpModel e = canonical(est), t = canonical(truth);
  std::vector<Index> p(static_cast<std::size_t>(t.rank()));
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    const CpModel q = e.permuted(p);
    best = std::min(best, std::max({rel(q.A, t.A), rel(q.B, t.B), rel(q.C, t.C)}));
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

}  // namespace testutil
