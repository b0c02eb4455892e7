#pragma once

#include <Eigen/Eigenvalues>

#include "errors.hpp"
#include "tensor.hpp"

namespace cpfuse {

/// Solves P X + X Q = Rhs for symmetric P (n x n) and Q (m x m) by
/// diagonalizing both operands: in the joint eigenbasis the equation is
/// elementwise, X~(i,j) = Rhs~(i,j) / (p_i + q_j).
inline Matrix sylvester_solve(const Matrix& P, const Matrix& Q, const Matrix& Rhs) {
  if (P.rows() != P.cols() || Q.rows() != Q.cols())
    throw DimensionError("sylvester_solve: operands must be square");
  if (Rhs.rows() != P.rows() || Rhs.cols() != Q.rows())
    throw DimensionError("sylvester_solve: right-hand side has the wrong shape");
  Eigen::SelfAdjointEigenSolver<Matrix> ep(P), eq(Q);
  if (ep.info() != Eigen::Success || eq.info() != Eigen::Success)
    throw SingularSystemError("sylvester_solve: eigendecomposition failed");
  const Vector& p = ep.eigenvalues();
  const Vector& q = eq.eigenvalues();
  const double scale = p.cwiseAbs().maxCoeff() + q.cwiseAbs().maxCoeff();
  Matrix X = ep.eigenvectors().transpose() * Rhs * eq.eigenvectors();
  for (Index j = 0; j < X.cols(); ++j)
    for (Index i = 0; i < X.rows(); ++i) {
      const double d = p(i) + q(j);
      if (std::abs(d) <= 1e-14 * scale || scale == 0.0)
        throw SingularSystemError("sylvester_solve: singular pencil (p_i + q_j ~ 0)");
      X(i, j) /= d;
    }
  return ep.eigenvectors() * X * eq.eigenvectors().transpose();
}

}  // namespace cpfuse
