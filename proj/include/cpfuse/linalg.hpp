#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <string>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace cpfuse {

/// Relative singular-value cutoff used by every pseudo-inverse in the library.
inline constexpr double kPinvCutoff = 1e-12;

struct Svd {
  Matrix U;
  Vector S;
  Matrix V;

  Matrix reconstruct() const { return U * S.asDiagonal() * V.transpose(); }
};

/// Leading `rank` singular triplets from a full dense decomposition.
inline Svd dense_svd(const Matrix& M, Index rank) {
  if (rank < 1 || rank > std::min(M.rows(), M.cols()))
    throw std::invalid_argument("dense_svd: rank " + std::to_string(rank) +
                                " outside [1, min(rows, cols)]");
  Eigen::BDCSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {svd.matrixU().leftCols(rank), svd.singularValues().head(rank),
          svd.matrixV().leftCols(rank)};
}

namespace detail {
inline Matrix orthonormal_basis(const Matrix& Y) {
  Eigen::HouseholderQR<Matrix> qr(Y);
  return qr.householderQ() * Matrix::Identity(Y.rows(), Y.cols());
}
}  // namespace detail

/// Randomized range finder with power iterations followed by a small dense
/// SVD. The sketch width is rank + oversample, clipped to min(rows, cols).
inline Svd randomized_svd(const Matrix& M, Index rank, Rng& rng, Index oversample = 2,
                          int power_iters = 1) {
  const Index small = std::min(M.rows(), M.cols());
  if (rank < 1 || rank > small)
    throw std::invalid_argument("randomized_svd: rank " + std::to_string(rank) +
                                " outside [1, min(rows, cols)]");
  if (oversample < 0 || power_iters < 0)
    throw std::invalid_argument("randomized_svd: negative oversample or power_iters");
  const Index width = std::min(rank + oversample, small);
  const Matrix omega = randn(M.cols(), width, rng);
  Matrix Q = detail::orthonormal_basis(M * omega);
  for (int q = 0; q < power_iters; ++q) {
    const Matrix Z = detail::orthonormal_basis(M.transpose() * Q);
    Q = detail::orthonormal_basis(M * Z);
  }
  const Matrix Bsmall = Q.transpose() * M;
  Eigen::BDCSVD<Matrix> svd(Bsmall, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {Q * svd.matrixU().leftCols(rank), svd.singularValues().head(rank),
          svd.matrixV().leftCols(rank)};
}

enum class SvdMode { dense, randomized, automatic };

/// Above this unfolding dimension `automatic` switches to the randomized route.
inline constexpr Index kRandomizedSvdThreshold = 512;

/// Leading left singular vectors of M.
inline Matrix leading_left_singular_vectors(const Matrix& M, Index rank, SvdMode mode,
                                            Rng& rng) {
  const bool randomized =
      mode == SvdMode::randomized ||
      (mode == SvdMode::automatic &&
       std::max(M.rows(), M.cols()) > kRandomizedSvdThreshold && rank < std::min(M.rows(), M.cols()));
  if (randomized) return randomized_svd(M, rank, rng).U;
  if (rank < 1 || rank > std::min(M.rows(), M.cols()))
    throw std::invalid_argument("leading_left_singular_vectors: rank too large");
  if (M.cols() > 4 * M.rows()) {
    // Wide matrix: the eigenvectors of the small Gram matrix are the left
    // singular vectors.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(M * M.transpose());
    const Index n = M.rows();
    Matrix U(n, rank);
    for (Index r = 0; r < rank; ++r) U.col(r) = eig.eigenvectors().col(n - 1 - r);
    return U;
  }
  return dense_svd(M, rank).U;
}

/// Returns Y * pinv(Z^T), the least-squares solution X of X Z^T ~= Y, using the
/// economy SVD of Z with relative cutoff kPinvCutoff.
inline Matrix solve_right_pinv(const Matrix& Y, const Matrix& Z) {
  if (Y.cols() != Z.rows())
    throw DimensionError("solve_right_pinv: inner dimensions differ");
  Eigen::JacobiSVD<Matrix> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? kPinvCutoff * s(0) : 0.0;
  Vector inv = Vector::Zero(s.size());
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > cutoff) inv(i) = 1.0 / s(i);
  return ((Y * svd.matrixU()) * inv.asDiagonal()) * svd.matrixV().transpose();
}

/// Pseudo-inverse of a symmetric matrix through its eigendecomposition.
inline Matrix symmetric_pinv(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
  const Vector& w = eig.eigenvalues();
  const double scale = w.cwiseAbs().maxCoeff();
  Vector inv = Vector::Zero(w.size());
  for (Index i = 0; i < w.size(); ++i)
    if (std::abs(w(i)) > kPinvCutoff * scale) inv(i) = 1.0 / w(i);
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

/// Largest deviation of Q^T Q from the identity.
inline double orthonormality_error(const Matrix& Q) {
  return (Q.transpose() * Q - Matrix::Identity(Q.cols(), Q.cols())).cwiseAbs().maxCoeff();
}

}  // namespace cpfuse
