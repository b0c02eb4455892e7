#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace cpfuse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Dense 3-way array. Element (i, j, k) (0-based) lives at offset
/// (i*J + j)*K + k, so the third index runs fastest.
class DenseTensor3 {
 public:
  DenseTensor3() = default;

  DenseTensor3(Index I, Index J, Index K, double fill = 0.0)
      : dims_{I, J, K}, data_(checked_size(I, J, K), fill) {}

  DenseTensor3(std::array<Index, 3> dims, std::vector<double> data)
      : dims_(dims), data_(std::move(data)) {
    if (data_.size() != checked_size(dims[0], dims[1], dims[2]))
      throw DimensionError("DenseTensor3: data length does not match I*J*K");
  }

  Index dim(int mode) const { return dims_.at(static_cast<std::size_t>(mode)); }
  const std::array<Index, 3>& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(Index i, Index j, Index k) {
    return data_[offset(i, j, k)];
  }
  double operator()(Index i, Index j, Index k) const {
    return data_[offset(i, j, k)];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  /// View of the linearized entries as an Eigen vector (vectorization order).
  Eigen::Map<const Vector> vec() const {
    return {data_.data(), static_cast<Index>(data_.size())};
  }
  Eigen::Map<Vector> vec() { return {data_.data(), static_cast<Index>(data_.size())}; }

  double squared_norm() const { return vec().squaredNorm(); }

  friend bool operator==(const DenseTensor3&, const DenseTensor3&) = default;

 private:
  static std::size_t checked_size(Index I, Index J, Index K) {
    if (I <= 0 || J <= 0 || K <= 0)
      throw DimensionError("DenseTensor3: dimensions must be positive");
    return static_cast<std::size_t>(I) * static_cast<std::size_t>(J) *
           static_cast<std::size_t>(K);
  }
  std::size_t offset(Index i, Index j, Index k) const {
    return static_cast<std::size_t>((i * dims_[1] + j) * dims_[2] + k);
  }

  std::array<Index, 3> dims_{0, 0, 0};
  std::vector<double> data_;
};

/// Factor triple of a CP model; all factors share the column count R.
struct CpModel {
  Matrix A;
  Matrix B;
  Matrix C;

  Index rank() const { return A.cols(); }
  std::array<Index, 3> dims() const { return {A.rows(), B.rows(), C.rows()}; }

  const Matrix& factor(int mode) const {
    return mode == 0 ? A : (mode == 1 ? B : C);
  }
  Matrix& factor(int mode) { return mode == 0 ? A : (mode == 1 ? B : C); }

  void validate() const {
    if (B.cols() != A.cols() || C.cols() != A.cols())
      throw DimensionError("CpModel: factors must share the column count");
  }

  /// Reorders (and optionally flips) components; perm[r] is the source column
  /// that ends up at position r.
  CpModel permuted(std::span<const Index> perm) const {
    CpModel out{Matrix(A.rows(), A.cols()), Matrix(B.rows(), B.cols()),
                Matrix(C.rows(), C.cols())};
    for (Index r = 0; r < rank(); ++r) {
      out.A.col(r) = A.col(perm[static_cast<std::size_t>(r)]);
      out.B.col(r) = B.col(perm[static_cast<std::size_t>(r)]);
      out.C.col(r) = C.col(perm[static_cast<std::size_t>(r)]);
    }
    return out;
  }
};

/// Mode numbers are 1, 2, 3 as in the usual matricization notation.
inline void check_mode(int mode) {
  if (mode < 1 || mode > 3)
    throw std::invalid_argument("unfold: mode must be 1, 2 or 3, got " +
                                std::to_string(mode));
}

/// Matricization. Mode 1 is I x JK with column k*J + j, mode 2 is J x IK with
/// column k*I + i, mode 3 is K x IJ with column j*I + i. With these orderings
/// unfold((A,B,C),1) = A (C kr B)^T, mode 2 = B (C kr A)^T, mode 3 = C (B kr A)^T.
inline Matrix unfold(const DenseTensor3& T, int mode) {
  check_mode(mode);
  const Index I = T.dim(0), J = T.dim(1), K = T.dim(2);
  const auto d = T.data();
  Matrix M;
  switch (mode) {
    case 1:
      M.resize(I, J * K);
      for (Index i = 0; i < I; ++i)
        for (Index j = 0; j < J; ++j)
          for (Index k = 0; k < K; ++k) M(i, k * J + j) = d[(i * J + j) * K + k];
      break;
    case 2:
      M.resize(J, I * K);
      for (Index i = 0; i < I; ++i)
        for (Index j = 0; j < J; ++j)
          for (Index k = 0; k < K; ++k) M(j, k * I + i) = d[(i * J + j) * K + k];
      break;
    default:
      M.resize(K, I * J);
      for (Index i = 0; i < I; ++i)
        for (Index j = 0; j < J; ++j) {
          const double* src = &d[(i * J + j) * K];
          double* dst = M.col(j * I + i).data();
          for (Index k = 0; k < K; ++k) dst[k] = src[k];
        }
      break;
  }
  return M;
}

/// Inverse of unfold for the given target dimensions.
inline DenseTensor3 refold(const Matrix& M, int mode, std::array<Index, 3> dims) {
  check_mode(mode);
  const Index I = dims[0], J = dims[1], K = dims[2];
  const Index rows = dims[static_cast<std::size_t>(mode - 1)];
  if (M.rows() != rows || M.cols() * rows != I * J * K)
    throw DimensionError("refold: matrix shape inconsistent with mode and dims");
  DenseTensor3 T(I, J, K);
  auto d = T.data();
  for (Index i = 0; i < I; ++i)
    for (Index j = 0; j < J; ++j)
      for (Index k = 0; k < K; ++k) {
        double v;
        if (mode == 1)
          v = M(i, k * J + j);
        else if (mode == 2)
          v = M(j, k * I + i);
        else
          v = M(k, j * I + i);
        d[(i * J + j) * K + k] = v;
      }
  return T;
}

/// Column-wise Kronecker product; row p*rows(Y) + q of column r is X(p,r)*Y(q,r).
inline Matrix khatri_rao(const Matrix& X, const Matrix& Y) {
  if (X.cols() != Y.cols())
    throw DimensionError("khatri_rao: column counts differ");
  const Index P = X.rows(), Q = Y.rows();
  Matrix out(P * Q, X.cols());
  for (Index r = 0; r < X.cols(); ++r)
    for (Index p = 0; p < P; ++p) out.col(r).segment(p * Q, Q) = X(p, r) * Y.col(r);
  return out;
}

/// The multilinear product (A, B, C).
inline DenseTensor3 cp_to_tensor(const Matrix& A, const Matrix& B, const Matrix& C) {
  if (B.cols() != A.cols() || C.cols() != A.cols())
    throw DimensionError("cp_to_tensor: column counts differ");
  const Matrix X3 = C * khatri_rao(B, A).transpose();
  return refold(X3, 3, {A.rows(), B.rows(), C.rows()});
}

inline DenseTensor3 cp_to_tensor(const CpModel& m) { return cp_to_tensor(m.A, m.B, m.C); }

/// Mode-3 unfolding of (A, B, C) without materializing the tensor.
inline Matrix cp_unfold3(const CpModel& m) {
  return m.C * khatri_rao(m.B, m.A).transpose();
}

/// T x_mode M, where M maps dimension `mode` to M.rows().
inline DenseTensor3 mode_product(const DenseTensor3& T, const Matrix& M, int mode) {
  check_mode(mode);
  const auto idx = static_cast<std::size_t>(mode - 1);
  if (M.cols() != T.dims()[idx])
    throw DimensionError("mode_product: matrix columns must match tensor mode size");
  auto dims = T.dims();
  dims[idx] = M.rows();
  return refold(M * unfold(T, mode), mode, dims);
}

enum class Norm { l1, l2 };

struct NormalizedColumns {
  Matrix matrix;
  Vector scales;
};

/// Scales each column to unit l1 or l2 norm. M == matrix * diag(scales).
inline NormalizedColumns normalize_columns(const Matrix& M, Norm norm) {
  NormalizedColumns out{M, Vector(M.cols())};
  for (Index r = 0; r < M.cols(); ++r) {
    const double s = norm == Norm::l2 ? M.col(r).norm() : M.col(r).lpNorm<1>();
    if (!(s > 0.0) || !std::isfinite(s))
      throw DegenerateColumnError("normalize_columns: column " + std::to_string(r) +
                                      " has zero or non-finite norm",
                                  r);
    out.scales(r) = s;
    out.matrix.col(r) /= s;
  }
  return out;
}

}  // namespace cpfuse
