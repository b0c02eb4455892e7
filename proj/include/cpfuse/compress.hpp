#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <variant>

#include "coupling.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace cpfuse {

struct CompressionBases {
  Matrix U;  ///< I x R1
  Matrix V;  ///< J x R2
  Matrix W;  ///< K x R3 (shared between tensors in the joint case)
  DenseTensor3 core;
};

/// Y x1 U^T x2 V^T x3 W^T.
inline DenseTensor3 project_core(const DenseTensor3& Y, const Matrix& U, const Matrix& V,
                                 const Matrix& W) {
  return mode_product(mode_product(mode_product(Y, U.transpose(), 1), V.transpose(), 2),
                      W.transpose(), 3);
}

/// (U, V, W) . core, the Tucker reconstruction.
inline DenseTensor3 expand_core(const CompressionBases& b) {
  return mode_product(mode_product(mode_product(b.core, b.U, 1), b.V, 2), b.W, 3);
}

namespace detail {
inline void check_ranks(const DenseTensor3& Y, std::array<Index, 3> ranks) {
  for (int m = 0; m < 3; ++m)
    if (ranks[static_cast<std::size_t>(m)] < 1 || ranks[static_cast<std::size_t>(m)] > Y.dim(m))
      throw std::invalid_argument("truncated_hosvd: rank " +
                                  std::to_string(ranks[static_cast<std::size_t>(m)]) +
                                  " invalid for mode " + std::to_string(m + 1));
}
}  // namespace detail

inline CompressionBases truncated_hosvd(const DenseTensor3& Y, std::array<Index, 3> ranks,
                                        SvdMode mode, Rng& rng) {
  detail::check_ranks(Y, ranks);
  CompressionBases b;
  b.U = leading_left_singular_vectors(unfold(Y, 1), ranks[0], mode, rng);
  b.V = leading_left_singular_vectors(unfold(Y, 2), ranks[1], mode, rng);
  b.W = leading_left_singular_vectors(unfold(Y, 3), ranks[2], mode, rng);
  b.core = project_core(Y, b.U, b.V, b.W);
  return b;
}

/// Leading left singular vectors of [Y_(3)/sigma_n, Y'_(3)/sigma_n'].
inline Matrix joint_mode3_basis(const DenseTensor3& Y, const DenseTensor3& Yp, double sigma_n,
                                double sigma_np, Index R3, SvdMode mode, Rng& rng) {
  if (Y.dim(2) != Yp.dim(2))
    throw DimensionError("joint_mode3_basis: third dimensions differ");
  if (!(sigma_n > 0) || !(sigma_np > 0))
    throw std::invalid_argument("joint_mode3_basis: noise levels must be positive");
  const Matrix Y3 = unfold(Y, 3), Y3p = unfold(Yp, 3);
  Matrix S(Y3.rows(), Y3.cols() + Y3p.cols());
  S << Y3 / sigma_n, Y3p / sigma_np;
  if (R3 < 1 || R3 > Y.dim(2)) throw std::invalid_argument("joint_mode3_basis: R3 out of range");
  return leading_left_singular_vectors(S, R3, mode, rng);
}

struct CompressedCoupled {
  CoupledProblem problem;
  CompressionBases bases;
  CompressionBases bases_p;
};

/// Compresses modes 1-2 of each tensor independently and mode 3 with the
/// shared weighted basis. The compressed problem is directly coupled
/// (H = H' = I) with the original noise and coupling levels.
inline CompressedCoupled compress_coupled_problem(const CoupledProblem& p,
                                                  std::array<Index, 3> ranks,
                                                  std::array<Index, 3> ranks_p, SvdMode mode,
                                                  Rng& rng) {
  validate_problem(p);
  const auto* g = std::get_if<HybridGaussianCoupling>(&p.coupling);
  if (!g)
    throw std::invalid_argument("compress_coupled_problem: only hybrid Gaussian couplings");
  const Index K = p.Y.dim(2);
  if (p.Yp.dim(2) != K || g->H.rows() != K || !g->H.isIdentity(0.0) || !g->Hp.isIdentity(0.0))
    throw std::invalid_argument(
        "compress_coupled_problem: joint compression needs direct coupling (H = H' = I)");
  if (ranks[2] != ranks_p[2])
    throw std::invalid_argument("compress_coupled_problem: both tensors share the mode-3 rank");
  detail::check_ranks(p.Y, ranks);
  detail::check_ranks(p.Yp, ranks_p);
  const double sn = std::get<GaussianNoise>(p.noise).sigma;
  const double snp = std::get<GaussianNoise>(p.noise_p).sigma;

  CompressedCoupled out;
  const Matrix Wj = joint_mode3_basis(p.Y, p.Yp, sn, snp, ranks[2], mode, rng);
  auto fill = [&](const DenseTensor3& Y, std::array<Index, 3> r, CompressionBases& b) {
    b.U = leading_left_singular_vectors(unfold(Y, 1), r[0], mode, rng);
    b.V = leading_left_singular_vectors(unfold(Y, 2), r[1], mode, rng);
    b.W = Wj;
    b.core = project_core(Y, b.U, b.V, b.W);
  };
  fill(p.Y, ranks, out.bases);
  fill(p.Yp, ranks_p, out.bases_p);
  HybridGaussianCoupling cc = HybridGaussianCoupling::direct(ranks[2], g->sigma_c, g->coupled_cols);
  out.problem = CoupledProblem{out.bases.core, out.bases_p.core, p.noise, p.noise_p, cc, p.R, p.Rp};
  return out;
}

/// A = U A_c, B = V B_c, C = W C_c.
inline CpModel decompress_model(const CpModel& core_model, const CompressionBases& b) {
  core_model.validate();
  if (b.U.cols() != core_model.A.rows() || b.V.cols() != core_model.B.rows() ||
      b.W.cols() != core_model.C.rows())
    throw DimensionError("decompress_model: bases do not match the compressed model");
  return {b.U * core_model.A, b.V * core_model.B, b.W * core_model.C};
}

/// Projects a full-size model into the compressed coordinates (the inverse
/// of decompress_model on span(U) x span(V) x span(W)).
inline CpModel compress_model(const CpModel& m, const CompressionBases& b) {
  m.validate();
  if (b.U.rows() != m.A.rows() || b.V.rows() != m.B.rows() || b.W.rows() != m.C.rows())
    throw DimensionError("compress_model: bases do not match the model");
  return {b.U.transpose() * m.A, b.V.transpose() * m.B, b.W.transpose() * m.C};
}

}  // namespace cpfuse
