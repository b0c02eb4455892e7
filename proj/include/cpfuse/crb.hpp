#pragma once

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace cpfuse {

enum class BoundMode { bayesian, hybrid };

/// Bound setup for C = H C' + Gamma with the first rows of A, B, A', B' fixed
/// to one. The tilde factors hold rows 2..I (resp. 2..J). In hybrid mode
/// At, Bt, Apt, Bpt, Cp are the deterministic parameter values; in bayesian
/// mode they are the prior means and the sigma_* fields the prior std-devs.
struct CrbScenario {
  BoundMode mode = BoundMode::hybrid;
  Matrix At, Bt, Apt, Bpt, Cp;
  Matrix H;  ///< K x K'
  double sigma_c = 1.0;
  double sigma_n = 1.0;
  double sigma_np = 1.0;
  double sigma_A = 0.0, sigma_B = 0.0, sigma_Ap = 0.0, sigma_Bp = 0.0, sigma_Cp = 0.0;

  Index R() const { return Cp.cols(); }
  Index K() const { return H.rows(); }

  void validate() const {
    const Index r = R();
    if (At.cols() != r || Bt.cols() != r || Apt.cols() != r || Bpt.cols() != r)
      throw DimensionError("CrbScenario: factors must share the component count");
    if (H.cols() != Cp.rows())
      throw DimensionError("CrbScenario: H must have K' columns");
    if (!(sigma_c > 0) || !(sigma_n > 0) || !(sigma_np > 0))
      throw std::invalid_argument("CrbScenario: sigma_c, sigma_n, sigma_n' must be > 0");
    if (mode == BoundMode::bayesian &&
        !(sigma_A > 0 && sigma_B > 0 && sigma_Ap > 0 && sigma_Bp > 0 && sigma_Cp > 0))
      throw std::invalid_argument("CrbScenario: bayesian mode needs positive prior std-devs");
  }
};

struct ParamLabel {
  char factor;       ///< 'A', 'B', 'C', 'a', 'b', 'c' (lower case for the primed model)
  Index component;   ///< 1-based
  Index row;         ///< 1-based row of the full factor
};

inline std::string to_string(const ParamLabel& l) {
  static const char* names[] = {"A", "B", "C", "A'", "B'", "C'"};
  const std::string f = "ABCabc";
  const auto pos = f.find(l.factor);
  std::ostringstream os;
  os << names[pos] << "(" << l.row << "," << l.component << ")";
  return os.str();
}

struct BoundResult {
  Matrix matrix;
  Vector per_parameter;
  std::vector<ParamLabel> block_index;
  /// Offsets of the six factor blocks [A~, B~, C, A'~, B'~, C'] plus the end.
  std::array<Index, 7> offsets{};

  /// Sum of the bound diagonal over one factor block (0..5).
  double block_trace(int block) const {
    const auto b = static_cast<std::size_t>(block);
    return per_parameter.segment(offsets[b], offsets[b + 1] - offsets[b]).sum();
  }
};

/// First and second moments entering one tensor's Fisher blocks:
/// At, Bt, C are means, AA(r,s) = E[a_r^T a_s] with the leading one included.
struct FisherMoments {
  Matrix At, Bt, C;
  Matrix AA, BB, CC;
};

/// Fisher information of (A~, B~, C) for Y = (A, B, C) + N(0, sigma^2),
/// ordered [A~ ; B~ ; C] with components concatenated inside each factor.
inline Matrix fisher_from_moments(const FisherMoments& f, double sigma) {
  const Index R = f.C.cols(), I1 = f.At.rows(), J1 = f.Bt.rows(), K = f.C.rows();
  const Index oB = I1 * R, oC = oB + J1 * R, n = oC + K * R;
  Matrix F = Matrix::Zero(n, n);
  for (Index r = 0; r < R; ++r)
    for (Index s = 0; s < R; ++s) {
      F.block(r * I1, s * I1, I1, I1).diagonal().setConstant(f.BB(r, s) * f.CC(r, s));
      F.block(oB + r * J1, oB + s * J1, J1, J1).diagonal().setConstant(f.AA(r, s) * f.CC(r, s));
      F.block(oC + r * K, oC + s * K, K, K).diagonal().setConstant(f.AA(r, s) * f.BB(r, s));
      F.block(r * I1, oB + s * J1, I1, J1) = f.CC(r, s) * f.At.col(s) * f.Bt.col(r).transpose();
      F.block(r * I1, oC + s * K, I1, K) = f.BB(r, s) * f.At.col(s) * f.C.col(r).transpose();
      F.block(oB + r * J1, oC + s * K, J1, K) = f.AA(r, s) * f.Bt.col(s) * f.C.col(r).transpose();
    }
  F.triangularView<Eigen::StrictlyLower>() = F.transpose().triangularView<Eigen::StrictlyLower>();
  return F / (sigma * sigma);
}

/// Fisher information of one CP model whose A and B have unit first rows.
inline Matrix fisher_blocks(const CpModel& m, double sigma_n) {
  m.validate();
  if (m.A.rows() < 2 || m.B.rows() < 2)
    throw DimensionError("fisher_blocks: A and B need at least two rows");
  const double tol = 1e-12;
  if ((m.A.row(0).array() - 1.0).abs().maxCoeff() > tol ||
      (m.B.row(0).array() - 1.0).abs().maxCoeff() > tol)
    throw std::invalid_argument("fisher_blocks: first rows of A and B must equal 1");
  if (!(sigma_n > 0)) throw std::invalid_argument("fisher_blocks: sigma_n must be > 0");
  FisherMoments f;
  f.At = m.A.bottomRows(m.A.rows() - 1);
  f.Bt = m.B.bottomRows(m.B.rows() - 1);
  f.C = m.C;
  f.AA = m.A.transpose() * m.A;
  f.BB = m.B.transpose() * m.B;
  f.CC = m.C.transpose() * m.C;
  return fisher_from_moments(f, sigma_n);
}

/// Adds a leading row of ones to a tilde factor.
inline Matrix with_unit_first_row(const Matrix& T) {
  Matrix M(T.rows() + 1, T.cols());
  M.row(0).setOnes();
  M.bottomRows(T.rows()) = T;
  return M;
}

namespace detail {

inline Matrix gram_with_one(const Matrix& T) {
  return T.transpose() * T + Matrix::Ones(T.cols(), T.cols());
}

inline Matrix block_diag(const Matrix& X, const Matrix& Y) {
  Matrix M = Matrix::Zero(X.rows() + Y.rows(), X.cols() + Y.cols());
  M.topLeftCorner(X.rows(), X.cols()) = X;
  M.bottomRightCorner(Y.rows(), Y.cols()) = Y;
  return M;
}

inline std::array<Index, 7> block_offsets(const CrbScenario& s) {
  const Index R = s.R();
  std::array<Index, 7> o{};
  const Index sizes[6] = {s.At.rows() * R, s.Bt.rows() * R, s.K() * R,
                          s.Apt.rows() * R, s.Bpt.rows() * R, s.Cp.rows() * R};
  for (int b = 0; b < 6; ++b) o[b + 1] = o[b] + sizes[b];
  return o;
}

}  // namespace detail

/// diag(E_{C|C'}[F], F') with E[c_r] = H c'_r and
/// E[c_r^T c_s] = c'_r^T H^T H c'_s + K sigma_c^2 delta_rs.
inline Matrix expected_fisher_hybrid(const CrbScenario& s) {
  if (s.mode != BoundMode::hybrid) throw std::invalid_argument("expected_fisher_hybrid: bayesian scenario");
  s.validate();
  const Index R = s.R();
  const Matrix HC = s.H * s.Cp;
  FisherMoments f{s.At, s.Bt, HC, detail::gram_with_one(s.At), detail::gram_with_one(s.Bt),
                  HC.transpose() * HC +
                      static_cast<double>(s.K()) * s.sigma_c * s.sigma_c * Matrix::Identity(R, R)};
  FisherMoments fp{s.Apt, s.Bpt, s.Cp, detail::gram_with_one(s.Apt), detail::gram_with_one(s.Bpt),
                   s.Cp.transpose() * s.Cp};
  return detail::block_diag(fisher_from_moments(f, s.sigma_n),
                            fisher_from_moments(fp, s.sigma_np));
}

/// Prior-averaged Fisher information; every factor has an isotropic Gaussian
/// prior and C = H C' + Gamma.
inline Matrix expected_fisher_bayesian(const CrbScenario& s) {
  if (s.mode != BoundMode::bayesian)
    throw std::invalid_argument("expected_fisher_bayesian: hybrid scenario");
  s.validate();
  const Matrix I = Matrix::Identity(s.R(), s.R());
  auto second = [&](const Matrix& T, double sd) -> Matrix {
    return detail::gram_with_one(T) + static_cast<double>(T.rows()) * sd * sd * I;
  };
  const Matrix HC = s.H * s.Cp;
  const double trHH = (s.H.transpose() * s.H).trace();
  const double c_var = static_cast<double>(s.K()) * s.sigma_c * s.sigma_c + trHH * s.sigma_Cp * s.sigma_Cp;
  FisherMoments f{s.At, s.Bt, HC, second(s.At, s.sigma_A), second(s.Bt, s.sigma_B),
                  HC.transpose() * HC + c_var * I};
  FisherMoments fp{s.Apt, s.Bpt, s.Cp, second(s.Apt, s.sigma_Ap), second(s.Bpt, s.sigma_Bp),
                   s.Cp.transpose() * s.Cp + static_cast<double>(s.Cp.rows()) * s.sigma_Cp * s.sigma_Cp * I};
  return detail::block_diag(fisher_from_moments(f, s.sigma_n),
                            fisher_from_moments(fp, s.sigma_np));
}

/// Information matrix of the priors. Bayesian: every block; hybrid: only the
/// C / C' coupling blocks.
inline Matrix prior_matrix(const CrbScenario& s) {
  s.validate();
  const auto o = detail::block_offsets(s);
  const Index n = o[6], R = s.R(), K = s.K(), Kp = s.Cp.rows();
  Matrix P = Matrix::Zero(n, n);
  const double ic = 1.0 / (s.sigma_c * s.sigma_c);
  const Matrix HtH = s.H.transpose() * s.H;
  for (Index r = 0; r < R; ++r) {
    P.block(o[2] + r * K, o[2] + r * K, K, K).diagonal().array() += ic;
    P.block(o[5] + r * Kp, o[5] + r * Kp, Kp, Kp) += ic * HtH;
    P.block(o[2] + r * K, o[5] + r * Kp, K, Kp) = -ic * s.H;
    P.block(o[5] + r * Kp, o[2] + r * K, Kp, K) = -ic * s.H.transpose();
  }
  if (s.mode == BoundMode::bayesian) {
    auto diag = [&](int b, double sd) {
      P.block(o[b], o[b], o[b + 1] - o[b], o[b + 1] - o[b]).diagonal().array() += 1.0 / (sd * sd);
    };
    diag(0, s.sigma_A);
    diag(1, s.sigma_B);
    diag(3, s.sigma_Ap);
    diag(4, s.sigma_Bp);
    diag(5, s.sigma_Cp);
  }
  return P;
}

inline std::vector<ParamLabel> parameter_labels(const CrbScenario& s) {
  std::vector<ParamLabel> out;
  const Index R = s.R();
  const struct { char f; Index rows; Index shift; } blocks[6] = {
      {'A', s.At.rows(), 2}, {'B', s.Bt.rows(), 2}, {'C', s.K(), 1},
      {'a', s.Apt.rows(), 2}, {'b', s.Bpt.rows(), 2}, {'c', s.Cp.rows(), 1}};
  for (const auto& b : blocks)
    for (Index r = 0; r < R; ++r)
      for (Index i = 0; i < b.rows; ++i) out.push_back({b.f, r + 1, i + b.shift});
  return out;
}

/// BCRB (bayesian) or HCRB (hybrid): inverse of expected Fisher plus prior
/// information, via a symmetric eigendecomposition.
inline BoundResult bound(const CrbScenario& s) {
  s.validate();
  const Matrix Fbar = s.mode == BoundMode::bayesian ? expected_fisher_bayesian(s)
                                                   : expected_fisher_hybrid(s);
  const Matrix J = Fbar + prior_matrix(s);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(J);
  if (eig.info() != Eigen::Success) throw SingularSystemError("bound: eigendecomposition failed");
  const Vector& w = eig.eigenvalues();
  const double floor = 1e-12 * w.cwiseAbs().maxCoeff();
  BoundResult out;
  out.offsets = detail::block_offsets(s);
  if (w(0) <= floor) {
    static const char* names[] = {"A~", "B~", "C", "A'~", "B'~", "C'"};
    const Vector v = eig.eigenvectors().col(0).cwiseAbs2();
    int worst = 0;
    double mass = -1.0;
    for (int b = 0; b < 6; ++b) {
      const double m = v.segment(out.offsets[b], out.offsets[b + 1] - out.offsets[b]).sum();
      if (m > mass) {
        mass = m;
        worst = b;
      }
    }
    throw SingularSystemError(std::string("bound: information matrix is singular (smallest "
                                          "eigenvalue ") +
                              std::to_string(w(0)) + "); deficient block " + names[worst]);
  }
  out.matrix = eig.eigenvectors() * w.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  out.matrix = 0.5 * (out.matrix + out.matrix.transpose()).eval();
  out.per_parameter = out.matrix.diagonal();
  out.block_index = parameter_labels(s);
  return out;
}

}  // namespace cpfuse
