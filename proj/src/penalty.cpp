#include "atlas/penalty.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

#include "atlas/error.hpp"

namespace atlas {

namespace {

void require_symmetric(const Matrix& m, const char* what) {
  if (m.rows() != m.cols())
    throw ArgumentError(std::string(what) + ": matrix is not square");
  const double asym = m.rows() == 0 ? 0.0 : (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10)
    throw ArgumentError(std::string(what) + ": matrix is not symmetric (max |M - M'| = " +
                        std::to_string(asym) + ")");
}

}  // namespace

Matrix inverse_sqrt(const Matrix& m, double eps) {
  require_symmetric(m, "inverse_sqrt");
  if (!(eps > 0)) throw ArgumentError("inverse_sqrt: eps must be positive");
  if (m.rows() == 0) return m;
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw NumericError("inverse_sqrt: eigendecomposition failed");
  const Vector inv_root = es.eigenvalues().cwiseMax(eps).cwiseSqrt().cwiseInverse();
  Matrix r = es.eigenvectors() * inv_root.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (r + r.transpose());
}

Matrix symmetric_sqrt(const Matrix& m) {
  require_symmetric(m, "symmetric_sqrt");
  if (m.rows() == 0) return m;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("symmetric_sqrt: eigendecomposition failed");
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Matrix r = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (r + r.transpose());
}

Matrix centering_matrix(std::size_t k) {
  const auto n = static_cast<Eigen::Index>(k);
  return Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(k));
}

Matrix empirical_cov(const Matrix& members) {
  if (members.rows() == 0) throw ArgumentError("empirical_cov: rank must be >= 1");
  const Matrix centered = members.rowwise() - members.colwise().mean();
  return members.transpose() * centered;
}

Matrix equicorrelation(std::size_t n, double rho) {
  const auto sz = static_cast<Eigen::Index>(n);
  Matrix m = Matrix::Constant(sz, sz, rho);
  m.diagonal().setOnes();
  return m;
}

double min_feasible_rho(std::size_t n) {
  if (n < 2) return -1.0;
  return -1.0 / static_cast<double>(n - 1) + 1e-6;
}

double clip_rho(std::size_t n, double rho) {
  if (n < 2) return rho;
  return std::max(rho, min_feasible_rho(n));
}

PenaltyContext PenaltyContext::make(const Matrix& sigma, std::size_t k, double eps) {
  if (k == 0) throw ArgumentError("penalty context: rank must be >= 1");
  return {inverse_sqrt(sigma, eps), centering_matrix(k)};
}

Matrix whitened_cov(const Matrix& members, const PenaltyContext& ctx) {
  return ctx.whitening * empirical_cov(members) * ctx.whitening.transpose();
}

double penalty_direct(const Matrix& members, const Matrix& sigma, double eps) {
  if (members.cols() != sigma.rows())
    throw ArgumentError("penalty_direct: member count does not match covariance size");
  const Matrix r = inverse_sqrt(sigma, eps);
  const Matrix tilde = r * empirical_cov(members) * r.transpose();
  return tilde.cwiseAbs().sum() - tilde.diagonal().cwiseAbs().sum();
}

Matrix penalty_signs(const Matrix& members, const PenaltyContext& ctx) {
  const Matrix tilde = whitened_cov(members, ctx);
  const auto n = tilde.rows();
  Matrix s = Matrix::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = a + 1; b < n; ++b) {
      // sign(vec' U_ab vec) = sign(2 sigma~_ab)
      const double sign = tilde(a, b) < 0.0 ? -1.0 : 1.0;
      s(a, b) = sign;
      s(b, a) = sign;
    }
  return s;
}

Matrix sign_weighted_coupling(const Matrix& signs, const PenaltyContext& ctx) {
  const auto n = signs.rows();
  Matrix coupling = Matrix::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const Vector ga = ctx.gamma(static_cast<std::size_t>(a));
      const Vector gb = ctx.gamma(static_cast<std::size_t>(b));
      coupling.noalias() += signs(a, b) * (ga * gb.transpose() + gb * ga.transpose());
    }
  return coupling;
}

QuadraticPenalty penalty_quadratic(const Matrix& members, const PenaltyContext& ctx) {
  const auto k = members.rows();
  const auto n = members.cols();
  if (static_cast<std::size_t>(n) != ctx.group_size() || static_cast<std::size_t>(k) != ctx.rank())
    throw ArgumentError("penalty_quadratic: shape mismatch with penalty context");

  QuadraticPenalty out;
  out.signs = penalty_signs(members, ctx);
  const Matrix coupling = sign_weighted_coupling(out.signs, ctx);

  // Kronecker product coupling (x) C, block (a,b) = coupling(a,b) * C.
  out.system = Matrix::Zero(n * k, n * k);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b)
      out.system.block(a * k, b * k, k, k) = coupling(a, b) * ctx.centering;

  const Eigen::Map<const Vector> vec(members.data(), n * k);
  out.value = vec.dot(out.system * vec);
  return out;
}

double frozen_penalty_value(const Matrix& members, const Matrix& coupling,
                            const Matrix& centering) {
  const Matrix cov = members.transpose() * (centering * members);
  return (cov.array() * coupling.array()).sum();
}

}  // namespace atlas
