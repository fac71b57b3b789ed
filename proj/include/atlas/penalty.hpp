#pragma once

#include <Eigen/Dense>
#include <cstddef>

namespace atlas {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kEigenvalueFloor = 1e-8;

/// Symmetric inverse square root through an eigendecomposition. Eigenvalues
/// below `eps` are raised to `eps` first, so singular input gives a finite
/// result. Throws ArgumentError if `m` is not symmetric within 1e-10.
Matrix inverse_sqrt(const Matrix& m, double eps = kEigenvalueFloor);

/// Symmetric square root, eigenvalues clamped at zero.
Matrix symmetric_sqrt(const Matrix& m);

/// C = I - 11'/k; centers a k-vector across its coordinates.
Matrix centering_matrix(std::size_t k);

/// Empirical covariance of group members, F' C F, where column a of `members`
/// (k x n_g) is the latent vector of member a.
Matrix empirical_cov(const Matrix& members);

/// Equicorrelation matrix (1 - rho) I + rho 11'.
Matrix equicorrelation(std::size_t n, double rho);

/// Lower bound on rho for an n x n equicorrelation matrix to be positive
/// semi-definite, plus the 1e-6 margin used throughout.
double min_feasible_rho(std::size_t n);

/// Clips rho up to min_feasible_rho(n) when n >= 2.
double clip_rho(std::size_t n, double rho);

/// Sum of |off-diagonal| entries of the whitened covariance R (F'CF) R', with
/// R = inverse_sqrt(sigma). Both (a,b) and (b,a) are counted.
double penalty_direct(const Matrix& members, const Matrix& sigma,
                      double eps = kEigenvalueFloor);

/// Per-group constants of the covariance-shrinkage penalty.
struct PenaltyContext {
  Matrix whitening;  // R = Sigma^{-1/2}, symmetric
  Matrix centering;  // C = I - 11'/k

  static PenaltyContext make(const Matrix& sigma, std::size_t k, double eps = kEigenvalueFloor);

  std::size_t group_size() const { return static_cast<std::size_t>(whitening.rows()); }
  std::size_t rank() const { return static_cast<std::size_t>(centering.rows()); }

  /// gamma_a: column a of R', i.e. row a of R as a column vector.
  Vector gamma(std::size_t a) const { return whitening.row(static_cast<Eigen::Index>(a)).transpose(); }
};

/// Whitened covariance R (F'CF) R'.
Matrix whitened_cov(const Matrix& members, const PenaltyContext& ctx);

/// Sign pattern s_ab of the whitened off-diagonals (+1 for zero); symmetric,
/// zero diagonal.
Matrix penalty_signs(const Matrix& members, const PenaltyContext& ctx);

/// S = sum_{a<b} s_ab (gamma_a gamma_b' + gamma_b gamma_a'). The penalty's
/// quadratic form over vec(F) is S (x) C.
Matrix sign_weighted_coupling(const Matrix& signs, const PenaltyContext& ctx);

struct QuadraticPenalty {
  double value = 0.0;
  Matrix signs;   // n_g x n_g
  Matrix system;  // (n_g k) x (n_g k), vec(F) stacks the columns of F
};

/// Evaluates the penalty as vec(F)' (sum_{a<b} s_ab U_ab) vec(F) with
/// U_ab = (gamma_a gamma_b' + gamma_b gamma_a') (x) C and the signs taken from F.
/// Builds the explicit Kronecker-structured system matrix.
QuadraticPenalty penalty_quadratic(const Matrix& members, const PenaltyContext& ctx);

/// Value of the frozen-sign quadratic form at `members` without forming the
/// Kronecker product: trace(F'CF S).
double frozen_penalty_value(const Matrix& members, const Matrix& coupling, const Matrix& centering);

}  // namespace atlas
