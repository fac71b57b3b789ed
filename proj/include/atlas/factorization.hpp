#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "atlas/data_model.hpp"
#include "atlas/penalty.hpp"

namespace atlas {

/// A partition of one tensor mode (stores or products) into groups, each with
/// a target covariance for its members' latent vectors.
struct Grouping {
  std::vector<std::vector<std::uint32_t>> members;
  std::vector<Matrix> covariance;  // one n_g x n_g matrix per group
  std::vector<std::string> labels;

  bool empty() const { return members.empty(); }
  std::size_t size() const { return members.size(); }

  /// Every entity in its own group (no demand coupling).
  static Grouping singletons(std::size_t n);
  /// Equicorrelation targets from one rho per group, clipped to feasibility.
  static Grouping from_rho(std::vector<std::vector<std::uint32_t>> members,
                           const std::vector<double>& rho,
                           std::vector<std::string> labels = {});

  /// Throws ArgumentError unless this is a partition of 0..n-1 with symmetric
  /// covariance blocks whose eigenvalues are >= -1e-10.
  void validate(std::size_t n, const char* mode) const;
};

struct GroupStructure {
  Grouping stores;
  Grouping products;  // empty: no product-side penalty
};

struct FitDiagnostics {
  std::size_t indefinite_shifts = 0;
  double max_shift = 0.0;
  std::size_t rejected_solves = 0;
  std::size_t iterative_solves = 0;
};

struct FactorModel {
  Matrix P;  // n x k
  Matrix Q;  // m x k
  Matrix W;  // T x k, may be extended past the training window
  std::size_t k = 0;
  double lambda1 = 0.0;
  double lambda1_star = 0.0;
  double lambda2 = 0.0;
  std::size_t iterations_run = 0;
  double final_loss = 0.0;
  bool converged = false;
  std::vector<double> loss_trace;  // entry 0 is the loss at initialization
  FitDiagnostics diagnostics;
  std::optional<Standardizer> standardizer;
};

/// Prediction p_i . (q_j * w_t) for one cell, destandardized when a
/// standardizer is attached. Throws ArgumentError on out-of-range indices.
double predict(const FactorModel& model, std::size_t i, std::size_t j, std::size_t t);

/// Same without destandardization.
double predict_raw(const FactorModel& model, std::size_t i, std::size_t j, std::size_t t);

struct Hyperparams {
  std::size_t k = 8;
  double lambda1 = 0.0;
  double lambda1_star = 0.0;
  double lambda2 = 1.0;
  std::size_t max_iters = 200;
  double tol = 1e-3;
  std::uint64_t seed = 0;
  double eigen_floor = kEigenvalueFloor;
  std::size_t direct_solve_limit = 4096;  // n_g * k above this uses CG
};

enum class BlockPhase { store_group, product_group, time_point };

struct BlockEvent {
  BlockPhase phase = BlockPhase::store_group;
  std::size_t cycle = 0;
  std::size_t block = 0;   // group index or week
  const Matrix* signs = nullptr;  // frozen sign pattern; null for ridge blocks
  double objective_before = 0.0;  // block objective with frozen signs
  double objective_after = 0.0;
  double shift = 0.0;
  bool accepted = true;
};

/// Observer hooks, invoked around every block solve. `model` reflects the
/// state before (begin) or after (end) the solve.
struct BlockObserver {
  std::function<void(const BlockEvent&, const FactorModel&)> on_begin;
  std::function<void(const BlockEvent&, const FactorModel&)> on_end;
};

/// Extra ridge targets for the time block: adds coupling * ||w_t - target_t||^2
/// for every week with active[t].
struct TimeCoupling {
  double weight = 0.0;
  Matrix targets;  // T x k
  std::vector<bool> active;
};

/// Uniform [0.1, 1.1] entries scaled by (mean |y| / k)^(1/3); rows of
/// entities without observations are zero.
FactorModel initialize_model(const SalesTensor& tensor, std::size_t k, std::uint64_t seed);

/// Penalized squared loss with |.| penalties (signs recomputed from the model).
double combined_loss(const SalesTensor& tensor, const FactorModel& model,
                     const GroupStructure& groups, double eigen_floor = kEigenvalueFloor);

/// Ridge solve of every w_t given P and Q. Weeks without observations get
/// w_t = 0; lambda2 = 0 with a rank-deficient design uses the minimum-norm
/// solution.
Matrix update_time_factors(const SalesTensor& tensor, const Matrix& P, const Matrix& Q,
                           double lambda2);

/// Joint solve of one store group's latent vectors with signs frozen at the
/// incoming P. Returns the k x n_g matrix of updated member vectors.
Matrix update_store_group(const SalesTensor& tensor, const std::vector<std::uint32_t>& members,
                          const Matrix& P, const Matrix& Q, const Matrix& W, double lambda1,
                          double lambda2, const PenaltyContext& ctx);

Matrix update_product_group(const SalesTensor& tensor, const std::vector<std::uint32_t>& members,
                            const Matrix& P, const Matrix& Q, const Matrix& W,
                            double lambda1_star, double lambda2, const PenaltyContext& ctx);

/// Blockwise coordinate descent over (store groups, product groups, weeks).
/// Holds the per-mode cell indices and per-group penalty constants so the
/// pipeline can interleave its own steps between block sweeps.
class FactorizationSolver {
 public:
  FactorizationSolver(const SalesTensor& tensor, GroupStructure groups, const Hyperparams& hp);
  ~FactorizationSolver();
  FactorizationSolver(const FactorizationSolver&) = delete;
  FactorizationSolver& operator=(const FactorizationSolver&) = delete;

  FactorModel& model();
  const FactorModel& model() const;
  void set_model(FactorModel model);
  void set_observer(BlockObserver observer);
  void set_time_coupling(std::optional<TimeCoupling> coupling);

  void update_store_groups(std::size_t cycle = 0);
  void update_product_groups(std::size_t cycle = 0);
  void update_time(std::size_t cycle = 0);

  /// Combined loss of the current model, including any time coupling term.
  double loss() const;

  /// Runs cycles until 1 - L_u / L_{u-1} <= tol or max_iters. Throws
  /// NumericError if the loss becomes non-finite.
  void run();

  const GroupStructure& groups() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

FactorModel fit(const SalesTensor& tensor, const GroupStructure& groups, const Hyperparams& hp,
                const BlockObserver& observer = {});

// ---------------------------------------------------------------------------
// Matrix (two-way) baseline

struct MatrixEntry {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  double y = 0.0;
};

struct MatrixFactors {
  Matrix P;  // n x k
  Matrix Q;  // m x k
  std::size_t iterations = 0;
};

/// Observed entries of the week-t slice.
std::vector<MatrixEntry> matrix_slice(const SalesTensor& tensor, std::size_t t);
/// Per (store, product) mean over the observed weeks.
std::vector<MatrixEntry> matrix_time_aggregate(const SalesTensor& tensor);

/// Alternating ridge regression on the observed entries of an n x m matrix.
MatrixFactors matrix_baseline_fit(const std::vector<MatrixEntry>& entries, std::size_t n,
                                  std::size_t m, std::size_t k, double lambda,
                                  std::size_t max_iters = 500, double tol = 1e-12,
                                  std::uint64_t seed = 0);

double matrix_baseline_predict(const MatrixFactors& factors, std::size_t i, std::size_t j);

}  // namespace atlas
