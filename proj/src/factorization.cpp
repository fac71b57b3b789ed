#include "atlas/factorization.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>

#include "atlas/error.hpp"

namespace atlas {

namespace {

using Index = Eigen::Index;

Index ix(std::size_t v) { return static_cast<Index>(v); }

// Cell ids grouped by one tensor coordinate, CSR layout.
struct ModeIndex {
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> ids;

  std::span<const std::uint32_t> cells_of(std::size_t entity) const {
    return {ids.data() + offsets[entity], offsets[entity + 1] - offsets[entity]};
  }
  std::size_t count(std::size_t entity) const { return offsets[entity + 1] - offsets[entity]; }
};

enum class Mode { store, product, week };

std::uint32_t coord(const Cell& c, Mode mode) {
  switch (mode) {
    case Mode::store: return c.i;
    case Mode::product: return c.j;
    case Mode::week: return c.t;
  }
  return 0;
}

ModeIndex build_index(const SalesTensor& tensor, Mode mode, std::size_t extent) {
  ModeIndex index;
  index.offsets.assign(extent + 1, 0);
  for (const auto& c : tensor.cells) ++index.offsets[coord(c, mode) + 1];
  for (std::size_t e = 0; e < extent; ++e) index.offsets[e + 1] += index.offsets[e];
  index.ids.resize(tensor.cells.size());
  std::vector<std::size_t> cursor(index.offsets.begin(), index.offsets.end() - 1);
  for (std::uint32_t id = 0; id < tensor.cells.size(); ++id)
    index.ids[cursor[coord(tensor.cells[id], mode)]++] = id;
  return index;
}

// Least-squares data for one entity: design rows are elementwise products of
// the two other modes' factor rows.
struct LocalProblem {
  Matrix X;  // cells x k
  Vector y;
  Matrix A;  // X'X
  Vector b;  // X'y

  std::size_t count() const { return static_cast<std::size_t>(y.size()); }

  double squared_error(const Vector& x) const {
    if (y.size() == 0) return 0.0;
    return (y - X * x).squaredNorm();
  }
};

LocalProblem local_problem(const SalesTensor& tensor, std::span<const std::uint32_t> cell_ids,
                           Mode mode, const Matrix& P, const Matrix& Q, const Matrix& W) {
  const Index k = P.cols();
  LocalProblem lp;
  lp.X.resize(ix(cell_ids.size()), k);
  lp.y.resize(ix(cell_ids.size()));
  for (std::size_t r = 0; r < cell_ids.size(); ++r) {
    const Cell& c = tensor.cells[cell_ids[r]];
    switch (mode) {
      case Mode::store: lp.X.row(ix(r)) = Q.row(c.j).cwiseProduct(W.row(c.t)); break;
      case Mode::product: lp.X.row(ix(r)) = P.row(c.i).cwiseProduct(W.row(c.t)); break;
      case Mode::week: lp.X.row(ix(r)) = P.row(c.i).cwiseProduct(Q.row(c.j)); break;
    }
    lp.y(ix(r)) = c.y;
  }
  lp.A.noalias() = lp.X.transpose() * lp.X;
  lp.b.noalias() = lp.X.transpose() * lp.y;
  return lp;
}

// Solves (A + ridge I) x = rhs; ridge == 0 falls back to the minimum-norm
// solution when A is singular.
Vector ridge_solve(const Matrix& A, const Vector& rhs, double ridge) {
  Matrix K = A;
  K.diagonal().array() += ridge;
  if (ridge > 0.0) {
    Eigen::LLT<Matrix> llt(K);
    if (llt.info() == Eigen::Success) return llt.solve(rhs);
  }
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(K);
  return cod.solve(rhs);
}

struct GroupSolve {
  Matrix updated;        // k x n_g
  Matrix signs;          // empty when the penalty is inactive
  double before = 0.0;
  double after = 0.0;
  double shift = 0.0;
  double step = 1.0;     // fraction of the solve actually taken
  bool accepted = true;
  bool iterative = false;
};

constexpr int kMaxStepHalvings = 30;

// Preconditioned conjugate gradients for the symmetric positive definite group
// system, applied matrix-free: blockdiag(A_a + lambda2 I) + lambda (S (x) C + shift I).
Vector group_cg(const std::vector<const LocalProblem*>& active, const Matrix& coupling,
                const Matrix& centering, double lambda2, double lambda_pen, double shift,
                const Vector& rhs, const Vector& x0, std::size_t group_id) {
  const Index k = centering.rows();
  const Index n = ix(active.size());
  auto apply = [&](const Vector& x) {
    Vector out(x.size());
    for (Index a = 0; a < n; ++a)
      out.segment(a * k, k).noalias() = active[ix(a)]->A * x.segment(a * k, k);
    out += (lambda2 + lambda_pen * shift) * x;
    const Eigen::Map<const Matrix> X(x.data(), k, n);
    Matrix cxs = centering * X * coupling;
    out += lambda_pen * Eigen::Map<const Vector>(cxs.data(), x.size());
    return out;
  };
  Vector diag(rhs.size());
  for (Index a = 0; a < n; ++a)
    for (Index l = 0; l < k; ++l)
      diag(a * k + l) = active[ix(a)]->A(l, l) + lambda2 + lambda_pen * shift +
                        lambda_pen * coupling(a, a) * centering(l, l);
  diag = diag.cwiseMax(1e-300);

  Vector x = x0;
  Vector r = rhs - apply(x);
  Vector z = r.cwiseQuotient(diag);
  Vector p = z;
  double rz = r.dot(z);
  const double target = 1e-10 * std::max(rhs.norm(), 1e-300);
  const std::size_t max_iter = 10 * static_cast<std::size_t>(rhs.size());
  for (std::size_t it = 0; it < max_iter; ++it) {
    if (r.norm() <= target) return x;
    const Vector ap = apply(p);
    const double denom = p.dot(ap);
    if (!(denom > 0.0)) break;
    const double alpha = rz / denom;
    x += alpha * p;
    r -= alpha * ap;
    z = r.cwiseQuotient(diag);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  if (r.norm() <= target) return x;
  throw NumericError("conjugate-gradient solve did not converge for group " +
                     std::to_string(group_id));
}

// One group's block: minimize sum_a [||y_a - X_a x_a||^2 + lambda2 ||x_a||^2]
// + lambda_pen * vec(X)' (S (x) C) vec(X) with S built from signs frozen at
// `current`. Members without observations stay at zero.
GroupSolve solve_group(const std::vector<LocalProblem>& problems, const Matrix& current,
                       double lambda2, double lambda_pen, const PenaltyContext* ctx,
                       std::size_t direct_limit, std::size_t group_id) {
  const Index k = current.rows();
  const Index n = current.cols();
  GroupSolve out;
  out.updated = Matrix::Zero(k, n);

  std::vector<Index> active;
  for (Index a = 0; a < n; ++a)
    if (problems[ix(a)].count() > 0) active.push_back(a);

  const bool penalized = lambda_pen > 0.0 && ctx != nullptr && n >= 2 && k >= 2;
  Matrix coupling;
  if (penalized) {
    out.signs = penalty_signs(current, *ctx);
    coupling = sign_weighted_coupling(out.signs, *ctx);
  }

  auto objective = [&](const Matrix& members) {
    double value = 0.0;
    for (Index a = 0; a < n; ++a) {
      const Vector x = members.col(a);
      value += problems[ix(a)].squared_error(x) + lambda2 * x.squaredNorm();
    }
    if (penalized) value += lambda_pen * frozen_penalty_value(members, coupling, ctx->centering);
    return value;
  };
  out.before = objective(current);

  const Index n_act = ix(active.size());
  if (!penalized || n_act == 0) {
    for (Index a : active)
      out.updated.col(a) = ridge_solve(problems[ix(a)].A, problems[ix(a)].b, lambda2);
  } else {
    Matrix coupling_act(n_act, n_act);
    for (Index a = 0; a < n_act; ++a)
      for (Index b = 0; b < n_act; ++b) coupling_act(a, b) = coupling(active[ix(a)], active[ix(b)]);
    Eigen::SelfAdjointEigenSolver<Matrix> es(coupling_act, Eigen::EigenvaluesOnly);
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < 0.0) out.shift = -min_eig + 1e-8;

    // The shift enters as a proximal term centred at the incoming iterate so
    // the frozen-sign objective cannot increase.
    Vector x0(n_act * k);
    Vector rhs(n_act * k);
    for (Index a = 0; a < n_act; ++a) {
      x0.segment(a * k, k) = current.col(active[ix(a)]);
      rhs.segment(a * k, k) = problems[ix(active[ix(a)])].b;
    }
    rhs += lambda_pen * out.shift * x0;

    Vector x;
    const std::size_t dim = static_cast<std::size_t>(n_act * k);
    if (dim <= direct_limit) {
      Matrix K = Matrix::Zero(n_act * k, n_act * k);
      for (Index a = 0; a < n_act; ++a) {
        K.block(a * k, a * k, k, k) = problems[ix(active[ix(a)])].A;
        for (Index b = 0; b < n_act; ++b)
          K.block(a * k, b * k, k, k) += lambda_pen * coupling_act(a, b) * ctx->centering;
      }
      K.diagonal().array() += lambda2 + lambda_pen * out.shift;
      Eigen::LLT<Matrix> llt(K);
      if (llt.info() == Eigen::Success && (lambda2 > 0.0 || out.shift > 0.0)) {
        x = llt.solve(rhs);
      } else {
        Eigen::CompleteOrthogonalDecomposition<Matrix> cod(K);
        x = cod.solve(rhs);
      }
    } else {
      std::vector<const LocalProblem*> act;
      for (Index a : active) act.push_back(&problems[ix(a)]);
      x = group_cg(act, coupling_act, ctx->centering, lambda2, lambda_pen, out.shift, rhs, x0,
                   group_id);
      out.iterative = true;
    }
    for (Index a = 0; a < n_act; ++a) out.updated.col(active[ix(a)]) = x.segment(a * k, k);
  }

  if (!out.updated.allFinite()) throw NumericError("non-finite block solution for group " +
                                                   std::to_string(group_id));
  out.after = objective(out.updated);
  double scale = std::abs(out.before);
  for (Index a : active) scale += problems[ix(a)].y.squaredNorm();
  if (out.after > out.before + 1e-12 * scale) {
    out.accepted = false;
    out.updated = current;
    out.after = out.before;
    return out;
  }
  if (!penalized) return out;

  // Frozen signs can flip at the solution, so the |.| objective may still
  // rise. Halve the step toward the incoming block until it does not; every
  // point on the segment keeps the frozen objective at or below its start.
  auto true_objective = [&](const Matrix& members) {
    double value = 0.0;
    for (Index a = 0; a < n; ++a) {
      const Vector x = members.col(a);
      value += problems[ix(a)].squared_error(x) + lambda2 * x.squaredNorm();
    }
    const Matrix tilde = whitened_cov(members, *ctx);
    return value + lambda_pen * (tilde.cwiseAbs().sum() - tilde.diagonal().cwiseAbs().sum());
  };
  const double true_before = true_objective(current);
  const Matrix step = out.updated - current;
  double alpha = 1.0;
  for (int halving = 0; halving <= kMaxStepHalvings; ++halving, alpha *= 0.5) {
    const Matrix trial = current + alpha * step;
    if (true_objective(trial) <= true_before + 1e-12 * scale) {
      out.updated = trial;
      out.after = objective(trial);
      out.step = alpha;
      return out;
    }
  }
  out.accepted = false;
  out.updated = current;
  out.after = out.before;
  return out;
}

Grouping effective_grouping(const Grouping& g, std::size_t n) {
  return g.empty() ? Grouping::singletons(n) : g;
}

std::vector<PenaltyContext> make_contexts(const Grouping& g, std::size_t k, double eps) {
  std::vector<PenaltyContext> ctx;
  ctx.reserve(g.size());
  for (const auto& sigma : g.covariance) ctx.push_back(PenaltyContext::make(sigma, k, eps));
  return ctx;
}

Matrix gather_columns(const Matrix& F, const std::vector<std::uint32_t>& members) {
  Matrix out(F.cols(), ix(members.size()));
  for (std::size_t a = 0; a < members.size(); ++a) out.col(ix(a)) = F.row(members[a]).transpose();
  return out;
}

double group_penalty_total(const Matrix& F, const Grouping& g,
                           const std::vector<PenaltyContext>& ctx) {
  double total = 0.0;
  for (std::size_t gi = 0; gi < g.size(); ++gi) {
    if (g.members[gi].size() < 2) continue;
    const Matrix tilde = whitened_cov(gather_columns(F, g.members[gi]), ctx[gi]);
    total += tilde.cwiseAbs().sum() - tilde.diagonal().cwiseAbs().sum();
  }
  return total;
}

}  // namespace

// ---------------------------------------------------------------------------
// Grouping

Grouping Grouping::singletons(std::size_t n) {
  Grouping g;
  g.members.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    g.members.push_back({i});
    g.covariance.push_back(Matrix::Identity(1, 1));
    g.labels.push_back(std::to_string(i));
  }
  return g;
}

Grouping Grouping::from_rho(std::vector<std::vector<std::uint32_t>> members,
                            const std::vector<double>& rho, std::vector<std::string> labels) {
  if (rho.size() != members.size())
    throw ArgumentError("one rho per group required");
  Grouping g;
  for (std::size_t gi = 0; gi < members.size(); ++gi) {
    const std::size_t n = members[gi].size();
    g.covariance.push_back(equicorrelation(n, clip_rho(n, rho[gi])));
  }
  if (labels.empty())
    for (std::size_t gi = 0; gi < members.size(); ++gi) labels.push_back(std::to_string(gi));
  g.members = std::move(members);
  g.labels = std::move(labels);
  return g;
}

void Grouping::validate(std::size_t n, const char* mode) const {
  const std::string what(mode);
  if (covariance.size() != members.size())
    throw ArgumentError(what + " grouping: one covariance block per group required");
  std::vector<int> seen(n, 0);
  for (std::size_t gi = 0; gi < members.size(); ++gi) {
    if (members[gi].empty()) throw ArgumentError(what + " grouping: empty group");
    for (auto e : members[gi]) {
      if (e >= n) throw ArgumentError(what + " grouping: member index out of range");
      ++seen[e];
    }
    const Matrix& s = covariance[gi];
    if (s.rows() != ix(members[gi].size()) || s.cols() != s.rows())
      throw ArgumentError(what + " grouping: covariance block size does not match group " +
                          std::to_string(gi));
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-10)
      throw ArgumentError(what + " grouping: covariance of group " + std::to_string(gi) +
                          " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10)
      throw ArgumentError(what + " grouping: covariance of group " + std::to_string(gi) +
                          " is not positive semi-definite");
  }
  for (std::size_t e = 0; e < n; ++e)
    if (seen[e] != 1)
      throw ArgumentError(what + " grouping: entity " + std::to_string(e) +
                          (seen[e] == 0 ? " is in no group" : " is in several groups"));
}

// ---------------------------------------------------------------------------
// Prediction

double predict_raw(const FactorModel& model, std::size_t i, std::size_t j, std::size_t t) {
  if (i >= static_cast<std::size_t>(model.P.rows()) ||
      j >= static_cast<std::size_t>(model.Q.rows()) ||
      t >= static_cast<std::size_t>(model.W.rows()))
    throw ArgumentError("predict: index (" + std::to_string(i) + ", " + std::to_string(j) + ", " +
                        std::to_string(t) + ") out of range");
  return (model.P.row(ix(i)).cwiseProduct(model.Q.row(ix(j)))).dot(model.W.row(ix(t)));
}

double predict(const FactorModel& model, std::size_t i, std::size_t j, std::size_t t) {
  const double raw = predict_raw(model, i, j, t);
  return model.standardizer ? model.standardizer->invert(raw) : raw;
}

// ---------------------------------------------------------------------------
// Initialization and loss

FactorModel initialize_model(const SalesTensor& tensor, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ArgumentError("rank k must be >= 1");
  FactorModel model;
  model.k = k;
  std::vector<bool> has_store(tensor.n_stores, false);
  std::vector<bool> has_product(tensor.n_products, false);
  std::vector<bool> has_week(tensor.n_weeks, false);
  double mean_abs = 0.0;
  for (const auto& c : tensor.cells) {
    has_store[c.i] = has_product[c.j] = has_week[c.t] = true;
    mean_abs += std::abs(c.y);
  }
  if (!tensor.cells.empty()) mean_abs /= static_cast<double>(tensor.cells.size());
  const double scale = std::cbrt(mean_abs / static_cast<double>(k));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.1, 1.1);
  auto fill = [&](Matrix& F, std::size_t rows, const std::vector<bool>& observed) {
    F.resize(ix(rows), ix(k));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t l = 0; l < k; ++l) {
        const double v = unif(rng) * scale;
        F(ix(r), ix(l)) = observed[r] ? v : 0.0;
      }
  };
  fill(model.P, tensor.n_stores, has_store);
  fill(model.Q, tensor.n_products, has_product);
  fill(model.W, tensor.n_weeks, has_week);
  return model;
}

double combined_loss(const SalesTensor& tensor, const FactorModel& model,
                     const GroupStructure& groups, double eigen_floor) {
  double loss = 0.0;
  for (const auto& c : tensor.cells) {
    const double r = c.y - predict_raw(model, c.i, c.j, c.t);
    loss += r * r;
  }
  if (model.lambda1 > 0.0 && !groups.stores.empty())
    loss += model.lambda1 * group_penalty_total(model.P, groups.stores,
                                                make_contexts(groups.stores, model.k, eigen_floor));
  if (model.lambda1_star > 0.0 && !groups.products.empty())
    loss += model.lambda1_star *
            group_penalty_total(model.Q, groups.products,
                                make_contexts(groups.products, model.k, eigen_floor));
  loss += model.lambda2 *
          (model.P.squaredNorm() + model.Q.squaredNorm() + model.W.squaredNorm());
  return loss;
}

// ---------------------------------------------------------------------------
// Free-standing block updates

Matrix update_time_factors(const SalesTensor& tensor, const Matrix& P, const Matrix& Q,
                           double lambda2) {
  const ModeIndex index = build_index(tensor, Mode::week, tensor.n_weeks);
  Matrix W = Matrix::Zero(ix(tensor.n_weeks), P.cols());
  for (std::size_t t = 0; t < tensor.n_weeks; ++t) {
    if (index.count(t) == 0) continue;
    const auto lp = local_problem(tensor, index.cells_of(t), Mode::week, P, Q, W);
    W.row(ix(t)) = ridge_solve(lp.A, lp.b, lambda2).transpose();
  }
  return W;
}

namespace {

Matrix update_group_free(const SalesTensor& tensor, const std::vector<std::uint32_t>& members,
                         Mode mode, const Matrix& P, const Matrix& Q, const Matrix& W,
                         double lambda_pen, double lambda2, const PenaltyContext& ctx) {
  const std::size_t extent = mode == Mode::store ? tensor.n_stores : tensor.n_products;
  const ModeIndex index = build_index(tensor, mode, extent);
  std::vector<LocalProblem> problems;
  for (auto e : members) problems.push_back(local_problem(tensor, index.cells_of(e), mode, P, Q, W));
  const Matrix current = gather_columns(mode == Mode::store ? P : Q, members);
  return solve_group(problems, current, lambda2, lambda_pen, &ctx, 4096, 0).updated;
}

}  // namespace

Matrix update_store_group(const SalesTensor& tensor, const std::vector<std::uint32_t>& members,
                          const Matrix& P, const Matrix& Q, const Matrix& W, double lambda1,
                          double lambda2, const PenaltyContext& ctx) {
  return update_group_free(tensor, members, Mode::store, P, Q, W, lambda1, lambda2, ctx);
}

Matrix update_product_group(const SalesTensor& tensor, const std::vector<std::uint32_t>& members,
                            const Matrix& P, const Matrix& Q, const Matrix& W,
                            double lambda1_star, double lambda2, const PenaltyContext& ctx) {
  return update_group_free(tensor, members, Mode::product, P, Q, W, lambda1_star, lambda2, ctx);
}

// ---------------------------------------------------------------------------
// Solver

struct FactorizationSolver::Impl {
  const SalesTensor& tensor;
  GroupStructure groups;  // effective: never empty on the store side
  Hyperparams hp;
  FactorModel model;
  ModeIndex by_store;
  ModeIndex by_product;
  ModeIndex by_week;
  std::vector<PenaltyContext> store_ctx;
  std::vector<PenaltyContext> product_ctx;
  BlockObserver observer;
  std::optional<TimeCoupling> coupling;

  Impl(const SalesTensor& t, GroupStructure g, const Hyperparams& h)
      : tensor(t), groups(std::move(g)), hp(h) {}

  void notify_begin(const BlockEvent& ev) const {
    if (observer.on_begin) observer.on_begin(ev, model);
  }
  void notify_end(const BlockEvent& ev) const {
    if (observer.on_end) observer.on_end(ev, model);
  }

  void record(const GroupSolve& gs) {
    if (gs.shift > 0.0) {
      ++model.diagnostics.indefinite_shifts;
      model.diagnostics.max_shift = std::max(model.diagnostics.max_shift, gs.shift);
    }
    if (!gs.accepted) ++model.diagnostics.rejected_solves;
    if (gs.iterative) ++model.diagnostics.iterative_solves;
  }

  void update_mode(Mode mode, std::size_t cycle) {
    const bool stores = mode == Mode::store;
    const Grouping& grouping = stores ? groups.stores : groups.products;
    const auto& contexts = stores ? store_ctx : product_ctx;
    const ModeIndex& index = stores ? by_store : by_product;
    const double lambda_pen = stores ? hp.lambda1 : hp.lambda1_star;
    Matrix& F = stores ? model.P : model.Q;

    for (std::size_t gi = 0; gi < grouping.size(); ++gi) {
      const auto& members = grouping.members[gi];
      std::vector<LocalProblem> problems;
      problems.reserve(members.size());
      for (auto e : members)
        problems.push_back(local_problem(tensor, index.cells_of(e), mode, model.P, model.Q,
                                         model.W));
      const Matrix current = gather_columns(F, members);

      BlockEvent ev;
      ev.phase = stores ? BlockPhase::store_group : BlockPhase::product_group;
      ev.cycle = cycle;
      ev.block = gi;
      const bool penalized = lambda_pen > 0.0 && members.size() >= 2 && model.k >= 2;
      Matrix signs;
      if (penalized) {
        signs = penalty_signs(current, contexts[gi]);
        ev.signs = &signs;
      }
      notify_begin(ev);

      GroupSolve gs = solve_group(problems, current, hp.lambda2, lambda_pen,
                                  contexts.empty() ? nullptr : &contexts[gi],
                                  hp.direct_solve_limit, gi);
      record(gs);
      for (std::size_t a = 0; a < members.size(); ++a)
        F.row(members[a]) = gs.updated.col(ix(a)).transpose();

      ev.objective_before = gs.before;
      ev.objective_after = gs.after;
      ev.shift = gs.shift;
      ev.accepted = gs.accepted;
      notify_end(ev);
    }
  }

  void update_time(std::size_t cycle) {
    const bool coupled = coupling && coupling->weight > 0.0;
    const Index k = model.W.cols();
    for (std::size_t t = 0; t < tensor.n_weeks; ++t) {
      const bool active = coupled && t < coupling->active.size() && coupling->active[t];
      BlockEvent ev;
      ev.phase = BlockPhase::time_point;
      ev.cycle = cycle;
      ev.block = t;
      notify_begin(ev);

      std::optional<LocalProblem> lp;
      if (by_week.count(t) > 0)
        lp = local_problem(tensor, by_week.cells_of(t), Mode::week, model.P, model.Q, model.W);
      const Vector target = active ? Vector(coupling->targets.row(ix(t)).transpose())
                                   : Vector::Zero(k);
      auto objective = [&](const Vector& w) {
        double v = (lp ? lp->squared_error(w) : 0.0) + hp.lambda2 * w.squaredNorm();
        if (active) v += coupling->weight * (w - target).squaredNorm();
        return v;
      };

      const Vector current = model.W.row(ix(t)).transpose();
      Vector next = Vector::Zero(k);
      if (lp || active) {
        Matrix A = lp ? lp->A : Matrix::Zero(k, k);
        Vector rhs = lp ? lp->b : Vector::Zero(k);
        double ridge = hp.lambda2;
        if (active) {
          ridge += coupling->weight;
          rhs += coupling->weight * target;
        }
        next = ridge_solve(A, rhs, ridge);
      }
      if (!next.allFinite())
        throw NumericError("non-finite time factor at week " + std::to_string(t));

      const double before = objective(current);
      double after = objective(next);
      double scale = std::abs(before) + (lp ? lp->y.squaredNorm() : 0.0);
      bool accepted = true;
      if (after > before + 1e-12 * scale) {
        accepted = false;
        next = current;
        after = before;
        ++model.diagnostics.rejected_solves;
      }
      model.W.row(ix(t)) = next.transpose();

      ev.objective_before = before;
      ev.objective_after = after;
      ev.accepted = accepted;
      notify_end(ev);
    }
  }

  double loss() const {
    double value = 0.0;
    for (const auto& c : tensor.cells) {
      const double r =
          c.y - (model.P.row(c.i).cwiseProduct(model.Q.row(c.j))).dot(model.W.row(c.t));
      value += r * r;
    }
    if (hp.lambda1 > 0.0) value += hp.lambda1 * group_penalty_total(model.P, groups.stores, store_ctx);
    if (hp.lambda1_star > 0.0 && !groups.products.empty())
      value += hp.lambda1_star * group_penalty_total(model.Q, groups.products, product_ctx);
    value += hp.lambda2 * (model.P.squaredNorm() + model.Q.squaredNorm() + model.W.squaredNorm());
    if (coupling && coupling->weight > 0.0)
      for (std::size_t t = 0; t < tensor.n_weeks && t < coupling->active.size(); ++t)
        if (coupling->active[t])
          value += coupling->weight * (model.W.row(ix(t)) - coupling->targets.row(ix(t))).squaredNorm();
    return value;
  }
};

FactorizationSolver::FactorizationSolver(const SalesTensor& tensor, GroupStructure groups,
                                         const Hyperparams& hp)
    : impl_(std::make_unique<Impl>(tensor, std::move(groups), hp)) {
  if (tensor.empty()) throw ArgumentError("cannot factorize an empty tensor");
  if (hp.k == 0) throw ArgumentError("rank k must be >= 1");
  if (hp.lambda1 < 0 || hp.lambda1_star < 0 || hp.lambda2 < 0)
    throw ArgumentError("tuning parameters must be nonnegative");
  auto& im = *impl_;
  im.groups.stores = effective_grouping(im.groups.stores, tensor.n_stores);
  im.groups.stores.validate(tensor.n_stores, "store");
  if (!im.groups.products.empty()) im.groups.products.validate(tensor.n_products, "product");
  im.store_ctx = make_contexts(im.groups.stores, hp.k, hp.eigen_floor);
  im.product_ctx = make_contexts(im.groups.products, hp.k, hp.eigen_floor);
  if (im.groups.products.empty()) im.groups.products = Grouping::singletons(tensor.n_products);
  if (im.product_ctx.empty()) im.product_ctx = make_contexts(im.groups.products, hp.k, hp.eigen_floor);
  im.by_store = build_index(tensor, Mode::store, tensor.n_stores);
  im.by_product = build_index(tensor, Mode::product, tensor.n_products);
  im.by_week = build_index(tensor, Mode::week, tensor.n_weeks);
  im.model = initialize_model(tensor, hp.k, hp.seed);
  im.model.lambda1 = hp.lambda1;
  im.model.lambda1_star = hp.lambda1_star;
  im.model.lambda2 = hp.lambda2;
}

FactorizationSolver::~FactorizationSolver() = default;

FactorModel& FactorizationSolver::model() { return impl_->model; }
const FactorModel& FactorizationSolver::model() const { return impl_->model; }
const GroupStructure& FactorizationSolver::groups() const { return impl_->groups; }

void FactorizationSolver::set_model(FactorModel model) {
  const auto& t = impl_->tensor;
  if (model.P.rows() != ix(t.n_stores) || model.Q.rows() != ix(t.n_products) ||
      model.W.rows() != ix(t.n_weeks) || model.P.cols() != ix(impl_->hp.k) ||
      model.Q.cols() != ix(impl_->hp.k) || model.W.cols() != ix(impl_->hp.k))
    throw ArgumentError("set_model: factor shapes do not match the tensor and rank");
  model.k = impl_->hp.k;
  model.lambda1 = impl_->hp.lambda1;
  model.lambda1_star = impl_->hp.lambda1_star;
  model.lambda2 = impl_->hp.lambda2;
  impl_->model = std::move(model);
}

void FactorizationSolver::set_observer(BlockObserver observer) {
  impl_->observer = std::move(observer);
}

void FactorizationSolver::set_time_coupling(std::optional<TimeCoupling> coupling) {
  impl_->coupling = std::move(coupling);
}

void FactorizationSolver::update_store_groups(std::size_t cycle) {
  impl_->update_mode(Mode::store, cycle);
}

void FactorizationSolver::update_product_groups(std::size_t cycle) {
  impl_->update_mode(Mode::product, cycle);
}

void FactorizationSolver::update_time(std::size_t cycle) { impl_->update_time(cycle); }

double FactorizationSolver::loss() const { return impl_->loss(); }

void FactorizationSolver::run() {
  auto& model = impl_->model;
  const auto& hp = impl_->hp;
  double previous = loss();
  if (!std::isfinite(previous)) throw NumericError("non-finite loss at initialization");
  model.loss_trace.assign(1, previous);
  model.converged = false;
  for (std::size_t u = 1; u <= hp.max_iters; ++u) {
    update_store_groups(u);
    update_product_groups(u);
    update_time(u);
    const double current = loss();
    if (!std::isfinite(current))
      throw NumericError("non-finite loss at iteration " + std::to_string(u));
    model.loss_trace.push_back(current);
    model.iterations_run = u;
    model.final_loss = current;
    const double j = previous > 0.0 ? 1.0 - current / previous : 0.0;
    if (j <= hp.tol) {
      model.converged = true;
      break;
    }
    previous = current;
  }
  if (hp.max_iters == 0) model.final_loss = previous;
}

FactorModel fit(const SalesTensor& tensor, const GroupStructure& groups, const Hyperparams& hp,
                const BlockObserver& observer) {
  FactorizationSolver solver(tensor, groups, hp);
  solver.set_observer(observer);
  solver.run();
  if (!solver.model().converged)
    spdlog::debug("factorization stopped at max_iters={} without meeting tol={}", hp.max_iters,
                  hp.tol);
  return solver.model();
}

// ---------------------------------------------------------------------------
// Matrix baseline

std::vector<MatrixEntry> matrix_slice(const SalesTensor& tensor, std::size_t t) {
  if (t >= tensor.n_weeks) throw ArgumentError("matrix_slice: week out of range");
  std::vector<MatrixEntry> out;
  for (const auto& c : tensor.cells)
    if (c.t == t) out.push_back({c.i, c.j, c.y});
  return out;
}

std::vector<MatrixEntry> matrix_time_aggregate(const SalesTensor& tensor) {
  std::vector<std::pair<std::uint64_t, double>> keyed;
  keyed.reserve(tensor.cells.size());
  for (const auto& c : tensor.cells)
    keyed.emplace_back((static_cast<std::uint64_t>(c.i) << 32) | c.j, c.y);
  std::sort(keyed.begin(), keyed.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<MatrixEntry> out;
  for (std::size_t r = 0; r < keyed.size();) {
    std::size_t e = r;
    double sum = 0.0;
    while (e < keyed.size() && keyed[e].first == keyed[r].first) sum += keyed[e++].second;
    out.push_back({static_cast<std::uint32_t>(keyed[r].first >> 32),
                   static_cast<std::uint32_t>(keyed[r].first & 0xffffffffu),
                   sum / static_cast<double>(e - r)});
    r = e;
  }
  return out;
}

MatrixFactors matrix_baseline_fit(const std::vector<MatrixEntry>& entries, std::size_t n,
                                  std::size_t m, std::size_t k, double lambda,
                                  std::size_t max_iters, double tol, std::uint64_t seed) {
  if (k == 0) throw ArgumentError("rank k must be >= 1");
  if (lambda < 0) throw ArgumentError("lambda must be nonnegative");
  std::vector<std::vector<std::size_t>> by_row(n);
  std::vector<std::vector<std::size_t>> by_col(m);
  double mean_abs = 0.0;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    if (entries[e].i >= n || entries[e].j >= m) throw ArgumentError("matrix entry out of range");
    by_row[entries[e].i].push_back(e);
    by_col[entries[e].j].push_back(e);
    mean_abs += std::abs(entries[e].y);
  }
  if (!entries.empty()) mean_abs /= static_cast<double>(entries.size());
  const double scale = std::sqrt(mean_abs / static_cast<double>(k));

  MatrixFactors f;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.1, 1.1);
  f.P = Matrix::Zero(ix(n), ix(k));
  f.Q = Matrix::Zero(ix(m), ix(k));
  for (Index r = 0; r < f.P.size(); ++r) f.P.data()[r] = unif(rng) * scale;
  for (Index r = 0; r < f.Q.size(); ++r) f.Q.data()[r] = unif(rng) * scale;

  auto sweep = [&](Matrix& target, const Matrix& other,
                   const std::vector<std::vector<std::size_t>>& lists, bool rows) {
    for (std::size_t a = 0; a < lists.size(); ++a) {
      if (lists[a].empty()) {
        target.row(ix(a)).setZero();
        continue;
      }
      Matrix A = Matrix::Zero(ix(k), ix(k));
      Vector b = Vector::Zero(ix(k));
      for (auto e : lists[a]) {
        const Vector d = other.row(rows ? entries[e].j : entries[e].i).transpose();
        A.noalias() += d * d.transpose();
        b += entries[e].y * d;
      }
      target.row(ix(a)) = ridge_solve(A, b, lambda).transpose();
    }
  };
  auto objective = [&] {
    double v = 0.0;
    for (const auto& e : entries) {
      const double r = e.y - f.P.row(e.i).dot(f.Q.row(e.j));
      v += r * r;
    }
    return v + lambda * (f.P.squaredNorm() + f.Q.squaredNorm());
  };

  double previous = objective();
  for (std::size_t it = 1; it <= max_iters; ++it) {
    sweep(f.P, f.Q, by_row, true);
    sweep(f.Q, f.P, by_col, false);
    f.iterations = it;
    const double current = objective();
    if (previous - current <= tol * std::max(previous, 1e-300)) break;
    previous = current;
  }
  return f;
}

double matrix_baseline_predict(const MatrixFactors& factors, std::size_t i, std::size_t j) {
  if (i >= static_cast<std::size_t>(factors.P.rows()) ||
      j >= static_cast<std::size_t>(factors.Q.rows()))
    throw ArgumentError("matrix_baseline_predict: index out of range");
  return factors.P.row(ix(i)).dot(factors.Q.row(ix(j)));
}

}  // namespace atlas
