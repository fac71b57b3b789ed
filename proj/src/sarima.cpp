#include "atlas/sarima.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <spdlog/spdlog.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <tuple>

#include "atlas/csv.hpp"
#include "atlas/error.hpp"

namespace atlas {

namespace {

constexpr double kPacfBound = 0.9999;
constexpr double kRootMargin = 1e-6;

// Sparse lag polynomial 1 - sum c_i B^{lag_i} (AR side) or 1 + sum (MA side).
struct LagPoly {
  std::vector<std::size_t> lags;
  std::vector<double> coef;

  std::size_t degree() const { return lags.empty() ? 0 : lags.back(); }
};

// (1 - sum a_i B^i)(1 - sum A_i B^{si}) written as 1 - sum c_j B^j.
LagPoly ar_product(const std::vector<double>& a, const std::vector<double>& A, std::size_t s) {
  std::vector<double> full(a.size() + s * A.size() + 1, 0.0);
  std::vector<double> lhs(a.size() + 1, 0.0), rhs(s * A.size() + 1, 0.0);
  lhs[0] = rhs[0] = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) lhs[i + 1] = -a[i];
  for (std::size_t i = 0; i < A.size(); ++i) rhs[s * (i + 1)] = -A[i];
  for (std::size_t i = 0; i < lhs.size(); ++i)
    for (std::size_t j = 0; j < rhs.size(); ++j) full[i + j] += lhs[i] * rhs[j];
  LagPoly out;
  for (std::size_t j = 1; j < full.size(); ++j)
    if (full[j] != 0.0) {
      out.lags.push_back(j);
      out.coef.push_back(-full[j]);
    }
  return out;
}

// (1 + sum b_i B^i)(1 + sum B_i B^{si}) written as 1 + sum c_j B^j.
LagPoly ma_product(const std::vector<double>& b, const std::vector<double>& B, std::size_t s) {
  std::vector<double> nb(b.size()), nB(B.size());
  for (std::size_t i = 0; i < b.size(); ++i) nb[i] = -b[i];
  for (std::size_t i = 0; i < B.size(); ++i) nB[i] = -B[i];
  LagPoly out = ar_product(nb, nB, s);
  for (auto& c : out.coef) c = -c;
  return out;
}

// Durbin-Levinson: partial autocorrelations to AR coefficients of a
// stationary polynomial.
std::vector<double> pacf_to_ar(const std::vector<double>& r) {
  std::vector<double> phi;
  for (std::size_t k = 0; k < r.size(); ++k) {
    std::vector<double> next(k + 1);
    next[k] = r[k];
    for (std::size_t j = 0; j < k; ++j) next[j] = phi[j] - r[k] * phi[k - 1 - j];
    phi = std::move(next);
  }
  return phi;
}

std::vector<double> constrained(const double* u, std::size_t n) {
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = kPacfBound * std::tanh(u[i]);
  return pacf_to_ar(r);
}

std::vector<double> negated(std::vector<double> v) {
  for (auto& x : v) x = -x;
  return v;
}

// Roots of 1 - sum c_i z^i lie outside the unit circle (with margin) iff the
// companion matrix eigenvalues lie inside 1 / (1 + margin).
bool roots_outside(const std::vector<double>& c) {
  if (c.empty()) return true;
  const auto n = static_cast<Eigen::Index>(c.size());
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) companion(0, i) = c[static_cast<std::size_t>(i)];
  for (Eigen::Index i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
  const Eigen::VectorXcd eig = companion.eigenvalues();
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::abs(eig(i)) >= 1.0 / (1.0 + kRootMargin)) return false;
  return true;
}

// Conditional residuals: the first `start` residuals are zero and excluded.
std::vector<double> css_residuals(const std::vector<double>& w, const LagPoly& ar,
                                  const LagPoly& ma, std::size_t start) {
  std::vector<double> e(w.size(), 0.0);
  for (std::size_t t = start; t < w.size(); ++t) {
    double v = w[t];
    for (std::size_t i = 0; i < ar.lags.size(); ++i) v -= ar.coef[i] * w[t - ar.lags[i]];
    for (std::size_t i = 0; i < ma.lags.size(); ++i)
      if (ma.lags[i] <= t) v -= ma.coef[i] * e[t - ma.lags[i]];
    e[t] = v;
  }
  return e;
}

struct Problem {
  const std::vector<double>* z = nullptr;  // standardized differenced series
  SarimaSpec spec;
  std::size_t start = 0;

  std::size_t dim() const { return spec.n_coefficients(); }

  // Parameter layout: ar(p), sar(P), ma(q), sma(Q), mean.
  void unpack(const double* x, std::vector<double>& ar, std::vector<double>& sar,
              std::vector<double>& ma, std::vector<double>& sma, double& mean) const {
    std::size_t o = 0;
    ar = constrained(x + o, spec.p);
    o += spec.p;
    sar = constrained(x + o, spec.P);
    o += spec.P;
    ma = negated(constrained(x + o, spec.q));
    o += spec.q;
    sma = negated(constrained(x + o, spec.Q));
    o += spec.Q;
    mean = spec.include_mean ? x[o] : 0.0;
  }

  double css(const double* x) const {
    std::vector<double> ar, sar, ma, sma;
    double mean = 0.0;
    unpack(x, ar, sar, ma, sma, mean);
    std::vector<double> w(*z);
    for (auto& v : w) v -= mean;
    const auto e = css_residuals(w, ar_product(ar, sar, spec.s), ma_product(ma, sma, spec.s), start);
    double total = 0.0;
    for (std::size_t t = start; t < e.size(); ++t) total += e[t] * e[t];
    return total / static_cast<double>(e.size() - start);
  }
};

double objective_f(const gsl_vector* x, void* params) {
  return static_cast<const Problem*>(params)->css(x->data);
}

void objective_df(const gsl_vector* x, void* params, gsl_vector* g) {
  const auto* pr = static_cast<const Problem*>(params);
  std::vector<double> v(x->data, x->data + x->size);
  for (std::size_t i = 0; i < x->size; ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(v[i]));
    const double keep = v[i];
    v[i] = keep + h;
    const double up = pr->css(v.data());
    v[i] = keep - h;
    const double down = pr->css(v.data());
    v[i] = keep;
    gsl_vector_set(g, i, (up - down) / (2.0 * h));
  }
}

void objective_fdf(const gsl_vector* x, void* params, double* f, gsl_vector* g) {
  *f = objective_f(x, params);
  objective_df(x, params, g);
}

std::vector<double> minimize(const Problem& problem) {
  const std::size_t n = problem.dim();
  std::vector<double> best(n, 0.0);
  if (n == 0) return best;

  gsl_multimin_function_fdf fn;
  fn.n = n;
  fn.f = objective_f;
  fn.df = objective_df;
  fn.fdf = objective_fdf;
  fn.params = const_cast<Problem*>(&problem);

  gsl_vector* x = gsl_vector_calloc(n);
  gsl_multimin_fdfminimizer* m =
      gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, n);
  gsl_multimin_fdfminimizer_set(m, &fn, x, 0.1, 0.1);
  int status = GSL_CONTINUE;
  for (int it = 0; it < 500 && status == GSL_CONTINUE; ++it) {
    status = gsl_multimin_fdfminimizer_iterate(m);
    if (status) break;  // no further progress along the search direction
    status = gsl_multimin_test_gradient(m->gradient, 1e-9);
  }
  for (std::size_t i = 0; i < n; ++i) best[i] = gsl_vector_get(m->x, i);
  const double value = m->f;
  gsl_multimin_fdfminimizer_free(m);
  gsl_vector_free(x);
  if (!std::isfinite(value)) throw NumericError("CSS optimizer diverged");
  return best;
}

// GSL aborts on errors by default; the status codes are checked instead.
void disable_gsl_abort() {
  static std::once_flag once;
  std::call_once(once, [] { gsl_set_error_handler_off(); });
}

}  // namespace

void SarimaSpec::validate() const {
  if (s == 0) throw ArgumentError("season length s must be >= 1");
  if (d + D > 2) throw ArgumentError("d + D must not exceed 2");
  if (p > 10 || q > 10 || P > 4 || Q > 4) throw ArgumentError("SARIMA orders are too large");
}

std::size_t SarimaSpec::min_length() const {
  const std::size_t season = s > 1 ? s : 0;
  return 10 + d + D * season + std::max(p, q) + season * std::max(P, Q);
}

std::size_t SarimaSpec::n_coefficients() const {
  const bool seasonal = s > 1;
  return p + q + (seasonal ? P + Q : 0) + (include_mean ? 1 : 0);
}

std::string SarimaSpec::to_string() const {
  return "(" + std::to_string(p) + "," + std::to_string(d) + "," + std::to_string(q) + ")(" +
         std::to_string(P) + "," + std::to_string(D) + "," + std::to_string(Q) + ")_" +
         std::to_string(s) + (include_mean ? "" : "_nomean");
}

SarimaSpec parse_sarima_spec(const std::string& text) {
  SarimaSpec spec;
  std::string rest = text;
  if (rest.size() > 7 && rest.ends_with("_nomean")) {
    spec.include_mean = false;
    rest.resize(rest.size() - 7);
  }
  std::size_t v[7] = {0, 0, 0, 0, 0, 0, 1};
  int used = 0;
  const int n = std::sscanf(rest.c_str(), "(%zu,%zu,%zu)(%zu,%zu,%zu)_%zu%n", &v[0], &v[1], &v[2],
                            &v[3], &v[4], &v[5], &v[6], &used);
  bool ok = n == 7 && static_cast<std::size_t>(used) == rest.size();
  if (!ok) {
    used = 0;
    ok = std::sscanf(rest.c_str(), "(%zu,%zu,%zu)%n", &v[0], &v[1], &v[2], &used) == 3 &&
         static_cast<std::size_t>(used) == rest.size();
  }
  if (!ok) throw ArgumentError("bad SARIMA spec '" + text + "' (expected (p,d,q)(P,D,Q)_s)");
  spec.p = v[0];
  spec.d = v[1];
  spec.q = v[2];
  spec.P = v[3];
  spec.D = v[4];
  spec.Q = v[5];
  spec.s = v[6];
  spec.validate();
  return spec;
}

std::vector<double> difference(const std::vector<double>& x, std::size_t d, std::size_t D,
                               std::size_t s) {
  std::vector<double> z = x;
  for (std::size_t r = 0; r < D; ++r) {
    if (z.size() <= s) return {};
    std::vector<double> next(z.size() - s);
    for (std::size_t t = s; t < z.size(); ++t) next[t - s] = z[t] - z[t - s];
    z = std::move(next);
  }
  for (std::size_t r = 0; r < d; ++r) {
    if (z.size() <= 1) return {};
    std::vector<double> next(z.size() - 1);
    for (std::size_t t = 1; t < z.size(); ++t) next[t - 1] = z[t] - z[t - 1];
    z = std::move(next);
  }
  return z;
}

std::vector<double> integrate(const std::vector<double>& head, const std::vector<double>& z,
                              std::size_t d, std::size_t D, std::size_t s) {
  // delta(B) = (1-B)^d (1-B^s)^D = 1 - sum c_j B^j; x_t = z_t + sum c_j x_{t-j}.
  std::vector<double> poly = {1.0};
  auto multiply = [&](std::size_t lag) {
    std::vector<double> next(poly.size() + lag, 0.0);
    for (std::size_t i = 0; i < poly.size(); ++i) {
      next[i] += poly[i];
      next[i + lag] -= poly[i];
    }
    poly = std::move(next);
  };
  for (std::size_t r = 0; r < D; ++r) multiply(s);
  for (std::size_t r = 0; r < d; ++r) multiply(1);
  const std::size_t order = poly.size() - 1;
  if (head.size() != order)
    throw ArgumentError("integrate: need " + std::to_string(order) + " initial values");
  std::vector<double> x = head;
  x.reserve(head.size() + z.size());
  for (double v : z) {
    const std::size_t t = x.size();
    double value = v;
    for (std::size_t j = 1; j <= order; ++j) value -= poly[j] * x[t - j];
    x.push_back(value);
  }
  return x;
}

SarimaFit sarima_fit(const std::vector<double>& series, const SarimaSpec& spec_in) {
  spec_in.validate();
  SarimaSpec spec = spec_in;
  if (spec.s == 1) spec.P = spec.D = spec.Q = 0;
  if (series.size() < spec.min_length())
    throw ArgumentError("series of length " + std::to_string(series.size()) + " is too short for " +
                        spec.to_string() + " (need " + std::to_string(spec.min_length()) + ")");
  for (double v : series)
    if (!std::isfinite(v)) throw ArgumentError("series contains non-finite values");

  const std::vector<double> z = difference(series, spec.d, spec.D, spec.s);
  const std::size_t start = spec.p + spec.s * spec.P;
  const double n = static_cast<double>(z.size());
  double mz = 0.0;
  for (double v : z) mz += v;
  mz /= n;
  double var = 0.0;
  for (double v : z) var += (v - mz) * (v - mz);
  const double sz = std::sqrt(var / n);
  double scale = 0.0;
  for (double v : series) scale = std::max(scale, std::abs(v));

  SarimaFit fit;
  fit.spec = spec;
  fit.n_effective = z.size() - start;
  fit.ar.assign(spec.p, 0.0);
  fit.sar.assign(spec.P, 0.0);
  fit.ma.assign(spec.q, 0.0);
  fit.sma.assign(spec.Q, 0.0);

  if (sz <= 1e-10 * std::max(scale, std::abs(mz))) {
    // Differenced series is constant: nothing left for the ARMA part.
    fit.mean = spec.include_mean ? mz : 0.0;
  } else {
    // Standardized copy so the optimizer sees the same problem at any scale.
    std::vector<double> zs(z.size());
    for (std::size_t t = 0; t < z.size(); ++t) zs[t] = (z[t] - mz) / sz;
    Problem problem{&zs, spec, start};
    disable_gsl_abort();
    const auto x = minimize(problem);
    double mean_std = 0.0;
    problem.unpack(x.data(), fit.ar, fit.sar, fit.ma, fit.sma, mean_std);
    fit.mean = spec.include_mean ? mz + sz * mean_std : 0.0;
    if (!roots_outside(fit.ar) || !roots_outside(fit.sar))
      throw NumericError("fitted AR polynomial of " + spec.to_string() + " is not stationary");
  }

  std::vector<double> w(z);
  for (auto& v : w) v -= fit.mean;
  const auto e = css_residuals(w, ar_product(fit.ar, fit.sar, spec.s),
                               ma_product(fit.ma, fit.sma, spec.s), start);
  for (std::size_t t = start; t < e.size(); ++t) fit.css += e[t] * e[t];
  if (!std::isfinite(fit.css)) throw NumericError("non-finite CSS for " + spec.to_string());

  const double ne = static_cast<double>(fit.n_effective);
  fit.sigma2 = fit.css / ne;
  // Likelihood over the whole differenced series, so specs with different
  // conditioning starts are scored on the same sample.
  const double nz = static_cast<double>(z.size());
  const double floor = 1e-12 * std::max(scale * scale, 1e-300);
  const double s2 = std::max(fit.sigma2, floor);
  fit.loglik = -0.5 * nz * (std::log(2.0 * std::numbers::pi * s2) + 1.0);
  const double k = static_cast<double>(spec.n_coefficients() + 1);
  fit.aicc = nz - k - 1.0 > 0.0
                 ? -2.0 * fit.loglik + 2.0 * k + 2.0 * k * (k + 1.0) / (nz - k - 1.0)
                 : std::numeric_limits<double>::infinity();
  return fit;
}

std::vector<double> sarima_forecast(const SarimaFit& fit, const std::vector<double>& series,
                                    std::size_t horizon) {
  if (horizon == 0) return {};
  const auto& spec = fit.spec;
  const std::size_t s = spec.s;
  const std::vector<double> z = difference(series, spec.d, spec.D, s);
  const std::size_t lead = series.size() - z.size();
  if (z.empty()) throw ArgumentError("series too short to forecast " + spec.to_string());

  const LagPoly ar = ar_product(fit.ar, fit.sar, s);
  const LagPoly ma = ma_product(fit.ma, fit.sma, s);
  std::vector<double> w(z);
  for (auto& v : w) v -= fit.mean;
  const std::size_t start = std::min(ar.degree(), w.size());
  std::vector<double> e = css_residuals(w, ar, ma, start);

  for (std::size_t h = 0; h < horizon; ++h) {
    const std::size_t t = w.size();
    double v = 0.0;
    for (std::size_t i = 0; i < ar.lags.size(); ++i)
      if (ar.lags[i] <= t) v += ar.coef[i] * w[t - ar.lags[i]];
    for (std::size_t i = 0; i < ma.lags.size(); ++i)
      if (ma.lags[i] <= t) v += ma.coef[i] * e[t - ma.lags[i]];
    w.push_back(v);
    e.push_back(0.0);
  }

  std::vector<double> future(horizon);
  for (std::size_t h = 0; h < horizon; ++h) future[h] = w[z.size() + h] + fit.mean;
  if (lead == 0) return future;

  // Rebuild the level series from its last `lead` values forward.
  const std::vector<double> head(series.end() - static_cast<std::ptrdiff_t>(lead), series.end());
  const auto full = integrate(head, future, spec.d, spec.D, s);
  return {full.begin() + static_cast<std::ptrdiff_t>(lead), full.end()};
}

SarimaSpec sarima_select(const std::vector<double>& series, const std::vector<SarimaSpec>& grid) {
  if (grid.empty()) throw ArgumentError("empty SARIMA grid");
  if (grid.size() == 1) return grid.front();
  const SarimaSpec* best = nullptr;
  double best_aicc = std::numeric_limits<double>::infinity();
  auto key = [](const SarimaSpec& s) {
    return std::make_tuple(s.n_coefficients(), s.p, s.d, s.q, s.P, s.D, s.Q, s.s, s.include_mean);
  };
  for (const auto& spec : grid) {
    if (series.size() < spec.min_length()) continue;
    double aicc = 0.0;
    try {
      aicc = sarima_fit(series, spec).aicc;
    } catch (const std::exception& e) {
      spdlog::debug("sarima_select: {} skipped: {}", spec.to_string(), e.what());
      continue;
    }
    if (!std::isfinite(aicc)) continue;
    if (!best || aicc < best_aicc - 1e-9 * std::abs(best_aicc) ||
        (std::abs(aicc - best_aicc) <= 1e-9 * std::abs(best_aicc) && key(spec) < key(*best))) {
      best = &spec;
      best_aicc = aicc;
    }
  }
  if (!best) {
    spdlog::warn("sarima_select: no candidate could be fitted; using (0,1,0)(0,0,0)");
    SarimaSpec fallback;
    fallback.d = 1;
    return fallback;
  }
  if (best->D > 0 && best->s > 1 && series.size() < 3 * best->s)
    spdlog::warn("sarima_select: {} uses seasonal differencing with fewer than 3 seasons ({} points)",
                 best->to_string(), series.size());
  return *best;
}

std::vector<SarimaSpec> default_sarima_grid(std::size_t s) {
  std::vector<SarimaSpec> grid;
  for (std::size_t d = 0; d <= 1; ++d)
    for (std::size_t D = 0; D <= 1; ++D)
      for (std::size_t p = 0; p <= 2; ++p)
        for (std::size_t q = 0; q <= 2; ++q)
          for (std::size_t P = 0; P <= 1; ++P)
            for (std::size_t Q = 0; Q <= 1; ++Q) {
              SarimaSpec spec{p, d, q, P, D, Q, s, true};
              if (s == 1 && (P || Q || D)) continue;
              grid.push_back(spec);
            }
  return grid;
}

void write_sarima_coefficients(const std::filesystem::path& path,
                               const std::vector<SarimaFit>& fits) {
  auto out = csv::open_output(path);
  out << "dimension,spec,term,lag,value\n";
  for (std::size_t l = 0; l < fits.size(); ++l) {
    const auto& f = fits[l];
    const std::string spec = '"' + f.spec.to_string() + '"';
    auto emit = [&](const char* term, const std::vector<double>& c, std::size_t stride) {
      for (std::size_t i = 0; i < c.size(); ++i)
        out << l << ',' << spec << ',' << term << ',' << (i + 1) * stride << ','
            << csv::format_exact(c[i]) << '\n';
    };
    emit("ar", f.ar, 1);
    emit("ma", f.ma, 1);
    emit("sar", f.sar, f.spec.s);
    emit("sma", f.sma, f.spec.s);
    out << l << ',' << spec << ",mean,0," << csv::format_exact(f.mean) << '\n';
    out << l << ',' << spec << ",sigma2,0," << csv::format_exact(f.sigma2) << '\n';
    out << l << ',' << spec << ",aicc,0," << csv::format_exact(f.aicc) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace atlas
