// One PASS/FAIL line per acceptance criterion. Arguments select criteria by
// number; none runs all of them. Exit status is nonzero if any fails.
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "atlas/eval.hpp"
#include "atlas/factorization.hpp"
#include "atlas/lstm.hpp"
#include "atlas/penalty.hpp"
#include "atlas/pipeline.hpp"
#include "atlas/sarima.hpp"
#include "atlas/synthgen.hpp"

using namespace atlas;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index a = 0; a < r; ++a)
    for (Eigen::Index b = 0; b < c; ++b) m(a, b) = n(rng);
  return m;
}

SarimaSpec arima(std::size_t p, std::size_t d, std::size_t q) {
  SarimaSpec s;
  s.p = p;
  s.d = d;
  s.q = q;
  return s;
}

GroupStructure store_groups(const SynthData& d) {
  GroupStructure g;
  g.stores = d.truth.store_grouping();
  return g;
}

// Peak resident set size in bytes.
double peak_rss() {
  std::ifstream in("/proc/self/status");
  std::string key;
  while (in >> key) {
    if (key == "VmHWM:") {
      double kb = 0.0;
      in >> kb;
      return kb * 1024.0;
    }
    std::getline(in, key);
  }
  return 0.0;
}

Outcome penalty_equivalence() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> ng(1, 5), kk(1, 6);
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const int n = ng(rng), k = kk(rng);
    const Matrix a = random_matrix(n, n, rng);
    const Matrix sigma = a * a.transpose() + 0.1 * Matrix::Identity(n, n);
    const Matrix f = random_matrix(k, n, rng);
    const auto ctx = PenaltyContext::make(sigma, static_cast<std::size_t>(k));
    worst = std::max(worst, std::abs(penalty_quadratic(f, ctx).value - penalty_direct(f, sigma)));
  }
  const double secs = since(start);
  return {worst < 1e-8 && secs < 10.0, fmt::format("max |diff| {:.2e}, {:.2f}s", worst, secs)};
}

double training_rmse(const SalesTensor& x, const FactorModel& m) {
  double s = 0.0;
  for (const auto& c : x.cells) {
    const double r = c.y - predict(m, c.i, c.j, c.t);
    s += r * r;
  }
  return std::sqrt(s / static_cast<double>(x.cells.size()));
}

Outcome exact_recovery() {
  const auto start = Clock::now();
  int ok = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthConfig cfg;
    cfg.n_stores = 30;
    cfg.n_products = 40;
    cfg.n_weeks = 50;
    cfg.true_rank = 4;
    cfg.n_store_groups = 10;
    cfg.competition_rho = 0.0;
    cfg.density = 1.0;
    cfg.factor_mean = 0.0;
    cfg.factor_spread = 1.0;
    cfg.season_amplitude = 0.8;
    cfg.week_noise = 0.3;
    cfg.seed = seed;
    const auto data = generate(cfg);
    Hyperparams hp;
    hp.k = 4;
    hp.lambda1 = hp.lambda1_star = hp.lambda2 = 0.0;
    hp.tol = 0.0;
    hp.max_iters = 200;
    hp.seed = seed;
    const auto m = fit(data.tensor, {}, hp);
    const double r = training_rmse(data.tensor, m);
    worst = std::max(worst, r);
    ok += r < 1e-3 && m.iterations_run <= 200;
  }
  const double secs = since(start);
  return {ok == 10 && secs < 60.0,
          fmt::format("{}/10 seeds, worst train RMSE {:.2e}, {:.1f}s", ok, worst, secs)};
}

SalesTensor random_sparse(std::size_t n, std::size_t m, std::size_t T, double density,
                          std::uint64_t seed) {
  SalesTensor x;
  x.n_stores = n;
  x.n_products = m;
  x.n_weeks = T;
  for (std::size_t i = 0; i < n; ++i) x.store_ids.push_back("s" + std::to_string(i));
  for (std::size_t j = 0; j < m; ++j) x.product_ids.push_back("p" + std::to_string(j));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < m; ++j)
      for (std::uint32_t t = 0; t < T; ++t)
        if (u(rng) < density) x.cells.push_back({i, j, t, 5.0 * u(rng)});
  return x;
}

Outcome bcd_monotonicity() {
  std::size_t violations = 0, accepted = 0, not_stopped = 0, max_cycles = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 8 + seed % 5, m = 9 + seed % 4, T = 12 + seed % 6;
    const auto x = random_sparse(n, m, T, 0.25, 1000 + seed);
    // Store groups of up to four with random feasible correlation.
    std::vector<std::vector<std::uint32_t>> members;
    std::vector<double> rho;
    std::uniform_real_distribution<double> ur(-0.3, 0.6);
    for (std::size_t i = 0; i < n; i += 4) {
      std::vector<std::uint32_t> g;
      for (std::size_t a = i; a < std::min(n, i + 4); ++a) g.push_back(static_cast<std::uint32_t>(a));
      rho.push_back(clip_rho(g.size(), ur(rng)));
      members.push_back(std::move(g));
    }
    GroupStructure groups;
    groups.stores = Grouping::from_rho(members, rho);
    Hyperparams hp;
    hp.k = 3;
    hp.lambda1 = 1.0;
    hp.lambda1_star = 0.0;
    hp.lambda2 = 0.3;
    hp.tol = 1e-3;
    hp.max_iters = 200;
    hp.seed = seed;
    BlockObserver obs;
    obs.on_end = [&](const BlockEvent& ev, const FactorModel&) {
      if (!ev.accepted) return;
      ++accepted;
      if (ev.objective_after > ev.objective_before + 1e-9 * std::abs(ev.objective_before))
        ++violations;
    };
    const auto model = fit(x, groups, hp, obs);
    max_cycles = std::max(max_cycles, model.iterations_run);
    not_stopped += !(model.converged && model.iterations_run < 200);
  }
  return {violations == 0 && not_stopped == 0 && accepted > 0,
          fmt::format("{} violations in {} accepted solves, {} runs without J stop, max {} cycles",
                      violations, accepted, not_stopped, max_cycles)};
}

// Criterion-4 setting, shared with the end-to-end comparison.
SynthData demand_data(std::uint64_t seed) {
  SynthConfig c;
  c.n_stores = 60;
  c.n_products = 80;
  c.n_weeks = 120;
  c.n_store_groups = 15;
  c.competition_rho = clip_rho(4, -0.5);
  c.density = 0.1;
  c.noise_sigma = 0.1;
  c.noise_relative = true;
  c.seed = seed;
  return generate(c);
}

PipelineConfig demand_config(std::uint64_t seed) {
  PipelineConfig pc;
  pc.split = SplitSpec{104, 112, 120};
  pc.horizon = 8;
  pc.hp.seed = seed;
  pc.forecast.seed = seed;
  pc.grid.k = {4, 8, 16};
  return pc;
}

const EvalReport& demand_report(std::uint64_t seed) {
  static std::map<std::uint64_t, EvalReport> memo;
  auto it = memo.find(seed);
  if (it != memo.end()) return it->second;
  const auto data = demand_data(seed);
  CompareOptions opt;
  opt.tune = true;
  auto report = compare(data.tensor, store_groups(data), {Method::atlas_sarima, Method::cpd_sarima},
                        demand_config(seed), opt);
  return memo.emplace(seed, std::move(report)).first->second;
}

Outcome demand_benefit() {
  const auto start = Clock::now();
  int wins = 0;
  double total = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto& r = demand_report(seed);
    const auto& atlas = r.rows[0];
    const auto& cpd = r.rows[1];
    if (!atlas.error.empty() || !cpd.error.empty())
      return {false, fmt::format("seed {} failed: {}{}", seed, atlas.error, cpd.error)};
    wins += atlas.rmse <= cpd.rmse;
    const double gain = (cpd.rmse - atlas.rmse) / cpd.rmse;
    total += gain;
    per_seed += fmt::format(" {:+.1f}%", 100.0 * gain);
  }
  const double mean_gain = total / 10.0;
  const double secs = since(start);
  return {wins >= 8 && mean_gain >= 0.03 && secs < 900.0,
          fmt::format("ATLAS <= CPD on {}/10 seeds, mean improvement {:.2f}%, {:.0f}s; per seed{}",
                      wins, 100.0 * mean_gain, secs, per_seed)};
}

std::vector<double> white(std::size_t T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> x(T);
  for (auto& v : x) v = nd(rng);
  return x;
}

Outcome sarima_correctness() {
  const auto start = Clock::now();
  // (a) AR(1) recovery.
  double err = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    double v = 0.0;
    for (int b = 0; b < 200; ++b) v = 0.8 * v + nd(rng);
    std::vector<double> x(500);
    for (auto& xi : x) xi = v = 0.8 * v + nd(rng);
    err += std::abs(sarima_fit(x, arima(1, 0, 0)).ar.at(0) - 0.8);
  }
  err /= 20.0;
  const bool a = err < 0.1;

  // (b) analytic identities.
  double worst = 0.0;
  SarimaFit ar;
  ar.spec = arima(1, 0, 0);
  ar.spec.include_mean = false;
  ar.ar = {0.5};
  const auto f = sarima_forecast(ar, {0.3, -1.0, 2.0}, 6);
  for (std::size_t h = 0; h < 6; ++h)
    worst = std::max(worst, std::abs(f[h] - 2.0 * std::pow(0.5, static_cast<double>(h + 1))));
  SarimaFit ma;
  ma.spec = arima(0, 0, 1);
  ma.ma = {0.6};
  ma.mean = 4.0;
  auto xs = white(50, 3);
  for (auto& v : xs) v += 4.0;
  double e = 0.0;
  for (double v : xs) e = (v - 4.0) - 0.6 * e;
  const auto g = sarima_forecast(ma, xs, 5);
  worst = std::max(worst, std::abs(g[0] - (4.0 + 0.6 * e)));
  for (std::size_t h = 1; h < 5; ++h) worst = std::max(worst, std::abs(g[h] - 4.0));
  std::vector<double> ramp(40);
  for (std::size_t t = 0; t < ramp.size(); ++t) ramp[t] = 5.0 + 0.75 * static_cast<double>(t);
  const auto rf = sarima_forecast(sarima_fit(ramp, arima(0, 1, 0)), ramp, 8);
  for (std::size_t h = 0; h < 8; ++h)
    worst = std::max(worst, std::abs(rf[h] - (5.0 + 0.75 * static_cast<double>(40 + h))));
  const bool b = worst < 1e-6;

  // (c) order class on 10 white-noise and 10 noisy-ramp series.
  int wn_right = 0, ramp_right = 0;
  const std::vector<SarimaSpec> wn_grid = {arima(0, 0, 0), arima(2, 0, 2)};
  const std::vector<SarimaSpec> ramp_grid = {arima(0, 0, 0), arima(0, 1, 0)};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    wn_right += sarima_select(white(150, 100 + seed), wn_grid) == arima(0, 0, 0);
    auto y = white(150, 500 + seed);
    for (std::size_t t = 0; t < y.size(); ++t) y[t] += 0.5 * static_cast<double>(t);
    ramp_right += sarima_select(y, ramp_grid).d == 1;
  }
  const int right = wn_right + ramp_right;
  const bool c = right >= 16;
  const double secs = since(start);
  return {a && b && c && secs < 60.0,
          fmt::format("(a) mean |phi err| {:.4f}; (b) max err {:.1e}; (c) {}/20 correct (white noise {}/10, ramps {}/10); {:.1f}s",
                      err, worst, right, wn_right, ramp_right, secs)};
}

Outcome lstm_gradient() {
  const auto start = Clock::now();
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> in(1, 4), hid(1, 5), win(1, 6), ns(1, 12);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const auto input = static_cast<std::size_t>(in(rng));
    const auto hidden = static_cast<std::size_t>(hid(rng));
    const auto window = static_cast<std::size_t>(win(rng));
    std::vector<LstmSample> samples(static_cast<std::size_t>(ns(rng)));
    for (auto& s : samples) {
      for (std::size_t w = 0; w < window; ++w) {
        Vector x(static_cast<Eigen::Index>(input));
        for (auto& v : x) v = nd(rng);
        s.inputs.push_back(x);
      }
      s.target = nd(rng);
    }
    LstmNetwork net(input, hidden);
    Vector p(static_cast<Eigen::Index>(net.n_params()));
    for (auto& v : p) v = 0.5 * nd(rng);
    net.set_params(p);
    Vector grad;
    net.loss(samples, &grad);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      Vector q = p;
      q[i] = p[i] + h;
      net.set_params(q);
      const double up = net.loss(samples);
      q[i] = p[i] - h;
      net.set_params(q);
      const double fd = (up - net.loss(samples)) / (2.0 * h);
      const double denom = std::max(1e-6, std::abs(fd) + std::abs(grad[i]));
      worst = std::max(worst, std::abs(fd - grad[i]) / denom);
    }
  }
  const double secs = since(start);
  return {worst < 1e-4 && secs < 60.0,
          fmt::format("max relative error {:.2e} over 50 configurations, {:.1f}s", worst, secs)};
}

Outcome end_to_end_similarity() {
  int close = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto& row = demand_report(seed).rows[0];
    if (!row.error.empty()) return {false, fmt::format("seed {} two-step failed: {}", seed, row.error)};
    const auto data = demand_data(seed);
    PipelineConfig pc = row.config;
    pc.lambda3 = 1.0;
    const double e2e = rmse_of(run_end_to_end(data.tensor, store_groups(data), pc).forecasts);
    const double rel = std::abs(e2e - row.rmse) / row.rmse;
    close += rel <= 0.10;
    per_seed += fmt::format(" {:.1f}%", 100.0 * rel);
  }
  return {close >= 8, fmt::format("within 10% on {}/10 seeds; relative gaps{}", close, per_seed)};
}

Outcome contextual_identity() {
  SynthConfig c;
  c.n_stores = 12;
  c.n_products = 15;
  c.n_weeks = 40;
  c.true_rank = 2;
  c.n_store_groups = 4;
  c.density = 0.3;
  c.seed = 9;
  auto d = generate(c);
  ContextFeatures f;
  f.names = {"price", "promo", "display"};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& cell : d.tensor.cells) {
    const double price = 1.0 + u(rng), promo = u(rng) < 0.3 ? 1.0 : 0.0, display = u(rng);
    f.set(cell.i, cell.j, cell.t, {price, promo, display});
    cell.y = 3.0 - 0.8 * price + 1.5 * promo + 0.4 * display;
  }
  PipelineConfig pc;
  pc.hp.k = 2;
  pc.hp.lambda2 = 0.1;
  pc.forecast.season = 1;
  pc.forecast.grid = {arima(0, 0, 0), arima(1, 0, 0)};
  const auto r = run_atlas(d.tensor, store_groups(d), pc, &f);
  const double test = rmse_of(r.forecasts);

  const auto split = chronological_split(d.tensor, r.split);
  const auto model = fit_context(split.train, f);
  const auto res = residualize(split.train, model, f);
  double worst = 0.0;
  for (std::size_t n = 0; n < res.cells.size(); ++n) {
    const auto& cell = res.cells[n];
    worst = std::max(worst, std::abs(recompose(cell.y, model, f, cell.i, cell.j, cell.t) -
                                     split.train.cells[n].y));
  }
  return {test < 1e-6 && worst < 1e-10 && !r.forecasts.empty(),
          fmt::format("test RMSE {:.2e}, round-trip error {:.2e} on {} train cells", test, worst,
                      res.cells.size())};
}

Outcome protocol_conformance() {
  SynthConfig c;
  c.n_stores = 20;
  c.n_products = 25;
  c.n_weeks = 208;
  c.true_rank = 3;
  c.n_store_groups = 5;
  c.density = 0.1;
  c.seed = 12;
  const auto d = generate(c);
  PipelineConfig pc;
  pc.hp.k = 3;
  pc.split = SplitSpec{192, 200, 208};
  pc.horizon = 8;
  const auto r = run_atlas(d.tensor, store_groups(d), pc);
  std::size_t outside = 0;
  for (const auto& f : r.forecasts) outside += f.t < 200 || f.t >= 208;
  const auto& l = r.leakage;
  return {outside == 0 && !r.forecasts.empty() && l.clean() && l.factor_fit_cells > 0,
          fmt::format("{} forecasts, {} outside weeks 200-207; leakage factor {} standardizer {} "
                      "context {} forecaster {}",
                      r.forecasts.size(), outside, l.factor_fit, l.standardizer, l.context,
                      l.forecaster)};
}

SynthData scale_data(std::size_t stores, std::uint64_t seed) {
  SynthConfig c;
  c.n_stores = stores;
  c.n_products = 300;
  c.n_weeks = 208;
  c.n_store_groups = stores / 4;
  c.density = 0.05;
  c.noise_sigma = 0.1;
  c.noise_relative = true;
  c.seed = seed;
  return generate(c);
}

Outcome scale_smoke() {
  const auto start = Clock::now();
  const auto d = scale_data(200, 1);
  PipelineConfig pc;
  pc.hp.lambda1 = pc.hp.lambda1_star = 0.1;
  const auto r = run_atlas(d.tensor, store_groups(d), pc);
  const double secs = since(start);
  const double gb = peak_rss() / 1e9;

  // Median per-cycle time at fixed density, 100 vs 200 stores.
  auto per_cycle = [&](std::size_t stores) {
    const auto data = scale_data(stores, 2);
    const auto split = chronological_split(data.tensor, pc.split_for(data.tensor.n_weeks));
    Hyperparams hp = pc.hp;
    hp.tol = 0.0;
    hp.max_iters = 20;
    std::vector<double> runs;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = Clock::now();
      const auto m = fit(split.train, store_groups(data), hp);
      runs.push_back(since(t0) / static_cast<double>(m.iterations_run));
    }
    std::sort(runs.begin(), runs.end());
    return runs[1];
  };
  const double small = per_cycle(100), large = per_cycle(200);
  const double ratio = large / small;
  return {secs < 600.0 && gb < 4.0 && ratio < 2.5 && !r.forecasts.empty(),
          fmt::format("{} cells, {} cycles, {:.0f}s, peak RSS {:.2f} GB; per cycle {:.3f}s -> "
                      "{:.3f}s when doubling stores ({:.2f}x)",
                      d.tensor.cells.size(), r.model.iterations_run, secs, gb, small, large,
                      ratio)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  const std::vector<Criterion> criteria = {
      {1, "penalty equivalence", penalty_equivalence},
      {2, "exact recovery", exact_recovery},
      {3, "BCD monotonicity", bcd_monotonicity},
      {4, "demand-awareness benefit", demand_benefit},
      {5, "SARIMA correctness", sarima_correctness},
      {6, "LSTM gradient check", lstm_gradient},
      {7, "end-to-end vs two-step", end_to_end_similarity},
      {8, "contextual identity", contextual_identity},
      {9, "protocol conformance", protocol_conformance},
      {10, "scale smoke test", scale_smoke},
  };
  std::set<int> selected;
  for (int a = 1; a < argc; ++a) selected.insert(std::stoi(argv[a]));
  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    fmt::print("{} criterion {:>2} {}: {}\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
