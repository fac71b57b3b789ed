#include "atlas/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <type_traits>

#include "atlas/csv.hpp"
#include "atlas/error.hpp"

namespace atlas {

namespace {

using Index = Eigen::Index;

// Re-throws component errors with the pipeline stage prepended.
template <class F>
auto staged(const char* stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const ArgumentError& e) {
    throw ArgumentError(std::string(stage) + ": " + e.what());
  } catch (const SchemaError& e) {
    throw SchemaError(std::string(stage) + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(std::string(stage) + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string(stage) + ": " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text, ',')) {
    const auto v = csv::parse_double(item);
    if (!v || (std::is_integral_v<T> && (*v < 0 || std::floor(*v) != *v)))
      throw SchemaError("config key '" + key + "': bad list element '" + item + "'");
    out.push_back(static_cast<T>(*v));
  }
  if (out.empty()) throw SchemaError("config key '" + key + "': empty list");
  return out;
}

template <class T>
std::string join(const std::vector<T>& v, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    if constexpr (std::is_floating_point_v<T>)
      out += csv::format_exact(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

std::size_t count_beyond(const SalesTensor& t, std::size_t train_end) {
  return static_cast<std::size_t>(std::count_if(
      t.cells.begin(), t.cells.end(), [&](const Cell& c) { return c.t >= train_end; }));
}

struct Prepared {
  SplitSpec split;
  Split parts;
  SalesTensor train_fit;  // residualized and standardized training cells
  Standardizer standardizer;
  std::optional<ContextModel> context;
  LeakageCounters leakage;
  Hyperparams hp;
  ForecastOptions forecast;
};

Prepared prepare(const SalesTensor& tensor, const PipelineConfig& config,
                 const ContextFeatures* context) {
  config.validate();
  Prepared p;
  p.split = config.split_for(tensor.n_weeks);
  p.parts = staged("split", [&] { return chronological_split(tensor, p.split); });
  if (p.parts.train.cells.empty()) throw ArgumentError("split: training window has no cells");
  SalesTensor train = p.parts.train;
  if (context) {
    p.context = staged("context", [&] { return fit_context(train, *context); });
    p.leakage.context = count_beyond(train, p.split.train_end);
    train = staged("context", [&] { return residualize(train, *p.context, *context); });
  }
  p.standardizer = fit_standardizer(train, config.standardize);
  p.leakage.standardizer = count_beyond(train, p.split.train_end);
  p.train_fit = standardized(train, p.standardizer);
  p.leakage.factor_fit = count_beyond(p.train_fit, p.split.train_end);
  p.leakage.factor_fit_cells = p.train_fit.cells.size();
  p.hp = config.hp;
  p.forecast = config.forecast;
  p.forecast.lstm.window = config.window;
  return p;
}

double predict_cell(const FactorModel& model, const Matrix& W, const Prepared& p,
                    const ContextFeatures* context, std::uint32_t i, std::uint32_t j,
                    std::uint32_t t, bool* missing) {
  const double raw = model.P.row(i).dot(model.Q.row(j).cwiseProduct(W.row(t)));
  const double residual = p.standardizer.invert(raw);
  if (!context || !p.context) return residual;
  return recompose(residual, *p.context, *context, i, j, t, missing);
}

PipelineResult finish(const SalesTensor& tensor, const PipelineConfig& config, Prepared& p,
                      FactorModel model, const LatentForecaster& forecaster,
                      const ContextFeatures* context) {
  PipelineResult r;
  r.split = p.split;
  r.leakage = p.leakage;
  r.context = p.context;
  const std::size_t steps = p.split.test_end - p.split.train_end;
  r.W_extended = staged("forecast", [&] { return forecaster.extend(model.W, steps); });
  r.sarima_fits = forecaster.sarima_fits();
  r.fallback_dimensions = forecaster.fallback_dimensions();
  model.standardizer = p.standardizer;

  std::size_t missing_count = 0;
  auto emit = [&](const Cell& c, bool observed) {
    ForecastCell f{c.i, c.j, c.t};
    f.y_hat = predict_cell(model, r.W_extended, p, context, c.i, c.j, c.t, &f.context_missing);
    if (observed) f.y_true = c.y;
    missing_count += f.context_missing;
    return f;
  };
  for (const auto& c : p.parts.valid.cells) r.validation.push_back(emit(c, true));
  if (config.full_grid) {
    std::map<std::uint64_t, double> observed;
    for (const auto& c : p.parts.test.cells)
      observed[(static_cast<std::uint64_t>(c.i) * tensor.n_products + c.j) * tensor.n_weeks + c.t] =
          c.y;
    for (std::uint32_t i = 0; i < tensor.n_stores; ++i)
      for (std::uint32_t j = 0; j < tensor.n_products; ++j)
        for (auto t = static_cast<std::uint32_t>(p.split.valid_end); t < p.split.test_end; ++t) {
          const auto it =
              observed.find((static_cast<std::uint64_t>(i) * tensor.n_products + j) * tensor.n_weeks + t);
          Cell c{i, j, t, it == observed.end() ? 0.0 : it->second};
          r.forecasts.push_back(emit(c, it != observed.end()));
        }
  } else {
    for (const auto& c : p.parts.test.cells) r.forecasts.push_back(emit(c, true));
  }
  if (missing_count)
    spdlog::warn("{} forecast cell(s) lack context features; their context part is omitted",
                 missing_count);
  r.model = std::move(model);
  return r;
}

// Alternates the factor blocks with forecaster refits on W; the forecaster's
// one-step predictions from the previous cycle are the frozen coupling targets.
FactorModel joint_fit(const Prepared& p, const GroupStructure& groups, const PipelineConfig& config,
                      LatentForecaster& forecaster) {
  const auto T = p.train_fit.n_weeks;
  if (config.window >= T)
    throw ArgumentError("window " + std::to_string(config.window) +
                        " leaves no coupled weeks in a " + std::to_string(T) + "-week training set");
  return staged("fit", [&] {
    FactorizationSolver solver(p.train_fit, groups, p.hp);
    auto& m = solver.model();
    double previous = solver.loss();
    if (!std::isfinite(previous)) throw NumericError("non-finite loss at initialization");
    m.loss_trace.assign(1, previous);
    for (std::size_t u = 1; u <= p.hp.max_iters; ++u) {
      solver.update_store_groups(u);
      solver.update_product_groups(u);
      solver.update_time(u);
      if (config.lambda3 > 0.0) {
        forecaster.fit(m.W);
        TimeCoupling coupling;
        coupling.weight = config.lambda3;
        coupling.targets = forecaster.one_step(m.W, config.window);
        coupling.active.assign(T, false);
        for (std::size_t t = config.window; t < T; ++t) coupling.active[t] = true;
        solver.set_time_coupling(std::move(coupling));
      }
      const double current = solver.loss();
      if (!std::isfinite(current))
        throw NumericError("non-finite loss at iteration " + std::to_string(u));
      m.loss_trace.push_back(current);
      m.iterations_run = u;
      m.final_loss = current;
      // L_0 has no coupling term, so the first coupled cycle is not comparable.
      const bool comparable = config.lambda3 == 0.0 || u > 1;
      const double j = previous > 0.0 ? 1.0 - current / previous : 0.0;
      if (comparable && j <= p.hp.tol) {
        m.converged = true;
        break;
      }
      previous = current;
    }
    return m;
  });
}

}  // namespace

void PipelineConfig::validate() const {
  if (horizon == 0) throw ArgumentError("horizon must be >= 1");
  if (hp.k == 0) throw ArgumentError("k must be >= 1");
  if (hp.lambda1 < 0 || hp.lambda1_star < 0 || hp.lambda2 < 0)
    throw ArgumentError("lambda1, lambda1_star and lambda2 must be >= 0");
  if (!(lambda3 >= 0.0)) throw ArgumentError("lambda3 must be >= 0");
  if (window == 0) throw ArgumentError("window must be >= 1");
  if (split && split->test_end - split->valid_end != horizon)
    throw ArgumentError("split test window (" + std::to_string(split->test_end - split->valid_end) +
                        " weeks) does not match horizon " + std::to_string(horizon));
}

SplitSpec PipelineConfig::split_for(std::size_t n_weeks) const {
  const SplitSpec s = split ? *split : default_split(n_weeks, horizon);
  s.validate(n_weeks);
  return s;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "k", "lambda1", "lambda1_star", "lambda2", "lambda3", "window", "max_iters", "tol", "seed",
      "forecaster", "season", "sarima_grid", "lstm_hidden", "lstm_epochs", "lstm_lr",
      "lstm_clip", "lstm_shared", "horizon", "split", "standardize", "full_grid", "tune_k",
      "tune_lambda1", "tune_lambda2", "tune_full", "eigen_floor", "direct_solve_limit"};
  return keys;
}

PipelineConfig config_from_map(const kv::Map& values, PipelineConfig c) {
  const auto& known = config_keys();
  for (const auto& [key, value] : values)
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw SchemaError("unknown config key '" + key + "'");
  using namespace kv;
  c.hp.k = get_count(values, "k", c.hp.k);
  c.hp.lambda1 = get_double(values, "lambda1", c.hp.lambda1);
  c.hp.lambda1_star = get_double(values, "lambda1_star", c.hp.lambda1_star);
  c.hp.lambda2 = get_double(values, "lambda2", c.hp.lambda2);
  c.lambda3 = get_double(values, "lambda3", c.lambda3);
  c.window = get_count(values, "window", c.window);
  c.hp.max_iters = get_count(values, "max_iters", c.hp.max_iters);
  c.hp.tol = get_double(values, "tol", c.hp.tol);
  c.hp.seed = get_u64(values, "seed", c.hp.seed);
  c.forecast.seed = c.hp.seed;
  c.hp.eigen_floor = get_double(values, "eigen_floor", c.hp.eigen_floor);
  c.hp.direct_solve_limit = get_count(values, "direct_solve_limit", c.hp.direct_solve_limit);
  if (values.count("forecaster"))
    c.forecast.method = parse_forecast_method(values.at("forecaster"));
  c.forecast.season = get_count(values, "season", c.forecast.season);
  if (values.count("sarima_grid")) {
    c.forecast.grid.clear();
    const auto& g = values.at("sarima_grid");
    if (g != "default")
      for (const auto& item : split_list(g, ';')) c.forecast.grid.push_back(parse_sarima_spec(item));
  }
  c.forecast.lstm.hidden = get_count(values, "lstm_hidden", c.forecast.lstm.hidden);
  c.forecast.lstm.epochs = get_count(values, "lstm_epochs", c.forecast.lstm.epochs);
  c.forecast.lstm.learning_rate = get_double(values, "lstm_lr", c.forecast.lstm.learning_rate);
  c.forecast.lstm.clip_norm = get_double(values, "lstm_clip", c.forecast.lstm.clip_norm);
  c.forecast.lstm.shared = get_bool(values, "lstm_shared", c.forecast.lstm.shared);
  c.horizon = get_count(values, "horizon", c.horizon);
  if (values.count("split")) {
    const auto& s = values.at("split");
    if (s == "auto") {
      c.split.reset();
    } else {
      const auto v = parse_list<std::size_t>("split", s);
      if (v.size() != 3) throw SchemaError("config key 'split': expected train_end,valid_end,test_end");
      c.split = SplitSpec{v[0], v[1], v[2]};
    }
  }
  if (values.count("standardize")) c.standardize = parse_standardize_mode(values.at("standardize"));
  c.full_grid = get_bool(values, "full_grid", c.full_grid);
  if (values.count("tune_k")) c.grid.k = parse_list<std::size_t>("tune_k", values.at("tune_k"));
  if (values.count("tune_lambda1"))
    c.grid.lambda1 = parse_list<double>("tune_lambda1", values.at("tune_lambda1"));
  if (values.count("tune_lambda2"))
    c.grid.lambda2 = parse_list<double>("tune_lambda2", values.at("tune_lambda2"));
  c.grid.full = get_bool(values, "tune_full", c.grid.full);
  c.validate();
  return c;
}

kv::Map config_to_map(const PipelineConfig& c) {
  kv::Map m;
  m["k"] = std::to_string(c.hp.k);
  m["lambda1"] = csv::format_exact(c.hp.lambda1);
  m["lambda1_star"] = csv::format_exact(c.hp.lambda1_star);
  m["lambda2"] = csv::format_exact(c.hp.lambda2);
  m["lambda3"] = csv::format_exact(c.lambda3);
  m["window"] = std::to_string(c.window);
  m["max_iters"] = std::to_string(c.hp.max_iters);
  m["tol"] = csv::format_exact(c.hp.tol);
  m["seed"] = std::to_string(c.hp.seed);
  m["eigen_floor"] = csv::format_exact(c.hp.eigen_floor);
  m["direct_solve_limit"] = std::to_string(c.hp.direct_solve_limit);
  m["forecaster"] = to_string(c.forecast.method);
  m["season"] = std::to_string(c.forecast.season);
  if (c.forecast.grid.empty()) {
    m["sarima_grid"] = "default";
  } else {
    std::string g;
    for (const auto& s : c.forecast.grid) g += (g.empty() ? "" : ";") + s.to_string();
    m["sarima_grid"] = g;
  }
  m["lstm_hidden"] = std::to_string(c.forecast.lstm.hidden);
  m["lstm_epochs"] = std::to_string(c.forecast.lstm.epochs);
  m["lstm_lr"] = csv::format_exact(c.forecast.lstm.learning_rate);
  m["lstm_clip"] = csv::format_exact(c.forecast.lstm.clip_norm);
  m["lstm_shared"] = c.forecast.lstm.shared ? "true" : "false";
  m["horizon"] = std::to_string(c.horizon);
  m["split"] = c.split ? join(std::vector<std::size_t>{c.split->train_end, c.split->valid_end,
                                                       c.split->test_end})
                       : "auto";
  m["standardize"] = to_string(c.standardize);
  m["full_grid"] = c.full_grid ? "true" : "false";
  m["tune_k"] = join(c.grid.k);
  m["tune_lambda1"] = join(c.grid.lambda1);
  m["tune_lambda2"] = join(c.grid.lambda2);
  m["tune_full"] = c.grid.full ? "true" : "false";
  return m;
}

std::string config_digest(const PipelineConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : config_to_map(config))
    for (char ch : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ULL;
    }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PipelineResult run_atlas(const SalesTensor& tensor, const GroupStructure& groups,
                         const PipelineConfig& config, const ContextFeatures* context) {
  const auto start = std::chrono::steady_clock::now();
  Prepared p = prepare(tensor, config, context);
  FactorModel model = staged("fit", [&] { return fit(p.train_fit, groups, p.hp); });
  LatentForecaster forecaster(p.forecast);
  staged("forecast", [&] { forecaster.fit(model.W); });
  auto r = finish(tensor, config, p, std::move(model), forecaster, context);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

PipelineResult run_forecast(const SalesTensor& tensor, const FactorModel& model,
                            const PipelineConfig& config, const ContextFeatures* context) {
  const auto start = std::chrono::steady_clock::now();
  Prepared p = prepare(tensor, config, context);
  if (static_cast<std::size_t>(model.W.rows()) != p.split.train_end ||
      static_cast<std::size_t>(model.P.rows()) != tensor.n_stores ||
      static_cast<std::size_t>(model.Q.rows()) != tensor.n_products)
    throw ArgumentError("model shape (" + std::to_string(model.P.rows()) + " stores, " +
                        std::to_string(model.Q.rows()) + " products, " +
                        std::to_string(model.W.rows()) + " weeks) does not match the data and split (" +
                        std::to_string(tensor.n_stores) + ", " + std::to_string(tensor.n_products) +
                        ", train_end " + std::to_string(p.split.train_end) + ")");
  LatentForecaster forecaster(p.forecast);
  staged("forecast", [&] { forecaster.fit(model.W); });
  auto r = finish(tensor, config, p, model, forecaster, context);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

PipelineResult run_end_to_end(const SalesTensor& tensor, const GroupStructure& groups,
                              const PipelineConfig& config, const ContextFeatures* context) {
  const auto start = std::chrono::steady_clock::now();
  Prepared p = prepare(tensor, config, context);
  LatentForecaster forecaster(p.forecast);
  FactorModel model = joint_fit(p, groups, config, forecaster);
  staged("forecast", [&] { forecaster.fit(model.W); });
  auto r = finish(tensor, config, p, std::move(model), forecaster, context);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

FittedModel fit_model(const SalesTensor& tensor, const GroupStructure& groups,
                      const PipelineConfig& config, const ContextFeatures* context) {
  Prepared p = prepare(tensor, config, context);
  FittedModel out;
  if (config.lambda3 > 0.0) {
    LatentForecaster forecaster(p.forecast);
    out.model = joint_fit(p, groups, config, forecaster);
  } else {
    out.model = staged("fit", [&] { return fit(p.train_fit, groups, p.hp); });
  }
  out.model.standardizer = p.standardizer;
  out.split = p.split;
  out.leakage = p.leakage;
  out.context = p.context;
  return out;
}

double rmse_of(const std::vector<ForecastCell>& cells) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : cells)
    if (!std::isnan(c.y_true)) {
      sum += (c.y_true - c.y_hat) * (c.y_true - c.y_hat);
      ++n;
    }
  if (n == 0) throw ArgumentError("rmse: no observed cells");
  return std::sqrt(sum / static_cast<double>(n));
}

TuneResult tune(const SalesTensor& tensor, const GroupStructure& groups,
                const PipelineConfig& config, const ContextFeatures* context) {
  const auto& g = config.grid;
  if (g.k.empty() || g.lambda1.empty() || g.lambda2.empty())
    throw ArgumentError("tune: every grid axis needs at least one value");
  {
    const auto split = config.split_for(tensor.n_weeks);
    const auto parts = chronological_split(tensor, split);
    if (parts.valid.cells.empty()) throw ArgumentError("tune: validation window has no cells");
  }

  using Point = std::array<std::size_t, 3>;
  std::map<Point, std::size_t> seen;  // grid point -> leaderboard index
  std::vector<LeaderboardRow> rows;
  std::optional<PipelineResult> best_result;
  std::optional<Point> best;

  auto better = [&](const LeaderboardRow& a, const LeaderboardRow& b) {
    if (a.valid_rmse != b.valid_rmse) return a.valid_rmse < b.valid_rmse;
    if (a.k != b.k) return a.k < b.k;
    if (a.lambda1 != b.lambda1) return a.lambda1 < b.lambda1;
    return a.lambda2 < b.lambda2;
  };
  auto config_at = [&](const Point& pt) {
    PipelineConfig c = config;
    c.hp.k = g.k[pt[0]];
    c.hp.lambda1 = c.hp.lambda1_star = g.lambda1[pt[1]];
    c.hp.lambda2 = g.lambda2[pt[2]];
    return c;
  };
  auto evaluate = [&](const Point& pt) -> const LeaderboardRow& {
    if (auto it = seen.find(pt); it != seen.end()) return rows[it->second];
    LeaderboardRow row;
    row.k = g.k[pt[0]];
    row.lambda1 = g.lambda1[pt[1]];
    row.lambda2 = g.lambda2[pt[2]];
    try {
      const auto c = config_at(pt);
      auto r = c.lambda3 > 0.0 ? run_end_to_end(tensor, groups, c, context)
                               : run_atlas(tensor, groups, c, context);
      row.valid_rmse = rmse_of(r.validation);
      if (!std::isfinite(row.valid_rmse)) throw NumericError("non-finite validation RMSE");
      if (!best || better(row, rows[seen.at(*best)])) {
        best = pt;
        best_result = std::move(r);
      }
    } catch (const std::exception& e) {
      row.valid_rmse = std::numeric_limits<double>::infinity();
      row.error = e.what();
      spdlog::warn("tune: k={} lambda1={} lambda2={} failed: {}", row.k, row.lambda1, row.lambda2,
                   row.error);
    }
    seen[pt] = rows.size();
    rows.push_back(row);
    spdlog::debug("tune: k={} lambda1={} lambda2={} valid_rmse={}", row.k, row.lambda1,
                  row.lambda2, row.valid_rmse);
    return rows.back();
  };

  if (g.full) {
    for (std::size_t a = 0; a < g.k.size(); ++a)
      for (std::size_t b = 0; b < g.lambda1.size(); ++b)
        for (std::size_t c = 0; c < g.lambda2.size(); ++c) evaluate({a, b, c});
  } else {
    // Coordinate-wise descent from the first grid value on every axis.
    Point current{0, 0, 0};
    evaluate(current);
    const std::size_t sizes[3] = {g.k.size(), g.lambda1.size(), g.lambda2.size()};
    for (int pass = 0; pass < 5; ++pass) {
      bool moved = false;
      for (std::size_t axis = 0; axis < 3; ++axis) {
        Point local = current;
        for (std::size_t v = 0; v < sizes[axis]; ++v) {
          Point pt = current;
          pt[axis] = v;
          const auto& row = evaluate(pt);
          if (better(row, rows[seen.at(local)])) local = pt;
        }
        if (local != current) {
          current = local;
          moved = true;
        }
      }
      if (!moved) break;
    }
  }

  std::stable_sort(rows.begin(), rows.end(), [](const LeaderboardRow& a, const LeaderboardRow& b) {
    return a.valid_rmse < b.valid_rmse;
  });
  if (!best) {
    std::string msg = "tune: every configuration failed:";
    for (const auto& r : rows)
      msg += "\n  k=" + std::to_string(r.k) + " lambda1=" + csv::format_exact(r.lambda1) +
             " lambda2=" + csv::format_exact(r.lambda2) + ": " + r.error;
    throw NumericError(msg);
  }
  return {config_at(*best), std::move(rows), std::move(*best_result)};
}

void write_forecasts(const std::filesystem::path& path, const std::vector<ForecastCell>& cells,
                     const SalesTensor& tensor) {
  const bool truth = std::any_of(cells.begin(), cells.end(),
                                 [](const ForecastCell& c) { return !std::isnan(c.y_true); });
  auto out = csv::open_output(path);
  out << "store_id,product_id,week,y_hat" << (truth ? ",y_true" : "") << '\n';
  for (const auto& c : cells) {
    out << tensor.store_ids.at(c.i) << ',' << tensor.product_ids.at(c.j) << ','
        << tensor.week_origin + static_cast<long long>(c.t) << ',' << csv::format_exact(c.y_hat);
    if (truth) {
      out << ',';
      if (!std::isnan(c.y_true)) out << csv::format_exact(c.y_true);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_leaderboard(const std::filesystem::path& path, const std::vector<LeaderboardRow>& rows) {
  auto out = csv::open_output(path);
  out << "rank,k,lambda1,lambda2,valid_rmse,error\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string err = rows[r].error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << r + 1 << ',' << rows[r].k << ',' << csv::format_exact(rows[r].lambda1) << ','
        << csv::format_exact(rows[r].lambda2) << ',' << csv::format_exact(rows[r].valid_rmse) << ','
        << err << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace atlas
