#include "atlas/eval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "atlas/csv.hpp"
#include "atlas/error.hpp"
#include "atlas/parallel.hpp"

namespace atlas {

namespace {

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool is_cpd(Method m) { return m == Method::cpd_sarima || m == Method::cpd_lstm; }

PipelineConfig variant(const PipelineConfig& base, Method m) {
  PipelineConfig c = base;
  switch (m) {
    case Method::atlas_lstm:
    case Method::cpd_lstm:
      c.forecast.method = ForecastMethod::lstm;
      break;
    case Method::freeze_w:
      c.forecast.method = ForecastMethod::last_value;
      break;
    default:
      c.forecast.method = ForecastMethod::sarima;
  }
  if (is_cpd(m)) {
    c.hp.lambda1 = c.hp.lambda1_star = 0.0;
    c.grid.lambda1 = {0.0};
  }
  return c;
}

std::string describe(const SalesTensor& t) {
  std::ostringstream out;
  out << t.n_stores << "x" << t.n_products << "x" << t.n_weeks << " cells=" << t.cells.size()
      << " density=" << csv::format_fixed(t.density(), 4);
  return out.str();
}

}  // namespace

double rmse(const Pairs& pairs) {
  if (pairs.empty()) throw ArgumentError("rmse: no pairs");
  double sum = 0.0;
  for (const auto& [y, f] : pairs) sum += (y - f) * (y - f);
  return std::sqrt(sum / static_cast<double>(pairs.size()));
}

double mae(const Pairs& pairs) {
  if (pairs.empty()) throw ArgumentError("mae: no pairs");
  double sum = 0.0;
  for (const auto& [y, f] : pairs) sum += std::abs(y - f);
  return sum / static_cast<double>(pairs.size());
}

Pairs observed_pairs(const std::vector<ForecastCell>& cells) {
  Pairs out;
  out.reserve(cells.size());
  for (const auto& c : cells)
    if (!std::isnan(c.y_true)) out.emplace_back(c.y_true, c.y_hat);
  return out;
}

Method parse_method(const std::string& name) {
  for (auto m : all_methods())
    if (to_string(m) == name) return m;
  throw ArgumentError("unknown method '" + name +
                      "' (expected atlas_sarima, atlas_lstm, cpd_sarima, cpd_lstm, "
                      "per_series_sarima or freeze_w)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::atlas_sarima: return "atlas_sarima";
    case Method::atlas_lstm: return "atlas_lstm";
    case Method::cpd_sarima: return "cpd_sarima";
    case Method::cpd_lstm: return "cpd_lstm";
    case Method::per_series_sarima: return "per_series_sarima";
    case Method::freeze_w: return "freeze_w";
  }
  return "unknown";
}

std::vector<Method> all_methods() {
  return {Method::atlas_sarima, Method::atlas_lstm,        Method::cpd_sarima,
          Method::cpd_lstm,     Method::per_series_sarima, Method::freeze_w};
}

std::vector<Method> parse_method_list(const std::string& text) {
  if (text == "all") return all_methods();
  std::vector<Method> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(parse_method(item));
  if (out.empty()) throw ArgumentError("empty method list");
  return out;
}

std::string cells_hash(const std::vector<ForecastCell>& cells) {
  std::vector<std::array<std::uint32_t, 3>> keys;
  keys.reserve(cells.size());
  for (const auto& c : cells) keys.push_back({c.i, c.j, c.t});
  std::sort(keys.begin(), keys.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& k : keys)
    for (std::uint32_t v : k)
      for (int b = 0; b < 4; ++b) {
        h ^= (v >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ULL;
      }
  return hex64(h);
}

std::vector<ForecastCell> per_series_sarima(const SalesTensor& tensor, const PipelineConfig& config,
                                            std::size_t min_obs) {
  config.validate();
  const auto split = config.split_for(tensor.n_weeks);
  const auto parts = chronological_split(tensor, split);
  if (parts.train.cells.empty()) throw ArgumentError("per_series_sarima: empty training window");

  // Requested cells grouped by pair, mirroring the factor pipeline's requests.
  std::vector<Cell> requests = parts.test.cells;
  if (config.full_grid) {
    requests.clear();
    std::map<std::uint64_t, double> observed;
    for (const auto& c : parts.test.cells)
      observed[(static_cast<std::uint64_t>(c.i) * tensor.n_products + c.j) * tensor.n_weeks + c.t] = c.y;
    for (std::uint32_t i = 0; i < tensor.n_stores; ++i)
      for (std::uint32_t j = 0; j < tensor.n_products; ++j)
        for (auto t = static_cast<std::uint32_t>(split.valid_end); t < split.test_end; ++t) {
          const auto it = observed.find((static_cast<std::uint64_t>(i) * tensor.n_products + j) *
                                            tensor.n_weeks + t);
          requests.push_back({i, j, t, it == observed.end() ? std::nan("") : it->second});
        }
  }
  std::map<std::uint64_t, std::vector<std::size_t>> by_pair;
  for (std::size_t r = 0; r < requests.size(); ++r)
    by_pair[static_cast<std::uint64_t>(requests[r].i) * tensor.n_products + requests[r].j].push_back(r);
  std::map<std::uint64_t, std::vector<std::pair<std::uint32_t, double>>> history;
  double global = 0.0;
  for (const auto& c : parts.train.cells) {
    global += c.y;
    const auto key = static_cast<std::uint64_t>(c.i) * tensor.n_products + c.j;
    if (by_pair.count(key)) history[key].emplace_back(c.t, c.y);
  }
  global /= static_cast<double>(parts.train.cells.size());

  const std::vector<SarimaSpec> grid =
      config.forecast.grid.empty() ? default_sarima_grid(config.forecast.season) : config.forecast.grid;
  const std::size_t steps = split.test_end - split.train_end;
  std::vector<std::uint64_t> pairs;
  for (const auto& [key, rows] : by_pair) pairs.push_back(key);
  std::vector<ForecastCell> out(requests.size());
  std::vector<std::size_t> failures(pairs.size(), 0);

  parallel_for(pairs.size(), [&](std::size_t n) {
    const auto found = history.find(pairs[n]);
    auto h = found == history.end() ? decltype(found->second){} : found->second;
    std::sort(h.begin(), h.end());
    double mean = global;
    if (!h.empty()) {
      mean = 0.0;
      for (const auto& [t, y] : h) mean += y;
      mean /= static_cast<double>(h.size());
    }
    std::vector<double> path(steps, mean);
    if (h.size() >= min_obs) {
      // Weekly series from the first observation, gaps carried forward.
      std::vector<double> series;
      std::size_t next = 0;
      double last = h.front().second;
      for (std::size_t t = h.front().first; t < split.train_end; ++t) {
        if (next < h.size() && h[next].first == t) last = h[next++].second;
        series.push_back(last);
      }
      try {
        const auto spec = sarima_select(series, grid);
        auto f = sarima_forecast(sarima_fit(series, spec), series, steps);
        if (std::all_of(f.begin(), f.end(), [](double v) { return std::isfinite(v); }))
          path = std::move(f);
        else
          failures[n] = 1;
      } catch (const std::exception&) {
        failures[n] = 1;
      }
    }
    for (std::size_t r : by_pair.at(pairs[n])) {
      const auto& c = requests[r];
      ForecastCell f{c.i, c.j, c.t};
      f.y_hat = path[c.t - split.train_end];
      f.y_true = c.y;
      out[r] = f;
    }
  });
  const auto failed = std::count(failures.begin(), failures.end(), 1);
  if (failed) spdlog::warn("per_series_sarima: {} series fell back to their train mean", failed);
  return out;
}

EvalReport compare(const SalesTensor& tensor, const GroupStructure& groups,
                   const std::vector<Method>& methods, const PipelineConfig& config,
                   const CompareOptions& options) {
  if (methods.empty()) throw ArgumentError("compare: no methods requested");
  config.validate();
  EvalReport report;
  report.dataset = describe(tensor);
  report.split = config.split_for(tensor.n_weeks);
  report.seed = config.hp.seed;

  for (Method m : methods) {
    EvalRow row;
    row.method = to_string(m);
    row.config = variant(config, m);
    const auto start = std::chrono::steady_clock::now();
    try {
      if (m == Method::per_series_sarima) {
        row.forecasts = per_series_sarima(tensor, row.config, options.per_series_min_obs);
      } else {
        PipelineResult r;
        if (options.tune) {
          auto t = tune(tensor, groups, row.config);
          row.config = t.best;
          r = std::move(t.result);
        } else {
          r = row.config.lambda3 > 0.0 ? run_end_to_end(tensor, groups, row.config)
                                       : run_atlas(tensor, groups, row.config);
        }
        row.iterations = r.model.iterations_run;
        row.forecasts = std::move(r.forecasts);
      }
      const auto pairs = observed_pairs(row.forecasts);
      row.rmse = rmse(pairs);
      row.mae = mae(pairs);
      row.cells = pairs.size();
    } catch (const std::exception& e) {
      row.error = e.what();
      spdlog::warn("compare: {} failed: {}", row.method, row.error);
    }
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    row.config_digest = config_digest(row.config);
    row.cells_hash = cells_hash(row.forecasts);
    report.rows.push_back(std::move(row));
  }

  const EvalRow* reference = nullptr;
  for (auto& row : report.rows) {
    if (!row.error.empty()) continue;
    if (!reference) {
      reference = &row;
    } else if (row.cells_hash != reference->cells_hash) {
      row.error = "test cells differ from " + reference->method;
      spdlog::error("compare: {}", row.error);
    }
  }
  return report;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  auto out = csv::open_output(path);
  out << "method,rmse,mae,seconds,iterations,cells,config_digest,cells_hash,dataset,split,seed,"
         "refit,error\n";
  const std::string split = std::to_string(report.split.train_end) + ";" +
                            std::to_string(report.split.valid_end) + ";" +
                            std::to_string(report.split.test_end);
  for (const auto& r : report.rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << r.method << ',' << (r.error.empty() ? csv::format_exact(r.rmse) : "") << ','
        << (r.error.empty() ? csv::format_exact(r.mae) : "") << ','
        << csv::format_fixed(r.seconds, 3) << ',' << r.iterations << ',' << r.cells << ','
        << r.config_digest << ',' << r.cells_hash << ',' << report.dataset << ',' << split << ','
        << report.seed << ',' << report.refit << ',' << err << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  out << "dataset " << report.dataset << "\nsplit train<" << report.split.train_end << " valid<"
      << report.split.valid_end << " test<" << report.split.test_end << "  seed " << report.seed
      << "  refit " << report.refit << "\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %12s %12s %9s %6s %7s\n", "method", "rmse", "mae",
                "seconds", "iters", "cells");
  out << line;
  for (const auto& r : report.rows) {
    if (r.error.empty())
      std::snprintf(line, sizeof line, "%-18s %12.6g %12.6g %9.2f %6zu %7zu\n", r.method.c_str(),
                    r.rmse, r.mae, r.seconds, r.iterations, r.cells);
    else
      std::snprintf(line, sizeof line, "%-18s FAILED: %.200s\n", r.method.c_str(), r.error.c_str());
    out << line;
  }
  return out.str();
}

void write_gnuplot_data(const std::filesystem::path& path, const EvalReport& report) {
  auto out = csv::open_output(path);
  out << "# dataset " << report.dataset << "\n# index method rmse mae seconds\n";
  for (std::size_t n = 0; n < report.rows.size(); ++n) {
    const auto& r = report.rows[n];
    if (!r.error.empty()) continue;
    out << n << ' ' << r.method << ' ' << csv::format_exact(r.rmse) << ' '
        << csv::format_exact(r.mae) << ' ' << csv::format_fixed(r.seconds, 3) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace atlas
