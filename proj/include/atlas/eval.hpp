#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "atlas/pipeline.hpp"

namespace atlas {

/// (y, y_hat) pairs. Both metrics throw ArgumentError on empty input.
using Pairs = std::vector<std::pair<double, double>>;
double rmse(const Pairs& pairs);
double mae(const Pairs& pairs);

/// Observed cells of a forecast list as (y_true, y_hat) pairs.
Pairs observed_pairs(const std::vector<ForecastCell>& cells);

enum class Method { atlas_sarima, atlas_lstm, cpd_sarima, cpd_lstm, per_series_sarima, freeze_w };

Method parse_method(const std::string& name);
std::string to_string(Method m);
std::vector<Method> all_methods();
/// Comma-separated names; "all" expands to every method.
std::vector<Method> parse_method_list(const std::string& text);

struct EvalRow {
  std::string method;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double mae = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  std::size_t iterations = 0;
  std::size_t cells = 0;
  std::string config_digest;
  std::string cells_hash;  // FNV-1a of the sorted (i, j, t) test cells
  std::string error;       // non-empty when the method failed
  PipelineConfig config;   // as run (tuned, when tuning was requested)
  std::vector<ForecastCell> forecasts;
};

struct EvalReport {
  std::string dataset;
  SplitSpec split;
  std::uint64_t seed = 0;
  std::string refit = "train";  // tuned models are refit on the training weeks only
  std::vector<EvalRow> rows;
};

struct CompareOptions {
  bool tune = false;  // tune factor methods on validation; CPD searches lambda1 = 0 only
  std::size_t per_series_min_obs = 30;  // fewer training observations: train mean
};

/// Scores every method on the same test cells. A failing method records its
/// error and the others still run.
EvalReport compare(const SalesTensor& tensor, const GroupStructure& groups,
                   const std::vector<Method>& methods, const PipelineConfig& config,
                   const CompareOptions& options = {});

/// Per-(store, product) SARIMA on the raw training series; pairs with fewer
/// than `min_obs` training observations are forecast by their train mean.
std::vector<ForecastCell> per_series_sarima(const SalesTensor& tensor, const PipelineConfig& config,
                                            std::size_t min_obs = 30);

std::string cells_hash(const std::vector<ForecastCell>& cells);

void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
std::string format_report(const EvalReport& report);
/// Whitespace-separated columns for external plotting.
void write_gnuplot_data(const std::filesystem::path& path, const EvalReport& report);

}  // namespace atlas
