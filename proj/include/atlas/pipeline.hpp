#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "atlas/context.hpp"
#include "atlas/data_model.hpp"
#include "atlas/factorization.hpp"
#include "atlas/forecasters.hpp"
#include "atlas/keyvalue.hpp"

namespace atlas {

struct TuneGrid {
  std::vector<std::size_t> k = {8, 16, 32, 64};
  std::vector<double> lambda1 = {0.0, 0.1, 1.0, 10.0};  // lambda1* follows lambda1
  std::vector<double> lambda2 = {0.1, 1.0, 10.0};
  bool full = false;  // exhaustive instead of coordinate-wise greedy search
};

struct PipelineConfig {
  Hyperparams hp;  // k, lambda1, lambda1*, lambda2, max_iters, tol, seed
  double lambda3 = 0.0;
  std::size_t window = 8;  // lag Delta0 of the end-to-end term and LSTM window
  ForecastOptions forecast;
  std::size_t horizon = 8;
  std::optional<SplitSpec> split;  // default_split(T, horizon) when absent
  StandardizeMode standardize = StandardizeMode::none;
  bool full_grid = false;  // forecast every (store, product) pair, not only observed test cells
  TuneGrid grid;

  void validate() const;
  /// The split in effect for a tensor of T weeks.
  SplitSpec split_for(std::size_t n_weeks) const;
};

/// Every key config_from_map accepts.
const std::vector<std::string>& config_keys();

/// Reads the documented key=value list; absent keys keep their defaults and
/// unknown keys raise SchemaError.
PipelineConfig config_from_map(const kv::Map& values, PipelineConfig base = {});
kv::Map config_to_map(const PipelineConfig& config);
/// Stable 64-bit FNV-1a digest of config_to_map, as 16 hex digits.
std::string config_digest(const PipelineConfig& config);

struct ForecastCell {
  std::uint32_t i = 0, j = 0, t = 0;
  double y_hat = 0.0;
  double y_true = std::numeric_limits<double>::quiet_NaN();  // NaN when unobserved
  bool context_missing = false;
};

/// Cells with t >= train_end seen by each fitting stage; all must stay zero.
struct LeakageCounters {
  std::size_t factor_fit = 0;
  std::size_t standardizer = 0;
  std::size_t context = 0;
  std::size_t forecaster = 0;  // W rows beyond the training window used to fit forecasters
  std::size_t factor_fit_cells = 0;  // total cells the factor fit saw

  bool clean() const { return factor_fit + standardizer + context + forecaster == 0; }
};

struct PipelineResult {
  FactorModel model;
  Matrix W_extended;  // rows up to test_end
  SplitSpec split;
  std::vector<ForecastCell> forecasts;  // target weeks [valid_end, test_end)
  std::vector<ForecastCell> validation;  // observed cells in [train_end, valid_end)
  std::vector<SarimaFit> sarima_fits;
  std::vector<std::size_t> fallback_dimensions;
  std::optional<ContextModel> context;
  LeakageCounters leakage;
  double seconds = 0.0;
};

/// Fits on the training weeks, extends W through test_end and predicts every
/// requested cell of the test window (observed test cells, or the full grid).
PipelineResult run_atlas(const SalesTensor& tensor, const GroupStructure& groups,
                         const PipelineConfig& config, const ContextFeatures* context = nullptr);

struct FittedModel {
  FactorModel model;  // standardizer attached
  SplitSpec split;
  LeakageCounters leakage;
  std::optional<ContextModel> context;
};

/// The factor stage alone (joint with the forecaster when lambda3 > 0).
FittedModel fit_model(const SalesTensor& tensor, const GroupStructure& groups,
                      const PipelineConfig& config, const ContextFeatures* context = nullptr);

/// Forecasts from an already fitted model; W must cover exactly the
/// training weeks of the split.
PipelineResult run_forecast(const SalesTensor& tensor, const FactorModel& model,
                            const PipelineConfig& config, const ContextFeatures* context = nullptr);

/// Joint training with lambda3 * sum_t ||w_t - xi(w_{t-1}, ..., w_{t-Delta0})||^2.
/// The forecaster's predictions are frozen within each W solve and the
/// forecaster is refit on the new W after every cycle.
PipelineResult run_end_to_end(const SalesTensor& tensor, const GroupStructure& groups,
                              const PipelineConfig& config,
                              const ContextFeatures* context = nullptr);

double rmse_of(const std::vector<ForecastCell>& cells);  // observed cells only

struct LeaderboardRow {
  std::size_t k = 0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double valid_rmse = std::numeric_limits<double>::infinity();
  std::string error;  // non-empty when the configuration failed
};

struct TuneResult {
  PipelineConfig best;
  std::vector<LeaderboardRow> leaderboard;  // ascending validation RMSE, stable
  PipelineResult result;                    // best config fitted on train only
};

/// Searches grid (k, lambda1 = lambda1*, lambda2) by validation RMSE; ties go
/// to smaller k, then smaller lambda1. Throws NumericError listing the
/// failures if every configuration fails.
TuneResult tune(const SalesTensor& tensor, const GroupStructure& groups,
                const PipelineConfig& config, const ContextFeatures* context = nullptr);

void write_forecasts(const std::filesystem::path& path, const std::vector<ForecastCell>& cells,
                     const SalesTensor& tensor);
void write_leaderboard(const std::filesystem::path& path, const std::vector<LeaderboardRow>& rows);

}  // namespace atlas
