#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "atlas/factorization.hpp"
#include "atlas/lstm.hpp"
#include "atlas/sarima.hpp"

namespace atlas {

// last_value carries the final row of W forward (the freeze-W baseline).
enum class ForecastMethod { sarima, lstm, last_value };

ForecastMethod parse_forecast_method(const std::string& name);
std::string to_string(ForecastMethod m);

struct ForecastOptions {
  ForecastMethod method = ForecastMethod::sarima;
  std::vector<SarimaSpec> grid;  // empty: default_sarima_grid(season)
  std::size_t season = 52;
  LstmSpec lstm;
  std::uint64_t seed = 0;
};

/// Per-dimension forecasters for the columns of W. Dimensions whose fitter
/// fails fall back to carrying their last value forward.
class LatentForecaster {
 public:
  explicit LatentForecaster(ForecastOptions options);

  /// Fits every column of W, selecting SARIMA orders afresh on each call.
  void fit(const Matrix& W);

  /// Row t >= from holds the one-step prediction of W.row(t) from rows < t.
  /// Rows before `from` are zero.
  Matrix one_step(const Matrix& W, std::size_t from) const;

  /// W with `horizon` forecast rows appended; the first rows are copied.
  Matrix extend(const Matrix& W, std::size_t horizon) const;

  const ForecastOptions& options() const { return options_; }
  const std::vector<SarimaFit>& sarima_fits() const { return sarima_; }
  const std::vector<std::size_t>& fallback_dimensions() const { return fallback_; }

 private:
  std::vector<double> forecast_column(const Matrix& W, std::size_t l, std::size_t rows,
                                      std::size_t horizon) const;

  ForecastOptions options_;
  std::vector<SarimaFit> sarima_;
  std::optional<LstmFit> lstm_;
  std::vector<bool> failed_;
  std::vector<std::size_t> fallback_;
};

struct ForecastReport {
  std::vector<SarimaFit> sarima_fits;  // one per dimension (SARIMA only)
  std::vector<std::size_t> fallback_dimensions;
};

/// W with `horizon` forecast rows appended; the first rows are copied
/// unchanged. Dimensions whose fitter fails carry their last value forward.
Matrix extend_time_factors(const FactorModel& model, std::size_t horizon,
                           const ForecastOptions& options, ForecastReport* report = nullptr);

}  // namespace atlas
