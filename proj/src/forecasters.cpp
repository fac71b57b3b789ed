#include "atlas/forecasters.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <exception>

#include "atlas/error.hpp"
#include "atlas/parallel.hpp"
#include "atlas/random.hpp"

namespace atlas {

namespace {

using Index = Eigen::Index;

std::vector<double> column(const Matrix& W, std::size_t l, std::size_t rows) {
  std::vector<double> out(rows);
  for (std::size_t t = 0; t < rows; ++t) out[t] = W(static_cast<Index>(t), static_cast<Index>(l));
  return out;
}

void require_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError("non-finite forecast");
}

}  // namespace

ForecastMethod parse_forecast_method(const std::string& name) {
  if (name == "sarima") return ForecastMethod::sarima;
  if (name == "lstm") return ForecastMethod::lstm;
  if (name == "last_value") return ForecastMethod::last_value;
  throw ArgumentError("unknown forecaster '" + name + "' (expected sarima, lstm or last_value)");
}

std::string to_string(ForecastMethod m) {
  switch (m) {
    case ForecastMethod::sarima: return "sarima";
    case ForecastMethod::lstm: return "lstm";
    case ForecastMethod::last_value: return "last_value";
  }
  return "unknown";
}

LatentForecaster::LatentForecaster(ForecastOptions options) : options_(std::move(options)) {
  if (options_.method == ForecastMethod::sarima && options_.grid.empty())
    options_.grid = default_sarima_grid(options_.season);
  if (options_.method == ForecastMethod::lstm) options_.lstm.validate();
}

void LatentForecaster::fit(const Matrix& W) {
  const auto k = static_cast<std::size_t>(W.cols());
  const auto T = static_cast<std::size_t>(W.rows());
  if (T == 0) throw ArgumentError("cannot fit forecasters to an empty W");
  std::vector<std::string> failure(k);
  failed_.assign(k, false);
  fallback_.clear();

  if (options_.method == ForecastMethod::last_value) return;
  if (options_.method == ForecastMethod::sarima) {
    sarima_.assign(k, SarimaFit{});
    parallel_for(k, [&](std::size_t l) {
      try {
        const auto series = column(W, l, T);
        sarima_[l] = sarima_fit(series, sarima_select(series, options_.grid));
      } catch (const std::exception& e) {
        failure[l] = e.what();
      }
    });
  } else if (options_.lstm.shared) {
    std::vector<std::vector<double>> all(k);
    for (std::size_t l = 0; l < k; ++l) all[l] = column(W, l, T);
    try {
      lstm_ = lstm_train(all, options_.lstm, options_.seed);
    } catch (const std::exception& e) {
      lstm_.reset();
      for (auto& f : failure) f = e.what();
    }
  } else {
    // Independent networks, each seeded from its dimension.
    LstmFit merged;
    merged.spec = options_.lstm;
    merged.networks.resize(k);
    merged.mean.assign(k, 0.0);
    merged.scale.assign(k, 1.0);
    parallel_for(k, [&](std::size_t l) {
      try {
        auto one = lstm_train({column(W, l, T)}, options_.lstm, derive_seed(options_.seed, l));
        merged.networks[l] = std::move(one.networks.front());
        merged.mean[l] = one.mean.front();
        merged.scale[l] = one.scale.front();
      } catch (const std::exception& e) {
        failure[l] = e.what();
      }
    });
    lstm_ = std::move(merged);
  }

  for (std::size_t l = 0; l < k; ++l)
    if (!failure[l].empty()) {
      spdlog::warn("latent dimension {}: {} fit failed ({}); carrying the last value forward", l,
                   to_string(options_.method), failure[l]);
      failed_[l] = true;
      fallback_.push_back(l);
    }
}

std::vector<double> LatentForecaster::forecast_column(const Matrix& W, std::size_t l,
                                                      std::size_t rows,
                                                      std::size_t horizon) const {
  const auto series = column(W, l, rows);
  if (!failed_[l] && options_.method != ForecastMethod::last_value) {
    try {
      auto out = options_.method == ForecastMethod::sarima
                     ? sarima_forecast(sarima_[l], series, horizon)
                     : lstm_forecast(*lstm_, l, series, horizon);
      require_finite(out);
      return out;
    } catch (const std::exception& e) {
      spdlog::debug("latent dimension {}: forecast failed ({}); carrying the last value forward",
                    l, e.what());
    }
  }
  return std::vector<double>(horizon, series.back());
}

Matrix LatentForecaster::one_step(const Matrix& W, std::size_t from) const {
  const auto k = static_cast<std::size_t>(W.cols());
  const auto T = static_cast<std::size_t>(W.rows());
  if (failed_.size() != k) throw ArgumentError("forecaster was fitted to a different W");
  Matrix out = Matrix::Zero(W.rows(), W.cols());
  from = std::max<std::size_t>(from, 1);
  parallel_for(k, [&](std::size_t l) {
    for (std::size_t t = from; t < T; ++t)
      out(static_cast<Index>(t), static_cast<Index>(l)) = forecast_column(W, l, t, 1).front();
  });
  return out;
}

Matrix LatentForecaster::extend(const Matrix& W, std::size_t horizon) const {
  const Index T = W.rows(), k = W.cols();
  Matrix out(T + static_cast<Index>(horizon), k);
  out.topRows(T) = W;
  if (horizon == 0) return out;
  if (failed_.size() != static_cast<std::size_t>(k))
    throw ArgumentError("forecaster was fitted to a different W");
  parallel_for(static_cast<std::size_t>(k), [&](std::size_t l) {
    const auto f = forecast_column(W, l, static_cast<std::size_t>(T), horizon);
    for (std::size_t h = 0; h < horizon; ++h)
      out(T + static_cast<Index>(h), static_cast<Index>(l)) = f[h];
  });
  return out;
}

Matrix extend_time_factors(const FactorModel& model, std::size_t horizon,
                           const ForecastOptions& options, ForecastReport* report) {
  if (horizon == 0) return model.W;
  if (model.W.rows() == 0) throw ArgumentError("extend_time_factors: model has no time factors");
  LatentForecaster forecaster(options);
  forecaster.fit(model.W);
  Matrix out = forecaster.extend(model.W, horizon);
  if (report) {
    report->fallback_dimensions = forecaster.fallback_dimensions();
    report->sarima_fits = forecaster.sarima_fits();
  }
  return out;
}

}  // namespace atlas
