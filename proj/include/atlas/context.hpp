#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "atlas/data_model.hpp"
#include "atlas/penalty.hpp"

namespace atlas {

/// Observable covariates per (store, product, week) cell.
struct ContextFeatures {
  std::vector<std::string> names;
  std::unordered_map<std::uint64_t, std::vector<double>> rows;

  static std::uint64_t key(std::uint32_t i, std::uint32_t j, std::uint32_t t);
  void set(std::uint32_t i, std::uint32_t j, std::uint32_t t, std::vector<double> x);
  const std::vector<double>* find(std::uint32_t i, std::uint32_t j, std::uint32_t t) const;
};

/// Reads store_id, product_id, week, feature_1..feature_f; feature names come
/// from the header and `week` is the calendar week. Rows naming unknown
/// stores or products are skipped.
ContextFeatures read_context_features(const std::filesystem::path& path, const SalesTensor& tensor);
void write_context_features(const std::filesystem::path& path, const ContextFeatures& features,
                            const SalesTensor& tensor);

struct ContextModel {
  std::vector<std::string> names;
  double intercept = 0.0;
  Vector beta;
  std::size_t train_cells = 0;

  double predict(const std::vector<double>& x) const;
};

/// Ordinary least squares of y on [1, x] over the given (training) cells.
/// Throws ArgumentError if a cell has no features. A singular design gets a
/// 1e-8 ridge jitter.
ContextModel fit_context(const SalesTensor& train, const ContextFeatures& features);

/// y - x'beta for every cell.
SalesTensor residualize(const SalesTensor& tensor, const ContextModel& model,
                        const ContextFeatures& features);

/// x'beta + residual. Without features for the cell the context part is
/// omitted and `missing` (if given) is set.
double recompose(double residual, const ContextModel& model, const ContextFeatures& features,
                 std::uint32_t i, std::uint32_t j, std::uint32_t t, bool* missing = nullptr);

}  // namespace atlas
