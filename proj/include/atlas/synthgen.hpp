#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "atlas/data_model.hpp"
#include "atlas/factorization.hpp"

namespace atlas {

/// Parameters of the synthetic sales generator. Store factors within a group
/// are drawn with pairwise correlation `competition_rho` across latent
/// coordinates; week factors carry a linear trend and a seasonal sinusoid.
struct SynthConfig {
  std::size_t n_stores = 60;
  std::size_t n_products = 80;
  std::size_t n_weeks = 120;
  std::size_t true_rank = 4;
  std::size_t n_store_groups = 15;
  double competition_rho = -0.3;
  double density = 0.1;
  double noise_sigma = 0.0;
  // When set, noise_sigma is a fraction of the RMS of the clean observed values.
  bool noise_relative = false;
  std::size_t season_period = 52;
  double trend_scale = 0.002;  // per-week slope of the time factors
  double season_amplitude = 0.3;
  double factor_mean = 1.0;
  double factor_spread = 0.3;
  double week_noise = 0.02;
  long long week_origin = 1479;
  std::uint64_t seed = 0;

  /// Throws ArgumentError naming the violated bound.
  void validate() const;
};

struct GroundTruth {
  Matrix P;  // n x k*
  Matrix Q;  // m x k*
  Matrix W;  // T x k*
  std::vector<std::uint32_t> store_group;
  std::vector<Matrix> sigma;  // per group
  double noise_sigma = 0.0;   // absolute noise level actually used
  std::size_t truncated_cells = 0;

  double clean_value(std::size_t i, std::size_t j, std::size_t t) const;
  /// Grouping of the stores with each group's generating covariance.
  Grouping store_grouping() const;
};

struct SynthData {
  SalesTensor tensor;
  GroundTruth truth;
};

/// Pure function of the config: identical configs give bit-identical output.
SynthData generate(const SynthConfig& config);

/// Writes the tensor in the raw extract layout (store, week, syscode, gen,
/// vendor, item, units, dollars) readable by ingest_csv with default columns.
/// Throws ArgumentError for an empty tensor and IoError if the path is not
/// writable.
void export_iri_csv(const SalesTensor& tensor, const std::filesystem::path& path);

/// Persists the ground truth next to a generated extract: P/Q/W as CSV,
/// store groups as (store_id, group_id, rho) and the config as key=value.
void write_ground_truth(const SynthData& data, const SynthConfig& config,
                        const std::filesystem::path& dir);

std::map<std::string, std::string> synth_config_to_map(const SynthConfig& config);
SynthConfig synth_config_from_map(const std::map<std::string, std::string>& kv);

}  // namespace atlas
