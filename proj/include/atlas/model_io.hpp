#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "atlas/factorization.hpp"

namespace atlas {

// Dense matrix as CSV: header "c0,c1,...", one row per line, %.17g values.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_csv(const std::filesystem::path& path);

/// Model file layout (version 1):
///
///   format=atlas-model
///   version=1
///   k=<rank>  lambda1=...  lambda1_star=...  lambda2=...  (one key per line)
///   ... any extra key=value metadata ...
///   [P] <rows> <cols>
///   <comma-separated row>...
///   [Q] <rows> <cols>
///   ...
///   [W] <rows> <cols>
///   ...
///
/// Numbers are written with 17 significant digits so a reload is exact.
void save_model(const std::filesystem::path& path, const FactorModel& model,
                const std::map<std::string, std::string>& extra = {});

struct LoadedModel {
  FactorModel model;
  std::map<std::string, std::string> metadata;
};

LoadedModel load_model(const std::filesystem::path& path);

/// iteration,loss,J  (J blank on the initial row)
void write_loss_trace(const std::filesystem::path& path, const std::vector<double>& trace);

/// Group file: CSV with header containing an id column (`store_id` or
/// `product_id`), `group_id`, and optionally `rho`. Members keep file order;
/// groups are numbered by first appearance. If `covariance_path` is given it
/// holds one line per group: `group_id,v_11,v_12,...` (row-major, member
/// order). Without either, a group's target covariance is the identity.
/// Ids missing from `index` are skipped with a warning; entities of the
/// tensor absent from the file become singleton groups.
Grouping read_grouping(const std::filesystem::path& path,
                       const std::unordered_map<std::string, std::uint32_t>& index,
                       std::size_t n_entities,
                       const std::optional<std::filesystem::path>& covariance_path = {});

void write_grouping(const std::filesystem::path& path, const Grouping& grouping,
                    const std::vector<std::string>& ids, const std::string& id_column,
                    const std::vector<double>& rho);

void write_covariance_file(const std::filesystem::path& path, const Grouping& grouping);

}  // namespace atlas
