#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace atlas {

/// One row of a store-level weekly sales extract.
struct Transaction {
  std::string store_id;
  long long week = 0;        // calendar-week ordinal, 1-based
  std::string product_id;    // UPC parts joined with '-'
  double units = 0.0;
  double dollars = 0.0;
};

struct Cell {
  std::uint32_t i = 0;  // store
  std::uint32_t j = 0;  // product
  std::uint32_t t = 0;  // week offset from week_origin
  double y = 0.0;

  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Sparse store x product x week tensor. Only observed cells are stored; an
/// absent cell is unobserved, never an implicit zero.
struct SalesTensor {
  std::size_t n_stores = 0;
  std::size_t n_products = 0;
  std::size_t n_weeks = 0;
  long long week_origin = 1;  // calendar week mapped to t = 0
  std::vector<Cell> cells;
  std::vector<std::string> store_ids;    // index -> id
  std::vector<std::string> product_ids;  // index -> id

  double density() const;
  bool empty() const { return cells.empty(); }

  // id -> index lookups, built on demand (linear in the number of ids).
  std::unordered_map<std::string, std::uint32_t> store_index() const;
  std::unordered_map<std::string, std::uint32_t> product_index() const;

  // Throws ArgumentError if an index is out of range or (i,j,t) repeats.
  void validate() const;
};

struct ColumnMap {
  std::string store = "store";
  std::string week = "week";
  std::string syscode = "syscode";
  std::string gen = "gen";
  std::string vendor = "vendor";
  std::string item = "item";
  std::string units = "units";
  std::string dollars = "dollars";
};

struct RejectedRow {
  std::size_t line = 0;  // 1-based line number in the file
  std::string reason;
};

struct IngestResult {
  std::vector<Transaction> transactions;
  std::vector<RejectedRow> rejected;
};

/// Reads an IRI-style extract. Column names are matched case-insensitively.
/// Throws IoError if the file cannot be read and SchemaError if a mapped
/// column is missing from the header. Malformed rows are skipped and listed in
/// `rejected`.
IngestResult ingest_csv(const std::filesystem::path& path, const ColumnMap& columns = {});

inline constexpr std::size_t kIriMinStoreTransactions = 1000;
inline constexpr std::size_t kIriMinProductTransactions = 200;

/// Screens sparse stores/products (repeated until no further removal), re-bases
/// weeks so the earliest week is t = 0, and sums duplicate cells. Dollars become
/// the response. Store and product indices follow lexicographic id order.
SalesTensor build_tensor(const std::vector<Transaction>& txns, std::size_t min_store_txns = 0,
                         std::size_t min_product_txns = 0);

struct SplitSpec {
  std::size_t train_end = 0;
  std::size_t valid_end = 0;
  std::size_t test_end = 0;

  void validate(std::size_t n_weeks) const;
};

struct Split {
  SalesTensor train;  // n_weeks == train_end
  SalesTensor valid;  // n_weeks == n_weeks of the source tensor
  SalesTensor test;   // n_weeks == n_weeks of the source tensor
};

Split chronological_split(const SalesTensor& tensor, const SplitSpec& spec);

// Default split for a T-week tensor: the last `horizon` weeks are the test
// window and the `horizon` weeks before them the validation window.
SplitSpec default_split(std::size_t n_weeks, std::size_t horizon = 8);

enum class StandardizeMode { none, zscore, log1p };

const char* to_string(StandardizeMode mode);
StandardizeMode parse_standardize_mode(const std::string& text);

struct Standardizer {
  StandardizeMode mode = StandardizeMode::none;
  double mean = 0.0;
  double stddev = 1.0;

  double apply(double y) const;
  double invert(double z) const;
  std::vector<double> apply(const std::vector<double>& values) const;
  std::vector<double> invert(const std::vector<double>& values) const;
};

/// Statistics come from `train` only. A z-score request on fewer than two
/// cells or zero variance falls back to `none` and logs a warning.
Standardizer fit_standardizer(const SalesTensor& train, StandardizeMode mode);

SalesTensor standardized(const SalesTensor& tensor, const Standardizer& standardizer);

/// Canonical export: `<stem>.csv` with (store_id, product_id, week_t, y) at six
/// fractional digits, plus `<stem>.meta` holding counts, week_origin, the
/// standardizer and the index maps as key=value lines.
void export_tensor(const SalesTensor& tensor, const std::filesystem::path& csv_path,
                   const Standardizer& standardizer = {});

struct LoadedTensor {
  SalesTensor tensor;
  Standardizer standardizer;
};

LoadedTensor import_tensor(const std::filesystem::path& csv_path);

std::filesystem::path meta_path_for(const std::filesystem::path& csv_path);

}  // namespace atlas
