#include "atlas/data_model.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "atlas/csv.hpp"
#include "atlas/error.hpp"

namespace atlas {

double SalesTensor::density() const {
  const double total = static_cast<double>(n_stores) * static_cast<double>(n_products) *
                       static_cast<double>(n_weeks);
  return total > 0 ? static_cast<double>(cells.size()) / total : 0.0;
}

std::unordered_map<std::string, std::uint32_t> SalesTensor::store_index() const {
  std::unordered_map<std::string, std::uint32_t> index;
  for (std::uint32_t i = 0; i < store_ids.size(); ++i) index.emplace(store_ids[i], i);
  return index;
}

std::unordered_map<std::string, std::uint32_t> SalesTensor::product_index() const {
  std::unordered_map<std::string, std::uint32_t> index;
  for (std::uint32_t j = 0; j < product_ids.size(); ++j) index.emplace(product_ids[j], j);
  return index;
}

void SalesTensor::validate() const {
  if (store_ids.size() != n_stores || product_ids.size() != n_products)
    throw ArgumentError("index maps do not match tensor dimensions");
  std::vector<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> keys;
  keys.reserve(cells.size());
  for (const auto& c : cells) {
    if (c.i >= n_stores || c.j >= n_products || c.t >= n_weeks)
      throw ArgumentError("cell index out of range");
    keys.emplace_back(c.i, c.j, c.t);
  }
  std::sort(keys.begin(), keys.end());
  if (std::adjacent_find(keys.begin(), keys.end()) != keys.end())
    throw ArgumentError("duplicate (store, product, week) cell");
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

IngestResult ingest_csv(const std::filesystem::path& path, const ColumnMap& columns) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  auto in = csv::open_input(path);

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("missing header row in " + path.string());
  const auto header = csv::split_record(line);

  auto resolve = [&](const std::string& name) -> std::size_t {
    const auto wanted = lower(name);
    for (std::size_t c = 0; c < header.size(); ++c)
      if (lower(header[c]) == wanted) return c;
    throw SchemaError("column '" + name + "' not found in header of " + path.string());
  };
  const std::size_t c_store = resolve(columns.store);
  const std::size_t c_week = resolve(columns.week);
  const std::size_t c_sys = resolve(columns.syscode);
  const std::size_t c_gen = resolve(columns.gen);
  const std::size_t c_vendor = resolve(columns.vendor);
  const std::size_t c_item = resolve(columns.item);
  const std::size_t c_units = resolve(columns.units);
  const std::size_t c_dollars = resolve(columns.dollars);
  const std::size_t needed =
      1 + std::max({c_store, c_week, c_sys, c_gen, c_vendor, c_item, c_units, c_dollars});

  IngestResult result;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::chomp(line).empty()) continue;
    const auto f = csv::split_record(line);
    auto reject = [&](std::string reason) {
      result.rejected.push_back({line_no, std::move(reason)});
    };
    if (f.size() < needed) {
      reject("expected at least " + std::to_string(needed) + " fields, got " +
             std::to_string(f.size()));
      continue;
    }
    const auto week = csv::parse_int(f[c_week]);
    const auto units = csv::parse_double(f[c_units]);
    const auto dollars = csv::parse_double(f[c_dollars]);
    if (f[c_store].empty()) {
      reject("empty store id");
    } else if (!week || *week < 1) {
      reject("week is not a positive integer: '" + f[c_week] + "'");
    } else if (!dollars || !std::isfinite(*dollars) || *dollars < 0) {
      reject("dollars is not a nonnegative number: '" + f[c_dollars] + "'");
    } else if (!units || !std::isfinite(*units) || *units < 0) {
      reject("units is not a nonnegative number: '" + f[c_units] + "'");
    } else {
      Transaction t;
      t.store_id = f[c_store];
      t.week = *week;
      t.product_id = f[c_sys] + "-" + f[c_gen] + "-" + f[c_vendor] + "-" + f[c_item];
      t.units = *units;
      t.dollars = *dollars;
      result.transactions.push_back(std::move(t));
    }
  }
  if (!result.rejected.empty())
    spdlog::warn("{}: rejected {} malformed row(s); first at line {}: {}", path.string(),
                 result.rejected.size(), result.rejected.front().line,
                 result.rejected.front().reason);
  return result;
}

// ---------------------------------------------------------------------------
// Tensor construction

SalesTensor build_tensor(const std::vector<Transaction>& txns, std::size_t min_store_txns,
                         std::size_t min_product_txns) {
  std::vector<bool> keep(txns.size(), true);
  std::set<std::string> dropped_stores;
  std::set<std::string> dropped_products;
  for (bool changed = true; changed;) {
    changed = false;
    std::map<std::string, std::size_t> store_count;
    std::map<std::string, std::size_t> product_count;
    for (std::size_t r = 0; r < txns.size(); ++r) {
      if (!keep[r]) continue;
      ++store_count[txns[r].store_id];
      ++product_count[txns[r].product_id];
    }
    for (std::size_t r = 0; r < txns.size(); ++r) {
      if (!keep[r]) continue;
      if (store_count[txns[r].store_id] < min_store_txns ||
          product_count[txns[r].product_id] < min_product_txns) {
        keep[r] = false;
        changed = true;
      }
    }
  }

  std::set<std::string> stores;
  std::set<std::string> products;
  long long min_week = 0;
  long long max_week = 0;
  bool any = false;
  for (std::size_t r = 0; r < txns.size(); ++r) {
    if (!keep[r]) continue;
    stores.insert(txns[r].store_id);
    products.insert(txns[r].product_id);
    min_week = any ? std::min(min_week, txns[r].week) : txns[r].week;
    max_week = any ? std::max(max_week, txns[r].week) : txns[r].week;
    any = true;
  }
  if (!any) throw ArgumentError("empty tensor: no transactions survive screening");

  SalesTensor tensor;
  tensor.store_ids.assign(stores.begin(), stores.end());
  tensor.product_ids.assign(products.begin(), products.end());
  tensor.n_stores = stores.size();
  tensor.n_products = products.size();
  tensor.week_origin = min_week;
  tensor.n_weeks = static_cast<std::size_t>(max_week - min_week + 1);

  const auto store_idx = tensor.store_index();
  const auto product_idx = tensor.product_index();
  std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>, double> sums;
  for (std::size_t r = 0; r < txns.size(); ++r) {
    if (!keep[r]) continue;
    const auto key = std::make_tuple(store_idx.at(txns[r].store_id),
                                     product_idx.at(txns[r].product_id),
                                     static_cast<std::uint32_t>(txns[r].week - min_week));
    sums[key] += txns[r].dollars;
  }
  tensor.cells.reserve(sums.size());
  for (const auto& [key, y] : sums)
    tensor.cells.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), y});
  return tensor;
}

// ---------------------------------------------------------------------------
// Splits

void SplitSpec::validate(std::size_t n_weeks) const {
  if (!(train_end > 0 && train_end <= valid_end && valid_end <= test_end && test_end <= n_weeks))
    throw ArgumentError("invalid split (" + std::to_string(train_end) + ", " +
                        std::to_string(valid_end) + ", " + std::to_string(test_end) +
                        ") for " + std::to_string(n_weeks) +
                        " weeks: need 0 < train_end <= valid_end <= test_end <= T");
}

SplitSpec default_split(std::size_t n_weeks, std::size_t horizon) {
  if (n_weeks <= 2 * horizon)
    throw ArgumentError("tensor has " + std::to_string(n_weeks) +
                        " weeks; need more than twice the horizon (" +
                        std::to_string(horizon) + ") for a default split");
  return {n_weeks - 2 * horizon, n_weeks - horizon, n_weeks};
}

Split chronological_split(const SalesTensor& tensor, const SplitSpec& spec) {
  spec.validate(tensor.n_weeks);
  Split out;
  for (SalesTensor* part : {&out.train, &out.valid, &out.test}) {
    part->n_stores = tensor.n_stores;
    part->n_products = tensor.n_products;
    part->n_weeks = tensor.n_weeks;
    part->week_origin = tensor.week_origin;
    part->store_ids = tensor.store_ids;
    part->product_ids = tensor.product_ids;
  }
  out.train.n_weeks = spec.train_end;
  for (const auto& c : tensor.cells) {
    if (c.t < spec.train_end)
      out.train.cells.push_back(c);
    else if (c.t < spec.valid_end)
      out.valid.cells.push_back(c);
    else
      out.test.cells.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Standardization

const char* to_string(StandardizeMode mode) {
  switch (mode) {
    case StandardizeMode::none: return "none";
    case StandardizeMode::zscore: return "zscore";
    case StandardizeMode::log1p: return "log1p";
  }
  return "none";
}

StandardizeMode parse_standardize_mode(const std::string& text) {
  const auto s = lower(text);
  if (s == "none") return StandardizeMode::none;
  if (s == "zscore") return StandardizeMode::zscore;
  if (s == "log1p") return StandardizeMode::log1p;
  throw ArgumentError("unknown standardization mode '" + text + "' (none|zscore|log1p)");
}

double Standardizer::apply(double y) const {
  switch (mode) {
    case StandardizeMode::none: return y;
    case StandardizeMode::zscore: return (y - mean) / stddev;
    case StandardizeMode::log1p: return std::log1p(y);
  }
  return y;
}

double Standardizer::invert(double z) const {
  switch (mode) {
    case StandardizeMode::none: return z;
    case StandardizeMode::zscore: return z * stddev + mean;
    case StandardizeMode::log1p: return std::expm1(z);
  }
  return z;
}

std::vector<double> Standardizer::apply(const std::vector<double>& values) const {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [&](double v) { return apply(v); });
  return out;
}

std::vector<double> Standardizer::invert(const std::vector<double>& values) const {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [&](double v) { return invert(v); });
  return out;
}

Standardizer fit_standardizer(const SalesTensor& train, StandardizeMode mode) {
  Standardizer s;
  s.mode = mode;
  if (mode != StandardizeMode::zscore) return s;

  const std::size_t n = train.cells.size();
  double mean = 0.0;
  for (const auto& c : train.cells) mean += c.y;
  mean = n > 0 ? mean / static_cast<double>(n) : 0.0;
  double ss = 0.0;
  for (const auto& c : train.cells) ss += (c.y - mean) * (c.y - mean);
  const double var = n > 1 ? ss / static_cast<double>(n - 1) : 0.0;
  if (n < 2 || !(var > 0.0)) {
    spdlog::warn("zscore standardization needs >= 2 train cells with nonzero variance; "
                 "falling back to no standardization");
    return Standardizer{};
  }
  s.mean = mean;
  s.stddev = std::sqrt(var);
  return s;
}

SalesTensor standardized(const SalesTensor& tensor, const Standardizer& standardizer) {
  SalesTensor out = tensor;
  for (auto& c : out.cells) c.y = standardizer.apply(c.y);
  return out;
}

// ---------------------------------------------------------------------------
// Canonical export / import

std::filesystem::path meta_path_for(const std::filesystem::path& csv_path) {
  auto meta = csv_path;
  meta.replace_extension(".meta");
  return meta;
}

void export_tensor(const SalesTensor& tensor, const std::filesystem::path& csv_path,
                   const Standardizer& standardizer) {
  {
    auto out = csv::open_output(csv_path);
    out << "store_id,product_id,week_t,y\n";
    for (const auto& c : tensor.cells)
      out << tensor.store_ids[c.i] << ',' << tensor.product_ids[c.j] << ',' << c.t << ','
          << csv::format_fixed(c.y, 6) << '\n';
    if (!out) throw IoError("write failed: " + csv_path.string());
  }
  auto meta = csv::open_output(meta_path_for(csv_path));
  meta << "format=atlas-tensor\n"
       << "version=1\n"
       << "n_stores=" << tensor.n_stores << '\n'
       << "n_products=" << tensor.n_products << '\n'
       << "n_weeks=" << tensor.n_weeks << '\n'
       << "n_cells=" << tensor.cells.size() << '\n'
       << "week_origin=" << tensor.week_origin << '\n'
       << "standardizer_mode=" << to_string(standardizer.mode) << '\n'
       << "standardizer_mean=" << csv::format_exact(standardizer.mean) << '\n'
       << "standardizer_stddev=" << csv::format_exact(standardizer.stddev) << '\n';
  for (std::size_t i = 0; i < tensor.store_ids.size(); ++i)
    meta << "store." << i << '=' << tensor.store_ids[i] << '\n';
  for (std::size_t j = 0; j < tensor.product_ids.size(); ++j)
    meta << "product." << j << '=' << tensor.product_ids[j] << '\n';
  if (!meta) throw IoError("write failed: " + meta_path_for(csv_path).string());
}

LoadedTensor import_tensor(const std::filesystem::path& csv_path) {
  const auto meta_path = meta_path_for(csv_path);
  auto meta = csv::open_input(meta_path);
  std::map<std::string, std::string> kv;
  std::vector<std::pair<std::size_t, std::string>> stores;
  std::vector<std::pair<std::size_t, std::string>> products;
  std::string line;
  while (std::getline(meta, line)) {
    const auto text = std::string(csv::chomp(line));
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw SchemaError("malformed metadata line: " + text);
    const auto key = text.substr(0, eq);
    const auto value = text.substr(eq + 1);
    auto indexed = [&](const std::string& prefix,
                       std::vector<std::pair<std::size_t, std::string>>& into) {
      if (key.rfind(prefix, 0) != 0) return false;
      const auto idx = csv::parse_int(key.substr(prefix.size()));
      if (!idx || *idx < 0) throw SchemaError("bad index in metadata key " + key);
      into.emplace_back(static_cast<std::size_t>(*idx), value);
      return true;
    };
    if (!indexed("store.", stores) && !indexed("product.", products)) kv[key] = value;
  }
  auto require = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw SchemaError("metadata key '" + key + "' missing in " +
                                          meta_path.string());
    return it->second;
  };
  auto require_count = [&](const std::string& key) {
    const auto v = csv::parse_int(require(key));
    if (!v || *v < 0) throw SchemaError("metadata key '" + key + "' is not a count");
    return static_cast<std::size_t>(*v);
  };

  LoadedTensor loaded;
  SalesTensor& t = loaded.tensor;
  t.n_stores = require_count("n_stores");
  t.n_products = require_count("n_products");
  t.n_weeks = require_count("n_weeks");
  const auto origin = csv::parse_int(require("week_origin"));
  if (!origin) throw SchemaError("week_origin is not an integer");
  t.week_origin = *origin;
  loaded.standardizer.mode = parse_standardize_mode(require("standardizer_mode"));
  const auto mean = csv::parse_double(require("standardizer_mean"));
  const auto sd = csv::parse_double(require("standardizer_stddev"));
  if (!mean || !sd) throw SchemaError("standardizer parameters are not numbers");
  loaded.standardizer.mean = *mean;
  loaded.standardizer.stddev = *sd;

  auto fill = [](std::size_t n, std::vector<std::pair<std::size_t, std::string>>& entries,
                 const char* what) {
    std::vector<std::string> ids(n);
    std::vector<bool> seen(n, false);
    for (auto& [idx, id] : entries) {
      if (idx >= n || seen[idx]) throw SchemaError(std::string("bad ") + what + " index map");
      seen[idx] = true;
      ids[idx] = std::move(id);
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
      throw SchemaError(std::string("incomplete ") + what + " index map");
    return ids;
  };
  t.store_ids = fill(t.n_stores, stores, "store");
  t.product_ids = fill(t.n_products, products, "product");

  const auto store_idx = t.store_index();
  const auto product_idx = t.product_index();
  auto in = csv::open_input(csv_path);
  if (!std::getline(in, line)) throw SchemaError("missing header in " + csv_path.string());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::chomp(line).empty()) continue;
    const auto f = csv::split_record(line);
    const auto where = csv_path.string() + ":" + std::to_string(line_no);
    if (f.size() != 4) throw SchemaError(where + ": expected 4 fields");
    const auto si = store_idx.find(f[0]);
    const auto pj = product_idx.find(f[1]);
    const auto wt = csv::parse_int(f[2]);
    const auto y = csv::parse_double(f[3]);
    if (si == store_idx.end() || pj == product_idx.end() || !wt || *wt < 0 || !y)
      throw SchemaError(where + ": unparseable cell");
    t.cells.push_back({si->second, pj->second, static_cast<std::uint32_t>(*wt), *y});
  }
  const auto n_cells = require_count("n_cells");
  if (n_cells != t.cells.size())
    throw SchemaError("cell count mismatch: metadata says " + std::to_string(n_cells) +
                      ", file has " + std::to_string(t.cells.size()));
  t.validate();
  return loaded;
}

}  // namespace atlas
