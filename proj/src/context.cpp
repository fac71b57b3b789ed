#include "atlas/context.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Cholesky>
#include <algorithm>
#include <fstream>

#include "atlas/csv.hpp"
#include "atlas/error.hpp"

namespace atlas {

std::uint64_t ContextFeatures::key(std::uint32_t i, std::uint32_t j, std::uint32_t t) {
  // 24 bits per store and product, 16 per week.
  return (static_cast<std::uint64_t>(i) << 40) | (static_cast<std::uint64_t>(j) << 16) | t;
}

void ContextFeatures::set(std::uint32_t i, std::uint32_t j, std::uint32_t t,
                          std::vector<double> x) {
  if (i >= (1u << 24) || j >= (1u << 24) || t >= (1u << 16))
    throw ArgumentError("context cell index out of range");
  if (x.size() != names.size())
    throw ArgumentError("context row has " + std::to_string(x.size()) + " features, expected " +
                        std::to_string(names.size()));
  rows[key(i, j, t)] = std::move(x);
}

const std::vector<double>* ContextFeatures::find(std::uint32_t i, std::uint32_t j,
                                                 std::uint32_t t) const {
  const auto it = rows.find(key(i, j, t));
  return it == rows.end() ? nullptr : &it->second;
}

ContextFeatures read_context_features(const std::filesystem::path& path,
                                      const SalesTensor& tensor) {
  auto in = csv::open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": empty context file");
  const auto header = csv::split_record(csv::chomp(line));
  if (header.size() < 3 || header[0] != "store_id" || header[1] != "product_id" ||
      header[2] != "week")
    throw SchemaError(path.string() + ": context header must start with store_id,product_id,week");
  ContextFeatures out;
  out.names.assign(header.begin() + 3, header.end());
  const auto stores = tensor.store_index();
  const auto products = tensor.product_index();
  std::size_t line_no = 1, skipped = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::chomp(line).empty()) continue;
    const auto f = csv::split_record(csv::chomp(line));
    if (f.size() != header.size())
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields");
    const auto s = stores.find(f[0]);
    const auto p = products.find(f[1]);
    const auto week = csv::parse_int(f[2]);
    if (!week) throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": bad week");
    const long long t = *week - tensor.week_origin;
    if (s == stores.end() || p == products.end() || t < 0) {
      ++skipped;
      continue;
    }
    std::vector<double> x;
    for (std::size_t c = 3; c < f.size(); ++c) {
      const auto v = csv::parse_double(f[c]);
      if (!v) throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": bad value");
      x.push_back(*v);
    }
    out.set(s->second, p->second, static_cast<std::uint32_t>(t), std::move(x));
  }
  if (skipped) spdlog::warn("{}: skipped {} context row(s) for unknown cells", path.string(), skipped);
  return out;
}

void write_context_features(const std::filesystem::path& path, const ContextFeatures& features,
                            const SalesTensor& tensor) {
  auto out = csv::open_output(path);
  out << "store_id,product_id,week";
  for (const auto& n : features.names) out << ',' << n;
  out << '\n';
  std::vector<std::uint64_t> keys;
  keys.reserve(features.rows.size());
  for (const auto& [k, x] : features.rows) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (auto k : keys) {
    const auto i = static_cast<std::uint32_t>(k >> 40);
    const auto j = static_cast<std::uint32_t>((k >> 16) & 0xffffff);
    const auto t = static_cast<std::uint32_t>(k & 0xffff);
    out << tensor.store_ids.at(i) << ',' << tensor.product_ids.at(j) << ','
        << tensor.week_origin + static_cast<long long>(t);
    for (double v : features.rows.at(k)) out << ',' << csv::format_exact(v);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

double ContextModel::predict(const std::vector<double>& x) const {
  double v = intercept;
  for (std::size_t c = 0; c < x.size(); ++c) v += beta[static_cast<Eigen::Index>(c)] * x[c];
  return v;
}

ContextModel fit_context(const SalesTensor& train, const ContextFeatures& features) {
  if (train.cells.empty()) throw ArgumentError("fit_context: no training cells");
  const auto f = static_cast<Eigen::Index>(features.names.size());
  Matrix xtx = Matrix::Zero(f + 1, f + 1);
  Vector xty = Vector::Zero(f + 1);
  Vector row(f + 1);
  for (const auto& c : train.cells) {
    const auto* x = features.find(c.i, c.j, c.t);
    if (!x)
      throw ArgumentError("fit_context: no features for training cell (" +
                          train.store_ids.at(c.i) + ", " + train.product_ids.at(c.j) + ", week " +
                          std::to_string(train.week_origin + c.t) + ")");
    row[0] = 1.0;
    for (Eigen::Index k = 0; k < f; ++k) row[k + 1] = (*x)[static_cast<std::size_t>(k)];
    xtx.selfadjointView<Eigen::Lower>().rankUpdate(row);
    xty += c.y * row;
  }
  xtx = xtx.selfadjointView<Eigen::Lower>();
  Eigen::LLT<Matrix> llt(xtx);
  if (llt.info() != Eigen::Success) {
    spdlog::warn("fit_context: singular design; adding a 1e-8 ridge jitter");
    xtx.diagonal().array() += 1e-8;
    llt.compute(xtx);
    if (llt.info() != Eigen::Success) throw NumericError("fit_context: design is not solvable");
  }
  const Vector b = llt.solve(xty);
  if (!b.allFinite()) throw NumericError("fit_context: non-finite coefficients");
  ContextModel m;
  m.names = features.names;
  m.intercept = b[0];
  m.beta = b.tail(f);
  m.train_cells = train.cells.size();
  return m;
}

SalesTensor residualize(const SalesTensor& tensor, const ContextModel& model,
                        const ContextFeatures& features) {
  SalesTensor out = tensor;
  for (auto& c : out.cells) {
    const auto* x = features.find(c.i, c.j, c.t);
    if (!x) throw ArgumentError("residualize: missing features for a cell");
    c.y -= model.predict(*x);
  }
  return out;
}

double recompose(double residual, const ContextModel& model, const ContextFeatures& features,
                 std::uint32_t i, std::uint32_t j, std::uint32_t t, bool* missing) {
  const auto* x = features.find(i, j, t);
  if (missing) *missing = x == nullptr;
  return x ? model.predict(*x) + residual : residual;
}

}  // namespace atlas
