#include "atlas/synthgen.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "atlas/csv.hpp"
#include "atlas/error.hpp"
#include "atlas/keyvalue.hpp"
#include "atlas/model_io.hpp"
#include "atlas/penalty.hpp"
#include "atlas/random.hpp"

namespace atlas {

namespace {

using Index = Eigen::Index;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) { return rng_stream(seed, tag); }

// Contiguous blocks, sizes differ by at most one.
std::vector<std::vector<std::uint32_t>> store_blocks(std::size_t n, std::size_t groups) {
  std::vector<std::vector<std::uint32_t>> out(groups);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = g * n / groups; i < (g + 1) * n / groups; ++i)
      out[g].push_back(static_cast<std::uint32_t>(i));
  return out;
}

std::string padded(std::size_t value, std::size_t width) {
  std::string s = std::to_string(value);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

std::size_t digits(std::size_t n) { return std::to_string(n > 0 ? n - 1 : 0).size(); }

}  // namespace

void SynthConfig::validate() const {
  if (n_stores == 0 || n_products == 0 || n_weeks == 0)
    throw ArgumentError("n_stores, n_products and n_weeks must be positive");
  if (true_rank == 0) throw ArgumentError("true_rank must be positive");
  if (n_store_groups == 0 || n_store_groups > n_stores)
    throw ArgumentError("n_store_groups must be in [1, n_stores]");
  if (!(competition_rho > -1.0 && competition_rho < 1.0))
    throw ArgumentError("competition_rho must lie in (-1, 1)");
  const std::size_t max_size = (n_stores + n_store_groups - 1) / n_store_groups;
  if (max_size >= 2 && competition_rho < min_feasible_rho(max_size))
    throw ArgumentError("competition_rho " + csv::format_exact(competition_rho) +
                        " is infeasible for group size " + std::to_string(max_size) +
                        ": need rho >= -1/(" + std::to_string(max_size) + " - 1) + 1e-6 = " +
                        csv::format_exact(min_feasible_rho(max_size)));
  if (!(density > 0.0 && density <= 1.0)) throw ArgumentError("density must lie in (0, 1]");
  if (density * static_cast<double>(n_stores) * static_cast<double>(n_products) *
          static_cast<double>(n_weeks) <
      1.0)
    throw ArgumentError("density * n * m * T must be at least 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw ArgumentError("noise_sigma must be a nonnegative number");
  if (season_period == 0) throw ArgumentError("season_period must be positive");
  for (double v : {trend_scale, season_amplitude, factor_mean, factor_spread, week_noise})
    if (!std::isfinite(v)) throw ArgumentError("generator parameters must be finite");
  if (factor_spread < 0.0 || week_noise < 0.0)
    throw ArgumentError("factor_spread and week_noise must be nonnegative");
}

double GroundTruth::clean_value(std::size_t i, std::size_t j, std::size_t t) const {
  return (P.row(static_cast<Index>(i)).array() * Q.row(static_cast<Index>(j)).array() *
          W.row(static_cast<Index>(t)).array())
      .sum();
}

Grouping GroundTruth::store_grouping() const {
  Grouping g;
  g.members.resize(sigma.size());
  for (std::size_t i = 0; i < store_group.size(); ++i)
    g.members.at(store_group[i]).push_back(static_cast<std::uint32_t>(i));
  g.covariance = sigma;
  for (std::size_t k = 0; k < sigma.size(); ++k) g.labels.push_back("G" + std::to_string(k));
  return g;
}

SynthData generate(const SynthConfig& config) {
  config.validate();
  const auto n = static_cast<Index>(config.n_stores);
  const auto m = static_cast<Index>(config.n_products);
  const auto T = static_cast<Index>(config.n_weeks);
  const auto k = static_cast<Index>(config.true_rank);

  SynthData out;
  GroundTruth& truth = out.truth;
  std::normal_distribution<double> normal(0.0, 1.0);

  auto factor_rng = stream(config.seed, 1);
  truth.P.resize(n, k);
  truth.store_group.assign(config.n_stores, 0);
  const auto blocks = store_blocks(config.n_stores, config.n_store_groups);
  for (std::size_t g = 0; g < blocks.size(); ++g) {
    const auto size = blocks[g].size();
    const Matrix sigma = equicorrelation(size, size >= 2 ? config.competition_rho : 0.0);
    const Matrix root = symmetric_sqrt(sigma);
    truth.sigma.push_back(sigma);
    for (auto i : blocks[g]) truth.store_group[i] = static_cast<std::uint32_t>(g);
    for (Index l = 0; l < k; ++l) {
      Vector z(static_cast<Index>(size));
      for (Index a = 0; a < z.size(); ++a) z(a) = normal(factor_rng);
      const Vector draw = root * z;
      for (Index a = 0; a < z.size(); ++a)
        truth.P(blocks[g][static_cast<std::size_t>(a)], l) =
            config.factor_mean + config.factor_spread * draw(a);
    }
  }

  truth.Q.resize(m, k);
  for (Index j = 0; j < m; ++j)
    for (Index l = 0; l < k; ++l)
      truth.Q(j, l) = config.factor_mean + config.factor_spread * normal(factor_rng);

  auto time_rng = stream(config.seed, 2);
  normal.reset();
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> phi(static_cast<std::size_t>(k));
  for (auto& p : phi) p = phase(time_rng);
  truth.W.resize(T, k);
  const double omega = 2.0 * std::numbers::pi / static_cast<double>(config.season_period);
  for (Index t = 0; t < T; ++t)
    for (Index l = 0; l < k; ++l)
      truth.W(t, l) = 1.0 + config.trend_scale * static_cast<double>(t) +
                      config.season_amplitude *
                          std::sin(omega * static_cast<double>(t) + phi[static_cast<std::size_t>(l)]) +
                      config.week_noise * normal(time_rng);

  SalesTensor& tensor = out.tensor;
  tensor.n_stores = config.n_stores;
  tensor.n_products = config.n_products;
  tensor.n_weeks = config.n_weeks;
  tensor.week_origin = config.week_origin;
  const std::size_t sw = digits(config.n_stores);
  for (std::size_t i = 0; i < config.n_stores; ++i) tensor.store_ids.push_back("S" + padded(i, sw));
  for (std::size_t j = 0; j < config.n_products; ++j)
    tensor.product_ids.push_back("0-1-" + padded(j / 1000, 5) + "-" + padded(j % 1000, 3));

  auto mask_rng = stream(config.seed, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double clean_sq = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j)
      for (Index t = 0; t < T; ++t)
        if (unit(mask_rng) < config.density) {
          const double y = truth.clean_value(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                                             static_cast<std::size_t>(t));
          clean_sq += y * y;
          tensor.cells.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                                  static_cast<std::uint32_t>(t), y});
        }

  truth.noise_sigma = config.noise_sigma;
  if (config.noise_relative && !tensor.cells.empty())
    truth.noise_sigma *= std::sqrt(clean_sq / static_cast<double>(tensor.cells.size()));
  if (truth.noise_sigma > 0.0) {
    auto noise_rng = stream(config.seed, 4);
    normal.reset();
    for (auto& c : tensor.cells) {
      c.y += truth.noise_sigma * normal(noise_rng);
      if (c.y < 0.0) {
        c.y = 0.0;
        ++truth.truncated_cells;
      }
    }
  }
  return out;
}

void export_iri_csv(const SalesTensor& tensor, const std::filesystem::path& path) {
  if (tensor.empty()) throw ArgumentError("cannot export an empty tensor");
  auto out = csv::open_output(path);
  out << "store,week,syscode,gen,vendor,item,units,dollars\n";
  for (const auto& c : tensor.cells) {
    const std::string& upc = tensor.product_ids.at(c.j);
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t pos; (pos = upc.find('-', start)) != std::string::npos; start = pos + 1)
      parts.push_back(upc.substr(start, pos - start));
    parts.push_back(upc.substr(start));
    if (parts.size() != 4) throw ArgumentError("product id '" + upc + "' is not a 4-part UPC");
    out << tensor.store_ids.at(c.i) << ',' << tensor.week_origin + static_cast<long long>(c.t);
    for (const auto& p : parts) out << ',' << p;
    // Units at a nominal $2.50 price point; the dollars column carries the response.
    out << ',' << std::llround(c.y / 2.5) << ',' << csv::format_exact(c.y) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_ground_truth(const SynthData& data, const SynthConfig& config,
                        const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_matrix_csv(dir / "truth_P.csv", data.truth.P);
  write_matrix_csv(dir / "truth_Q.csv", data.truth.Q);
  write_matrix_csv(dir / "truth_W.csv", data.truth.W);
  const Grouping groups = data.truth.store_grouping();
  std::vector<double> rho;
  for (const auto& members : groups.members)
    rho.push_back(members.size() >= 2 ? config.competition_rho : 0.0);
  write_grouping(dir / "groups.csv", groups, data.tensor.store_ids, "store_id", rho);
  auto cfg = synth_config_to_map(config);
  cfg["noise_sigma_absolute"] = csv::format_exact(data.truth.noise_sigma);
  cfg["truncated_cells"] = std::to_string(data.truth.truncated_cells);
  kv::write_file(dir / "synth.cfg", cfg);
}

std::map<std::string, std::string> synth_config_to_map(const SynthConfig& c) {
  return {
      {"n_stores", std::to_string(c.n_stores)},
      {"n_products", std::to_string(c.n_products)},
      {"n_weeks", std::to_string(c.n_weeks)},
      {"true_rank", std::to_string(c.true_rank)},
      {"n_store_groups", std::to_string(c.n_store_groups)},
      {"competition_rho", csv::format_exact(c.competition_rho)},
      {"density", csv::format_exact(c.density)},
      {"noise_sigma", csv::format_exact(c.noise_sigma)},
      {"noise_relative", c.noise_relative ? "true" : "false"},
      {"season_period", std::to_string(c.season_period)},
      {"trend_scale", csv::format_exact(c.trend_scale)},
      {"season_amplitude", csv::format_exact(c.season_amplitude)},
      {"factor_mean", csv::format_exact(c.factor_mean)},
      {"factor_spread", csv::format_exact(c.factor_spread)},
      {"week_noise", csv::format_exact(c.week_noise)},
      {"week_origin", std::to_string(c.week_origin)},
      {"seed", std::to_string(c.seed)},
  };
}

SynthConfig synth_config_from_map(const std::map<std::string, std::string>& m) {
  SynthConfig c;
  c.n_stores = kv::get_count(m, "n_stores", c.n_stores);
  c.n_products = kv::get_count(m, "n_products", c.n_products);
  c.n_weeks = kv::get_count(m, "n_weeks", c.n_weeks);
  c.true_rank = kv::get_count(m, "true_rank", c.true_rank);
  c.n_store_groups = kv::get_count(m, "n_store_groups", c.n_store_groups);
  c.competition_rho = kv::get_double(m, "competition_rho", c.competition_rho);
  c.density = kv::get_double(m, "density", c.density);
  c.noise_sigma = kv::get_double(m, "noise_sigma", c.noise_sigma);
  c.noise_relative = kv::get_bool(m, "noise_relative", c.noise_relative);
  c.season_period = kv::get_count(m, "season_period", c.season_period);
  c.trend_scale = kv::get_double(m, "trend_scale", c.trend_scale);
  c.season_amplitude = kv::get_double(m, "season_amplitude", c.season_amplitude);
  c.factor_mean = kv::get_double(m, "factor_mean", c.factor_mean);
  c.factor_spread = kv::get_double(m, "factor_spread", c.factor_spread);
  c.week_noise = kv::get_double(m, "week_noise", c.week_noise);
  c.week_origin = kv::get_int(m, "week_origin", c.week_origin);
  c.seed = kv::get_u64(m, "seed", c.seed);
  return c;
}

}  // namespace atlas
