#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "atlas/error.hpp"
#include "atlas/eval.hpp"
#include "atlas/synthgen.hpp"
#include "tmpdir.hpp"

using namespace atlas;

namespace {

SynthData data(std::uint64_t seed) {
  SynthConfig c;
  c.n_stores = 12;
  c.n_products = 15;
  c.n_weeks = 60;
  c.true_rank = 3;
  c.n_store_groups = 4;
  c.density = 0.6;
  c.noise_sigma = 0.05;
  c.noise_relative = true;
  c.seed = seed;
  return generate(c);
}

PipelineConfig config() {
  PipelineConfig pc;
  pc.hp.k = 3;
  pc.hp.lambda1 = pc.hp.lambda1_star = 0.1;
  pc.hp.lambda2 = 0.1;
  pc.hp.max_iters = 50;
  pc.forecast.season = 1;
  SarimaSpec a, b;
  b.p = 1;
  pc.forecast.grid = {a, b};
  pc.forecast.lstm.epochs = 30;
  pc.forecast.lstm.hidden = 4;
  return pc;
}

GroupStructure groups(const SynthData& d) {
  GroupStructure g;
  g.stores = d.truth.store_grouping();
  return g;
}

}  // namespace

TEST_CASE("rmse and mae") {
  CHECK(rmse({{1.0, 1.0}, {2.0, 2.0}}) == 0.0);
  CHECK(mae({{1.0, 1.0}, {2.0, 2.0}}) == 0.0);
  CHECK(std::abs(rmse({{3.0, 0.0}, {0.0, 4.0}}) - std::sqrt(12.5)) < 1e-15);
  CHECK(std::abs(mae({{3.0, 0.0}, {0.0, 4.0}}) - 3.5) < 1e-15);
  CHECK(std::abs(mae({{3.0, 0.0}, {-4.0, 0.0}}) - 3.5) < 1e-15);
  CHECK_THROWS_AS(rmse({}), ArgumentError);
  CHECK_THROWS_AS(mae({}), ArgumentError);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  Pairs p(40);
  for (auto& [y, f] : p) y = nd(rng), f = nd(rng);
  const double r = rmse(p), m = mae(p);
  std::shuffle(p.begin(), p.end(), rng);
  CHECK(std::abs(rmse(p) - r) < 1e-14);
  CHECK(std::abs(mae(p) - m) < 1e-14);
  CHECK(m <= r + 1e-15);
}

TEST_CASE("method names") {
  for (auto m : all_methods()) CHECK(parse_method(to_string(m)) == m);
  CHECK(parse_method_list("all").size() == 6);
  CHECK(parse_method_list("cpd_sarima,freeze_w") ==
        std::vector<Method>{Method::cpd_sarima, Method::freeze_w});
  CHECK_THROWS_AS(parse_method("var"), ArgumentError);
  CHECK_THROWS_AS(parse_method_list(""), ArgumentError);
}

TEST_CASE("single-method compare equals the direct pipeline run") {
  const auto d = data(1);
  const auto report = compare(d.tensor, groups(d), {Method::cpd_sarima}, config());
  REQUIRE(report.rows.size() == 1);
  PipelineConfig direct = config();
  direct.hp.lambda1 = direct.hp.lambda1_star = 0.0;
  const auto r = run_atlas(d.tensor, groups(d), direct);
  CHECK(report.rows[0].error.empty());
  CHECK(report.rows[0].rmse == rmse_of(r.forecasts));
  CHECK(report.rows[0].iterations == r.model.iterations_run);
}

TEST_CASE("every method scores the same cells; metrics recompute") {
  const auto d = data(2);
  const auto report = compare(d.tensor, groups(d), all_methods(), config());
  REQUIRE(report.rows.size() == all_methods().size());
  const auto hash = report.rows.front().cells_hash;
  for (const auto& row : report.rows) {
    INFO(row.method);
    CHECK(row.error.empty());
    CHECK(row.cells_hash == hash);
    CHECK(row.cells > 0);
    CHECK(row.rmse >= 0.0);
    CHECK(row.mae >= 0.0);
    // One-line independent recomputation.
    double se = 0.0, ae = 0.0;
    for (const auto& c : row.forecasts) se += (c.y_true - c.y_hat) * (c.y_true - c.y_hat), ae += std::abs(c.y_true - c.y_hat);
    CHECK(std::abs(row.rmse - std::sqrt(se / row.cells)) < 1e-12 * (1.0 + row.rmse));
    CHECK(std::abs(row.mae - ae / row.cells) < 1e-12 * (1.0 + row.mae));
  }
  CHECK(report.refit == "train");
  CHECK(report.split.test_end == 60);

  TempDir dir;
  write_report_csv(dir / "r.csv", report);
  write_gnuplot_data(dir / "r.dat", report);
  std::ifstream in(dir / "r.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 1 + report.rows.size());
  const auto text = format_report(report);
  for (auto m : all_methods()) CHECK(text.find(to_string(m)) != std::string::npos);
}

TEST_CASE("a failing method does not stop the others") {
  const auto d = data(3);
  auto pc = config();
  pc.forecast.lstm.learning_rate = -1.0;
  const auto report = compare(d.tensor, groups(d), {Method::atlas_lstm, Method::atlas_sarima}, pc);
  REQUIRE(report.rows.size() == 2);
  CHECK(!report.rows[0].error.empty());
  CHECK(report.rows[1].error.empty());
  CHECK(format_report(report).find("FAILED") != std::string::npos);
}

TEST_CASE("per-series SARIMA: sparse pairs use their train mean") {
  const auto d = data(4);
  auto pc = config();
  const auto cells = per_series_sarima(d.tensor, pc, 1000);
  const auto split = pc.split_for(d.tensor.n_weeks);
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::pair<double, int>> sums;
  for (const auto& c : d.tensor.cells)
    if (c.t < split.train_end) {
      auto& s = sums[{c.i, c.j}];
      s.first += c.y;
      ++s.second;
    }
  REQUIRE(!cells.empty());
  for (const auto& c : cells) {
    const auto it = sums.find({c.i, c.j});
    if (it == sums.end()) continue;
    CHECK(std::abs(c.y_hat - it->second.first / it->second.second) < 1e-9);
  }
  // With enough history the series model runs and still covers every cell.
  const auto fitted = per_series_sarima(d.tensor, pc, 10);
  CHECK(fitted.size() == cells.size());
  CHECK(cells_hash(fitted) == cells_hash(cells));
}

TEST_CASE("tuned compare restricts CPD to lambda1 = 0") {
  const auto d = data(5);
  auto pc = config();
  pc.grid.k = {2, 3};
  pc.grid.lambda1 = {0.0, 1.0};
  pc.grid.lambda2 = {0.1};
  CompareOptions o;
  o.tune = true;
  const auto report = compare(d.tensor, groups(d), {Method::atlas_sarima, Method::cpd_sarima}, pc, o);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[1].config.hp.lambda1 == 0.0);
  CHECK(report.rows[0].config_digest != report.rows[1].config_digest);
}
