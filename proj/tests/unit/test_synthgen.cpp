#include <doctest.h>

#include <cmath>

#include "atlas/data_model.hpp"
#include "atlas/error.hpp"
#include "atlas/keyvalue.hpp"
#include "atlas/synthgen.hpp"
#include "tmpdir.hpp"

using namespace atlas;

namespace {

double correlation(const Vector& a, const Vector& b) {
  const Vector ca = a.array() - a.mean();
  const Vector cb = b.array() - b.mean();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

double mean_within_group_correlation(const GroundTruth& truth) {
  const Grouping g = truth.store_grouping();
  double total = 0.0;
  std::size_t pairs = 0;
  for (const auto& members : g.members)
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        total += correlation(truth.P.row(members[a]).transpose(), truth.P.row(members[b]).transpose());
        ++pairs;
      }
  return total / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("noiseless full tensor reproduces the trilinear form exactly") {
  SynthConfig c;
  c.n_stores = 6;
  c.n_products = 5;
  c.n_weeks = 7;
  c.true_rank = 3;
  c.n_store_groups = 2;
  c.density = 1.0;
  const auto d = generate(c);
  CHECK(d.tensor.cells.size() == 6 * 5 * 7);
  CHECK_NOTHROW(d.tensor.validate());
  for (const auto& cell : d.tensor.cells) {
    double brute = 0.0;
    for (int l = 0; l < 3; ++l)
      brute += d.truth.P(cell.i, l) * d.truth.Q(cell.j, l) * d.truth.W(cell.t, l);
    CHECK(cell.y == brute);
  }
}

TEST_CASE("generation is deterministic and seed-dependent") {
  SynthConfig c;
  c.noise_sigma = 0.1;
  const auto a = generate(c);
  const auto b = generate(c);
  CHECK(a.tensor.cells == b.tensor.cells);
  CHECK(a.truth.P == b.truth.P);
  CHECK(a.truth.W == b.truth.W);
  c.seed = 1;
  CHECK_FALSE(generate(c).tensor.cells == a.tensor.cells);
}

TEST_CASE("rho = 0 leaves within-group factor correlation near zero") {
  SynthConfig c;
  c.n_stores = 200;
  c.n_store_groups = 50;
  c.true_rank = 8;
  c.competition_rho = 0.0;
  c.n_products = 2;
  c.n_weeks = 2;
  c.density = 0.5;
  const auto d = generate(c);
  CHECK(std::abs(mean_within_group_correlation(d.truth)) < 0.1);
}

TEST_CASE("planted competition at the feasible extreme for pairs") {
  // Pairs admit rho = -0.5; the oracle is the plain sample correlation.
  SynthConfig c;
  c.n_stores = 200;
  c.n_store_groups = 100;
  c.true_rank = 64;
  c.competition_rho = -0.5;
  c.n_products = 2;
  c.n_weeks = 2;
  const auto d = generate(c);
  const double r = mean_within_group_correlation(d.truth);
  CHECK(r >= -0.6);
  CHECK(r <= -0.4);
}

TEST_CASE("planted competition in groups of four at the clipped bound") {
  SynthConfig c;
  c.n_stores = 400;
  c.n_store_groups = 100;
  c.true_rank = 64;
  c.competition_rho = -1.0 / 3.0 + 1e-6;
  c.n_products = 2;
  c.n_weeks = 2;
  const auto d = generate(c);
  const double r = mean_within_group_correlation(d.truth);
  // Sample correlations of centered vectors: the bound itself is attained
  // only in expectation; allow the Monte-Carlo spread.
  CHECK(r >= -0.3333 - 0.05);
  CHECK(r <= -0.3333 + 0.05);
}

TEST_CASE("rho = -0.5 is infeasible for groups of four") {
  SynthConfig c;
  c.n_stores = 60;
  c.n_store_groups = 15;
  c.competition_rho = -0.5;
  try {
    generate(c);
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    const std::string what = e.what();
    CHECK(what.find("-1/(4 - 1)") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  SynthConfig c;
  c.density = 0.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.density = 1.5;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.n_store_groups = 61;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.noise_sigma = -1.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.n_stores = c.n_products = c.n_weeks = 1;
  c.n_store_groups = 1;
  c.density = 0.5;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("noise calibration") {
  SynthConfig c;
  c.n_stores = 50;
  c.n_products = 50;
  c.n_weeks = 50;
  c.n_store_groups = 10;
  c.competition_rho = 0.0;
  c.density = 1.0;
  c.noise_sigma = 0.2;
  const auto d = generate(c);
  REQUIRE(d.tensor.cells.size() >= 100000);
  double mse = 0.0;
  for (const auto& cell : d.tensor.cells) {
    const double e = cell.y - d.truth.clean_value(cell.i, cell.j, cell.t);
    mse += e * e;
  }
  mse /= static_cast<double>(d.tensor.cells.size());
  CHECK(mse >= 0.9 * 0.04);
  CHECK(mse <= 1.1 * 0.04);
  CHECK(d.truth.truncated_cells * 1000 < d.tensor.cells.size());
}

TEST_CASE("relative noise scales with the signal RMS") {
  SynthConfig c;
  c.noise_sigma = 0.1;
  c.noise_relative = true;
  const auto d = generate(c);
  double sq = 0.0;
  for (const auto& cell : d.tensor.cells) {
    const double y = d.truth.clean_value(cell.i, cell.j, cell.t);
    sq += y * y;
  }
  const double rms = std::sqrt(sq / static_cast<double>(d.tensor.cells.size()));
  CHECK(d.truth.noise_sigma == doctest::Approx(0.1 * rms).epsilon(1e-12));
}

TEST_CASE("export_iri_csv round trip through ingest and build") {
  TempDir dir;
  SynthConfig c;
  c.n_stores = 8;
  c.n_products = 12;
  c.n_weeks = 10;
  c.n_store_groups = 2;
  c.density = 0.6;
  c.noise_sigma = 0.05;
  const auto d = generate(c);
  export_iri_csv(d.tensor, dir / "sales.csv");
  const auto ingested = ingest_csv(dir / "sales.csv");
  CHECK(ingested.rejected.empty());
  const auto rebuilt = build_tensor(ingested.transactions);
  CHECK(rebuilt.store_ids == d.tensor.store_ids);
  CHECK(rebuilt.product_ids == d.tensor.product_ids);
  CHECK(rebuilt.week_origin == d.tensor.week_origin);
  CHECK(rebuilt.cells == d.tensor.cells);
}

TEST_CASE("export_iri_csv edge cases") {
  TempDir dir;
  SalesTensor one;
  one.n_stores = one.n_products = one.n_weeks = 1;
  one.store_ids = {"S0"};
  one.product_ids = {"0-1-00000-000"};
  one.cells = {{0, 0, 0, 2.5}};
  export_iri_csv(one, dir / "one.csv");
  std::ifstream in(dir / "one.csv");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 2);

  SalesTensor empty = one;
  empty.cells.clear();
  CHECK_THROWS_AS(export_iri_csv(empty, dir / "e.csv"), ArgumentError);
  CHECK_THROWS_AS(export_iri_csv(one, dir / "no_such_dir" / "x.csv"), IoError);
}

TEST_CASE("ground truth and config persistence") {
  TempDir dir;
  SynthConfig c;
  c.n_stores = 8;
  c.n_products = 6;
  c.n_weeks = 9;
  c.n_store_groups = 4;
  c.competition_rho = -0.4;
  c.seed = 77;
  const auto d = generate(c);
  write_ground_truth(d, c, dir.path);
  for (const char* f : {"truth_P.csv", "truth_Q.csv", "truth_W.csv", "groups.csv", "synth.cfg"})
    CHECK(std::filesystem::exists(dir / f));
  const auto back = synth_config_from_map(kv::read_file(dir / "synth.cfg"));
  CHECK(back.seed == 77);
  CHECK(back.competition_rho == -0.4);
  CHECK(generate(back).tensor.cells == d.tensor.cells);
}
