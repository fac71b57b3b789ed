#include <doctest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "atlas/csv.hpp"
#include "atlas/eval.hpp"
#include "tmpdir.hpp"

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const TempDir& dir, const std::string& args) {
  const auto log = dir / "stdout.txt";
  const std::string cmd = "cd '" + dir.path.string() + "' && '" ATLAS_CLI_PATH "' " + args + " > '" +
                          log.string() + "' 2>" + "'" + (dir / "stderr.txt").string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kSmallGen = "generate --seed 7 --out d --stores 12 --products 15 --weeks 60 --groups 4 "
                        "--rho -0.3 --density 0.4 --noise 0.05 --noise-relative";
const char* kGrid = "--sarima-grid '(0,0,0);(1,0,0);(0,1,0)'";

}  // namespace

TEST_CASE("help and usage errors") {
  TempDir dir;
  CHECK(cli(dir, "--help").code == 0);
  for (const char* sub : {"generate", "ingest", "fit", "forecast", "evaluate", "tune", "compare"})
    CHECK(cli(dir, std::string(sub) + " --help").code == 0);
  CHECK(cli(dir, "").code == 1);
  const auto bogus = cli(dir, "frobnicate");
  CHECK(bogus.code == 1);
  CHECK(slurp(dir / "stderr.txt").find("Usage") != std::string::npos);
  CHECK(cli(dir, "fit --data missing_dir").code == 1);
  CHECK(cli(dir, "fit --data missing_dir --no-such-flag").code == 1);
}

TEST_CASE("generate, fit, forecast, evaluate") {
  TempDir dir;
  REQUIRE(cli(dir, kSmallGen).code == 0);
  CHECK(std::filesystem::exists(dir / "d" / "sales.csv"));
  CHECK(std::filesystem::exists(dir / "d" / "groups.csv"));
  CHECK(cli(dir, std::string("fit --data d/ --k 3 --max-iters 30 ") + kGrid).code == 0);
  CHECK(std::filesystem::exists(dir / "atlas_model" / "model.txt"));
  REQUIRE(cli(dir, "forecast --horizon 8").code == 0);
  const auto path = dir / "atlas_model" / "forecasts.csv";
  REQUIRE(std::filesystem::exists(path));

  // Horizon-8 rows only: the last eight weeks of the 60-week tensor.
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "store_id,product_id,week,y_hat,y_true");
  atlas::Pairs pairs;
  long long lo = 1LL << 40, hi = -1;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const auto f = atlas::csv::split_record(line);
    REQUIRE(f.size() == 5);
    const long long w = *atlas::csv::parse_int(f[2]);
    lo = std::min(lo, w);
    hi = std::max(hi, w);
    pairs.emplace_back(*atlas::csv::parse_double(f[4]), *atlas::csv::parse_double(f[3]));
    ++rows;
  }
  CHECK(rows > 0);
  CHECK(hi - lo <= 7);
  CHECK(hi == 1479 + 59);  // default week origin 1479

  const auto eval = cli(dir, "evaluate atlas_model/forecasts.csv");
  CHECK(eval.code == 0);
  CHECK(eval.out.find("rmse=" + atlas::csv::format_exact(atlas::rmse(pairs)) + "\n") !=
        std::string::npos);
  CHECK(eval.out.find("mae=" + atlas::csv::format_exact(atlas::mae(pairs)) + "\n") !=
        std::string::npos);

  // A horizon that moves the training window needs a refit.
  CHECK(cli(dir, "forecast --horizon 4").code == 1);
}

TEST_CASE("byte-identical outputs across runs") {
  TempDir dir;
  REQUIRE(cli(dir, kSmallGen).code == 0);
  const auto sales = slurp(dir / "d" / "sales.csv");
  REQUIRE(cli(dir, kSmallGen).code == 0);
  CHECK(slurp(dir / "d" / "sales.csv") == sales);

  const std::string fit = std::string("fit --data d --k 3 --max-iters 30 --seed 3 ") + kGrid;
  REQUIRE(cli(dir, fit + " --model m1").code == 0);
  REQUIRE(cli(dir, fit + " --model m2").code == 0);
  REQUIRE(cli(dir, "forecast --model m1 --out a.csv").code == 0);
  REQUIRE(cli(dir, "forecast --model m2 --out b.csv").code == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(slurp(dir / "m1" / "model.txt") == slurp(dir / "m2" / "model.txt"));
  CHECK(slurp(dir / "a.csv").size() > 100);
}

TEST_CASE("ingest, tune and compare") {
  TempDir dir;
  REQUIRE(cli(dir, kSmallGen).code == 0);
  REQUIRE(cli(dir, "ingest --input d/sales.csv --out t/tensor.csv").code == 0);
  CHECK(std::filesystem::exists(dir / "t" / "tensor.meta"));
  const auto tuned = cli(dir, std::string("tune --data t/tensor.csv --store-groups d/groups.csv "
                                          "--tune-k 2,3 --tune-lambda1 0,0.1 --tune-lambda2 0.1 "
                                          "--max-iters 20 ") + kGrid);
  CHECK(tuned.code == 0);
  CHECK(std::filesystem::exists(dir / "atlas_tune" / "leaderboard.csv"));
  const auto cmp = cli(dir, std::string("compare --data d --k 3 --max-iters 20 --lstm-epochs 20 "
                                        "--methods all ") + kGrid);
  CHECK(cmp.code == 0);
  for (const char* m : {"atlas_sarima", "atlas_lstm", "cpd_sarima", "cpd_lstm",
                        "per_series_sarima", "freeze_w"})
    CHECK(cmp.out.find(m) != std::string::npos);
  CHECK(std::filesystem::exists(dir / "atlas_compare" / "report.csv"));
  CHECK(std::filesystem::exists(dir / "atlas_compare" / "report.dat"));
  CHECK(cli(dir, "compare --data d --methods var").code == 1);
}

TEST_CASE("numeric failure exits with 2") {
  TempDir dir;
  // Sales so large that the squared loss overflows.
  std::string raw = "store,week,syscode,gen,vendor,item,units,dollars\n";
  for (int s = 0; s < 3; ++s)
    for (int w = 1; w <= 30; ++w)
      for (int p = 0; p < 3; ++p)
        raw += "S" + std::to_string(s) + "," + std::to_string(w) + ",0,1,0," + std::to_string(p) +
               ",1,1e200\n";
  dir.write("huge.csv", raw);
  CHECK(cli(dir, "fit --data huge.csv --k 2 --horizon 4").code == 2);
}
