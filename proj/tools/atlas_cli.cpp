#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "atlas/context.hpp"
#include "atlas/csv.hpp"
#include "atlas/error.hpp"
#include "atlas/eval.hpp"
#include "atlas/keyvalue.hpp"
#include "atlas/model_io.hpp"
#include "atlas/pipeline.hpp"
#include "atlas/synthgen.hpp"

namespace fs = std::filesystem;
using namespace atlas;

namespace {

constexpr const char* kDefaultModelDir = "atlas_model";

const std::map<std::string, std::string>& config_help() {
  static const std::map<std::string, std::string> help = {
      {"k", "latent rank"},
      {"lambda1", "store demand-dynamics weight"},
      {"lambda1_star", "product demand-dynamics weight"},
      {"lambda2", "ridge weight"},
      {"lambda3", "end-to-end coupling weight (0: two-step)"},
      {"window", "forecaster lag window"},
      {"max_iters", "maximum BCD cycles"},
      {"tol", "stop when the relative loss improvement falls to this"},
      {"seed", "random seed"},
      {"forecaster", "sarima | lstm | last_value"},
      {"season", "SARIMA season length in weeks"},
      {"sarima_grid", "'default' or ';'-separated specs such as (1,0,0);(0,1,1)(0,1,0)_52"},
      {"lstm_hidden", "LSTM hidden size"},
      {"lstm_epochs", "LSTM training epochs"},
      {"lstm_lr", "LSTM learning rate"},
      {"lstm_clip", "LSTM gradient-norm clip"},
      {"lstm_shared", "one LSTM for all latent dimensions"},
      {"horizon", "forecast horizon in weeks"},
      {"split", "train_end,valid_end,test_end in week offsets, or 'auto'"},
      {"standardize", "none | zscore | log1p"},
      {"full_grid", "forecast every store x product pair in the test window"},
      {"tune_k", "tuning grid for k"},
      {"tune_lambda1", "tuning grid for lambda1 (= lambda1_star)"},
      {"tune_lambda2", "tuning grid for lambda2"},
      {"tune_full", "exhaustive grid instead of coordinate-wise search"},
      {"eigen_floor", "covariance eigenvalue floor"},
      {"direct_solve_limit", "largest group system solved directly"},
  };
  return help;
}

bool is_bool_key(const std::string& key) {
  return key == "lstm_shared" || key == "full_grid" || key == "tune_full";
}

std::string flag_name(const std::string& key) {
  std::string out = "--" + key;
  std::replace(out.begin(), out.end(), '_', '-');
  return out;
}

// Pipeline config assembled from (lowest to highest precedence) a base map,
// a --config file and individual flags.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> text;
  std::map<std::string, bool> flags;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "key=value pipeline config file")->check(CLI::ExistingFile);
    for (const auto& key : config_keys()) {
      const auto& help = config_help().at(key);
      if (is_bool_key(key))
        options[key] = cmd->add_flag(flag_name(key), flags[key], help);
      else
        options[key] = cmd->add_option(flag_name(key), text[key], help);
    }
  }

  kv::Map merged(kv::Map base = {}) const {
    if (!file.empty())
      for (const auto& [k, v] : kv::read_file(file)) base[k] = v;
    for (const auto& [key, opt] : options)
      if (opt->count() > 0)
        base[key] = is_bool_key(key) ? (flags.at(key) ? "true" : "false") : text.at(key);
    return base;
  }

  PipelineConfig build(kv::Map base = {}) const { return config_from_map(merged(std::move(base))); }
};

struct DataFlags {
  std::string data;
  std::string store_groups, product_groups, store_cov, product_cov, context;

  void attach(CLI::App* cmd, bool required = true) {
    auto* d = cmd->add_option("--data", data,
                              "generated directory, ingested tensor CSV or raw extract CSV");
    if (required) d->required();
    cmd->add_option("--store-groups", store_groups,
                    "store group CSV (default: groups.csv next to the data)");
    cmd->add_option("--product-groups", product_groups, "product group CSV");
    cmd->add_option("--store-covariance", store_cov, "per-group store covariance file");
    cmd->add_option("--product-covariance", product_cov, "per-group product covariance file");
    cmd->add_option("--context", context, "context features CSV (store_id,product_id,week,...)");
  }
};

struct Dataset {
  SalesTensor tensor;
  GroupStructure groups;
  std::optional<ContextFeatures> context;
  fs::path source;

  const ContextFeatures* context_ptr() const { return context ? &*context : nullptr; }
};

SalesTensor load_tensor(const fs::path& path) {
  if (fs::exists(meta_path_for(path))) return import_tensor(path).tensor;
  const auto ingested = ingest_csv(path);
  if (!ingested.rejected.empty())
    spdlog::warn("{}: {} malformed row(s) skipped", path.string(), ingested.rejected.size());
  return build_tensor(ingested.transactions);
}

Dataset load_dataset(const DataFlags& f) {
  Dataset d;
  fs::path path = f.data;
  fs::path dir = path.parent_path();
  if (fs::is_directory(path)) {
    dir = path;
    if (fs::exists(path / "tensor.csv"))
      path = path / "tensor.csv";
    else if (fs::exists(path / "sales.csv"))
      path = path / "sales.csv";
    else
      throw IoError(f.data + ": directory holds neither tensor.csv nor sales.csv");
  } else if (!fs::exists(path)) {
    throw IoError(f.data + ": no such file or directory");
  }
  d.source = fs::absolute(path);
  d.tensor = load_tensor(path);
  d.tensor.validate();

  auto opt_path = [](const std::string& s) -> std::optional<fs::path> {
    if (s.empty()) return std::nullopt;
    return fs::path(s);
  };
  fs::path store_file = f.store_groups;
  if (store_file.empty() && fs::exists(dir / "groups.csv")) store_file = dir / "groups.csv";
  d.groups.stores = store_file.empty()
                        ? Grouping::singletons(d.tensor.n_stores)
                        : read_grouping(store_file, d.tensor.store_index(), d.tensor.n_stores,
                                        opt_path(f.store_cov));
  if (!f.product_groups.empty())
    d.groups.products = read_grouping(f.product_groups, d.tensor.product_index(),
                                      d.tensor.n_products, opt_path(f.product_cov));
  if (!f.context.empty()) d.context = read_context_features(f.context, d.tensor);
  return d;
}

void print_forecast_summary(const std::vector<ForecastCell>& cells, const SalesTensor& tensor,
                            const fs::path& out) {
  std::cout << "forecasts: " << cells.size() << " cells -> " << out.string() << '\n';
  if (cells.empty()) return;
  const auto [lo, hi] = std::minmax_element(
      cells.begin(), cells.end(), [](const ForecastCell& a, const ForecastCell& b) { return a.t < b.t; });
  std::cout << "weeks: " << tensor.week_origin + static_cast<long long>(lo->t) << ".."
            << tensor.week_origin + static_cast<long long>(hi->t) << '\n';
  const auto pairs = observed_pairs(cells);
  if (!pairs.empty())
    std::cout << "rmse=" << csv::format_exact(rmse(pairs)) << " mae=" << csv::format_exact(mae(pairs))
              << " observed=" << pairs.size() << '\n';
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

// --- subcommands -----------------------------------------------------------

struct GenerateArgs {
  std::string out, config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> stores, products, weeks, rank, groups;
  std::optional<double> rho, density, noise;
  bool noise_relative = false;
};

int cmd_generate(const GenerateArgs& a) {
  SynthConfig c;
  if (!a.config.empty()) c = synth_config_from_map(kv::read_file(a.config));
  if (a.seed) c.seed = *a.seed;
  if (a.stores) c.n_stores = *a.stores;
  if (a.products) c.n_products = *a.products;
  if (a.weeks) c.n_weeks = *a.weeks;
  if (a.rank) c.true_rank = *a.rank;
  if (a.groups) c.n_store_groups = *a.groups;
  if (a.rho) c.competition_rho = *a.rho;
  if (a.density) c.density = *a.density;
  if (a.noise) c.noise_sigma = *a.noise;
  if (a.noise_relative) c.noise_relative = true;
  const auto data = generate(c);
  fs::create_directories(a.out);
  const fs::path out(a.out);
  export_iri_csv(data.tensor, out / "sales.csv");
  write_ground_truth(data, c, out);
  std::cout << "generated " << data.tensor.n_stores << "x" << data.tensor.n_products << "x"
            << data.tensor.n_weeks << " tensor with " << data.tensor.cells.size() << " cells -> "
            << out.string() << '\n';
  return 0;
}

struct IngestArgs {
  std::string input, out;
  std::size_t min_store = 0, min_product = 0;
  bool iri = false;
};

int cmd_ingest(const IngestArgs& a) {
  const auto r = ingest_csv(a.input);
  const std::size_t ms = a.iri ? kIriMinStoreTransactions : a.min_store;
  const std::size_t mp = a.iri ? kIriMinProductTransactions : a.min_product;
  const auto tensor = build_tensor(r.transactions, ms, mp);
  ensure_parent(a.out);
  export_tensor(tensor, a.out);
  std::cout << "read " << r.transactions.size() << " rows, rejected " << r.rejected.size() << '\n';
  for (std::size_t n = 0; n < std::min<std::size_t>(r.rejected.size(), 5); ++n)
    std::cout << "  line " << r.rejected[n].line << ": " << r.rejected[n].reason << '\n';
  std::cout << "tensor " << tensor.n_stores << "x" << tensor.n_products << "x" << tensor.n_weeks
            << " with " << tensor.cells.size() << " cells -> " << a.out << '\n';
  return 0;
}

void save_fitted(const fs::path& dir, const FactorModel& model, const PipelineConfig& config,
                 const fs::path& source) {
  fs::create_directories(dir);
  auto meta = config_to_map(config);
  meta["data"] = source.string();
  save_model(dir / "model.txt", model, meta);
  write_loss_trace(dir / "loss.csv", model.loss_trace);
  kv::write_file(dir / "config.cfg", config_to_map(config));
}

int cmd_fit(const DataFlags& df, const ConfigFlags& cf, const std::string& model_dir) {
  const auto d = load_dataset(df);
  const auto config = cf.build();
  const auto fitted = fit_model(d.tensor, d.groups, config, d.context_ptr());
  save_fitted(model_dir, fitted.model, config, d.source);
  std::cout << "fit: k=" << config.hp.k << " iterations=" << fitted.model.iterations_run
            << " converged=" << (fitted.model.converged ? "yes" : "no")
            << " loss=" << csv::format_exact(fitted.model.final_loss) << '\n'
            << "train weeks < " << fitted.split.train_end << ", model -> " << model_dir << '\n';
  return 0;
}

int cmd_forecast(DataFlags df, const ConfigFlags& cf, const std::string& model_dir,
                 std::string out) {
  const fs::path model_path = fs::path(model_dir) / "model.txt";
  if (!fs::exists(model_path))
    throw IoError(model_path.string() + ": no fitted model (run `atlas fit` first)");
  auto loaded = load_model(model_path);
  kv::Map base;
  for (const auto& key : config_keys())
    if (auto it = loaded.metadata.find(key); it != loaded.metadata.end()) base[key] = it->second;
  const auto fitted_config = config_from_map(base);
  const auto config = cf.build(base);
  if (df.data.empty()) {
    const auto it = loaded.metadata.find("data");
    if (it == loaded.metadata.end()) throw ArgumentError("model has no data path; pass --data");
    df.data = it->second;
  }
  const auto d = load_dataset(df);
  if (config.split_for(d.tensor.n_weeks).train_end !=
      fitted_config.split_for(d.tensor.n_weeks).train_end)
    throw ArgumentError("horizon/split change moves the training window the model was fitted on; "
                        "refit with the new --horizon or --split");
  const auto r = run_forecast(d.tensor, loaded.model, config, d.context_ptr());
  if (out.empty()) out = (fs::path(model_dir) / "forecasts.csv").string();
  ensure_parent(out);
  write_forecasts(out, r.forecasts, d.tensor);
  print_forecast_summary(r.forecasts, d.tensor, out);
  if (!r.fallback_dimensions.empty())
    std::cout << "fallback dimensions: " << r.fallback_dimensions.size() << '\n';
  return 0;
}

int cmd_evaluate(const std::string& path) {
  auto in = csv::open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path + ": empty file");
  const auto header = csv::split_record(csv::chomp(line));
  const auto col = [&](const char* name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError(path + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t yh = col("y_hat"), yt = col("y_true");
  Pairs pairs;
  std::size_t line_no = 1, skipped = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::chomp(line).empty()) continue;
    const auto f = csv::split_record(csv::chomp(line));
    if (f.size() <= std::max(yh, yt))
      throw SchemaError(path + ":" + std::to_string(line_no) + ": too few fields");
    if (f[yt].empty()) {
      ++skipped;
      continue;
    }
    const auto a = csv::parse_double(f[yt]);
    const auto b = csv::parse_double(f[yh]);
    if (!a || !b) throw SchemaError(path + ":" + std::to_string(line_no) + ": bad number");
    pairs.emplace_back(*a, *b);
  }
  if (pairs.empty()) throw ArgumentError(path + ": no rows with y_true");
  std::cout << "rmse=" << csv::format_exact(rmse(pairs)) << '\n'
            << "mae=" << csv::format_exact(mae(pairs)) << '\n'
            << "cells=" << pairs.size() << '\n';
  if (skipped) std::cout << "unobserved=" << skipped << '\n';
  return 0;
}

int cmd_tune(const DataFlags& df, const ConfigFlags& cf, const std::string& out) {
  const auto d = load_dataset(df);
  const auto config = cf.build();
  const auto t = tune(d.tensor, d.groups, config, d.context_ptr());
  const fs::path dir(out);
  fs::create_directories(dir);
  write_leaderboard(dir / "leaderboard.csv", t.leaderboard);
  save_fitted(dir, t.result.model, t.best, d.source);
  write_forecasts(dir / "forecasts.csv", t.result.forecasts, d.tensor);
  std::cout << "evaluated " << t.leaderboard.size() << " configurations\n"
            << "best: k=" << t.best.hp.k << " lambda1=" << csv::format_exact(t.best.hp.lambda1)
            << " lambda2=" << csv::format_exact(t.best.hp.lambda2)
            << " valid_rmse=" << csv::format_exact(t.leaderboard.front().valid_rmse) << '\n';
  print_forecast_summary(t.result.forecasts, d.tensor, dir / "forecasts.csv");
  return 0;
}

int cmd_compare(const DataFlags& df, const ConfigFlags& cf, const std::string& methods,
                const CompareOptions& options, const std::string& out) {
  const auto d = load_dataset(df);
  const auto config = cf.build();
  const auto report = compare(d.tensor, d.groups, parse_method_list(methods), config, options);
  const fs::path dir(out);
  fs::create_directories(dir);
  write_report_csv(dir / "report.csv", report);
  write_gnuplot_data(dir / "report.dat", report);
  const auto text = format_report(report);
  {
    auto f = csv::open_output(dir / "report.txt");
    f << text;
  }
  for (const auto& row : report.rows)
    if (row.error.empty()) write_forecasts(dir / ("forecasts_" + row.method + ".csv"), row.forecasts, d.tensor);
  std::cout << text;
  const bool any = std::any_of(report.rows.begin(), report.rows.end(),
                               [](const EvalRow& r) { return r.error.empty(); });
  return any ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("atlas"));
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"Demand-aware tensor factorization and latent-factor sales forecasting"};
  app.require_subcommand(1);
  app.fallthrough();
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "errors only");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic sales extract with ground truth");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--seed", gen.seed, "random seed");
  g->add_option("--config", gen.config, "key=value generator config")->check(CLI::ExistingFile);
  g->add_option("--stores", gen.stores, "number of stores");
  g->add_option("--products", gen.products, "number of products");
  g->add_option("--weeks", gen.weeks, "number of weeks");
  g->add_option("--rank", gen.rank, "true latent rank");
  g->add_option("--groups", gen.groups, "number of store groups");
  g->add_option("--rho", gen.rho, "within-group correlation");
  g->add_option("--density", gen.density, "fraction of observed cells");
  g->add_option("--noise", gen.noise, "noise standard deviation");
  g->add_flag("--noise-relative", gen.noise_relative, "noise as a fraction of the signal RMS");

  IngestArgs ing;
  auto* i = app.add_subcommand("ingest", "build a tensor from a raw store-week extract");
  i->add_option("--input", ing.input, "raw extract CSV")->required()->check(CLI::ExistingFile);
  i->add_option("--out", ing.out, "tensor CSV (a .meta file is written next to it)")->required();
  i->add_option("--min-store-txns", ing.min_store, "drop stores with fewer rows");
  i->add_option("--min-product-txns", ing.min_product, "drop products with fewer rows");
  i->add_flag("--iri-screening", ing.iri, "use the 1000 / 200 transaction thresholds");

  DataFlags fit_data;
  ConfigFlags fit_cfg;
  std::string fit_model_dir = kDefaultModelDir;
  auto* f = app.add_subcommand("fit", "fit factors on the training weeks");
  fit_data.attach(f);
  fit_cfg.attach(f);
  f->add_option("--model", fit_model_dir, "model output directory")->capture_default_str();

  DataFlags fc_data;
  ConfigFlags fc_cfg;
  std::string fc_model_dir = kDefaultModelDir, fc_out;
  auto* fc = app.add_subcommand("forecast", "extend W and predict the test window");
  fc_data.attach(fc, false);
  fc_cfg.attach(fc);
  fc->add_option("--model", fc_model_dir, "fitted model directory")->capture_default_str();
  fc->add_option("--out", fc_out, "forecast CSV (default: <model>/forecasts.csv)");

  std::string eval_path;
  auto* e = app.add_subcommand("evaluate", "RMSE and MAE of a forecast CSV with y_true");
  e->add_option("--forecasts,forecasts", eval_path, "forecast CSV")->required()->check(CLI::ExistingFile);

  DataFlags tune_data;
  ConfigFlags tune_cfg;
  std::string tune_out = "atlas_tune";
  auto* t = app.add_subcommand("tune", "grid search on the validation window");
  tune_data.attach(t);
  tune_cfg.attach(t);
  t->add_option("--out", tune_out, "output directory")->capture_default_str();

  DataFlags cmp_data;
  ConfigFlags cmp_cfg;
  std::string cmp_methods = "atlas_sarima,cpd_sarima,per_series_sarima,freeze_w";
  std::string cmp_out = "atlas_compare";
  CompareOptions cmp_opts;
  auto* c = app.add_subcommand("compare", "score several methods on the same test cells");
  cmp_data.attach(c);
  cmp_cfg.attach(c);
  c->add_option("--methods", cmp_methods, "comma-separated methods or 'all'")->capture_default_str();
  c->add_flag("--tune", cmp_opts.tune, "tune factor methods on the validation window first");
  c->add_option("--per-series-min-obs", cmp_opts.per_series_min_obs,
                "per-series SARIMA needs this many training weeks")
      ->capture_default_str();
  c->add_option("--out", cmp_out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    if (app.get_subcommands().empty()) std::cerr << app.help();
    return 1;
  }

  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::err : spdlog::level::warn);
  try {
    if (*g) return cmd_generate(gen);
    if (*i) return cmd_ingest(ing);
    if (*f) return cmd_fit(fit_data, fit_cfg, fit_model_dir);
    if (*fc) return cmd_forecast(fc_data, fc_cfg, fc_model_dir, fc_out);
    if (*e) return cmd_evaluate(eval_path);
    if (*t) return cmd_tune(tune_data, tune_cfg, tune_out);
    if (*c) return cmd_compare(cmp_data, cmp_cfg, cmp_methods, cmp_opts, cmp_out);
  } catch (const NumericError& ex) {
    std::cerr << "numeric failure: " << ex.what() << '\n';
    return 2;
  } catch (const ArgumentError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const SchemaError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const IoError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "internal error: " << ex.what() << '\n';
    return 2;
  }
  return 1;
}
