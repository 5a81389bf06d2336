// recpriv: privacy/utility/bias benchmark for implicit-feedback recommenders.
//
// Subcommands: ingest, train, sweep, report, verify. Exit codes: 0 success,
// 1 run failure, 2 usage/input error.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "recpriv/experiment.hpp"
#include "recpriv/fixtures.hpp"
#include "recpriv/parallel.hpp"
#include "recpriv/report.hpp"
#include "recpriv/verify.hpp"

namespace fs = std::filesystem;
using namespace recpriv;

namespace {

std::string schema_footer() {
  std::ostringstream out;
  out << "Config keys (JSON, dotted for --override):\n";
  for (const ConfigKey& k : config_schema()) {
    out << "  " << std::left << std::setw(26) << k.key << std::setw(13) << ("(" + k.type + ")")
        << "default=" << std::setw(12) << (k.default_value.empty() ? "\"\"" : k.default_value)
        << k.doc << "\n";
  }
  out << "\nEnvironment: RECPRIV_OUT_DIR overrides output.dir, RECPRIV_WORKERS overrides\n"
         "sweep.workers, RECPRIV_THREADS caps OpenMP threads.";
  return out.str();
}

ExperimentConfig resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = load_config(config_path);
  for (const std::string& o : overrides) apply_override(cfg, o);
  if (const char* dir = std::getenv("RECPRIV_OUT_DIR"); dir && *dir) cfg.output_dir = dir;
  if (const char* workers = std::getenv("RECPRIV_WORKERS"); workers && *workers)
    cfg.workers = std::max(1, std::atoi(workers));
  cfg.validate();
  return cfg;
}

void print_store_stats(const std::string& name, const InteractionStore& store) {
  std::size_t min_cats = store.item_categories.empty() ? 0 : store.item_categories[0].size();
  std::size_t max_cats = 0, total_cats = 0;
  for (const auto& cats : store.item_categories) {
    min_cats = std::min(min_cats, cats.size());
    max_cats = std::max(max_cats, cats.size());
    total_cats += cats.size();
  }
  const double mean_cats =
      store.num_items == 0 ? 0.0 : static_cast<double>(total_cats) / store.num_items;
  std::ostringstream density;
  density << std::fixed << std::setprecision(2) << store.density() * 100.0 << "%";

  auto row = [](const std::string& label, const std::string& value) {
    std::cout << std::left << std::setw(26) << label << value << "\n";
  };
  std::cout << std::left << std::setw(26) << "" << name << "\n";
  row("Total items", std::to_string(store.num_items));
  row("Total users", std::to_string(store.num_users));
  row("# of interactions", std::to_string(store.num_interactions()));
  row("% of interactions", density.str());
  row("# of item categories", std::to_string(store.category_names.size()));
  row("Min categories per item", std::to_string(min_cats));
  row("Max categories per item", std::to_string(max_cats));
  {
    std::ostringstream mean;
    mean << std::fixed << std::setprecision(2) << mean_cats;
    row("Mean categories per item", mean.str());
  }
}

int cmd_ingest(const ExperimentConfig& cfg) {
  // re-parse from the raw files even when a cache exists
  ParsedRatings parsed;
  if (cfg.dataset.name == "movielens") {
    for (const std::string& p : {cfg.dataset.ratings_path, cfg.dataset.movies_path})
      if (!fs::exists(p)) {
        std::cerr << "error: missing input file: " << p << "\n";
        return 2;
      }
    parsed = parse_movielens(cfg.dataset.ratings_path, cfg.dataset.movies_path);
  } else if (cfg.dataset.name == "yelp") {
    for (const std::string& p : {cfg.dataset.review_path, cfg.dataset.business_path})
      if (!fs::exists(p)) {
        std::cerr << "error: missing input file: " << p << "\n";
        return 2;
      }
    parsed = parse_yelp(cfg.dataset.review_path, cfg.dataset.business_path,
                        cfg.dataset.state_filter);
  } else {
    parsed = fixtures::synthetic_ratings(cfg.dataset.synth_users, cfg.dataset.synth_items,
                                         cfg.dataset.synth_seed);
  }
  if (!parsed.report.errors.empty()) {
    std::cerr << parsed.report.errors.size() << " parse errors ("
              << parsed.report.total_records << " records); first:\n";
    for (std::size_t i = 0; i < std::min<std::size_t>(5, parsed.report.errors.size()); ++i)
      std::cerr << "  line " << parsed.report.errors[i].line << ": "
                << parsed.report.errors[i].message << "\n";
  }
  PreprocessStats stats;
  InteractionStore store = preprocess(parsed, &stats);
  if (cfg.dataset.max_users > 0)
    store = subsample_users(store, static_cast<std::size_t>(cfg.dataset.max_users),
                            cfg.dataset.subsample_seed);
  print_store_stats(cfg.dataset.name, store);
  std::cerr << "preprocess: " << stats.input_ratings << " ratings in, "
            << stats.below_threshold << " below threshold, " << stats.duplicates_collapsed
            << " duplicates, " << stats.filter_rounds << " filter rounds, removed "
            << stats.removed_users << " users / " << stats.removed_items << " items\n";
  if (!cfg.dataset.cache_path.empty()) {
    save_store(store, cfg.dataset.cache_path);
    std::cout << "store cache written: " << cfg.dataset.cache_path << "\n";
  }
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, double budget_flag, bool budget_set,
              std::uint64_t seed_flag, bool seed_set, const std::string& checkpoint) {
  const InteractionStore store = acquire_store(cfg.dataset);
  double budget = 0.0;
  if (regime_from(cfg.regime) != Regime::none)
    budget = budget_set ? budget_flag : cfg.budgets.front();
  const std::uint64_t seed = seed_set ? seed_flag : cfg.seeds.front();
  RunRecord record = run_one(cfg, store, budget, seed, checkpoint);
  const fs::path records_dir = fs::path(cfg.output_dir) / "records";
  fs::create_directories(records_dir);
  const fs::path target = records_dir / (record.fingerprint + ".json");
  {
    std::ofstream out(target);
    out << record.to_json() << "\n";
  }
  std::cout << "run " << record.fingerprint << ": " << record.model << "/" << record.regime
            << " budget=" << budget << " seed=" << seed << "\n";
  if (record.failed) {
    std::cerr << "run failed: " << record.error << "\n";
    return 1;
  }
  std::cout << "  epochs=" << record.epochs << " (best " << record.best_epoch << ")"
            << " realized_eps="
            << (std::isinf(record.realized_epsilon) ? std::string("inf")
                                                    : std::to_string(record.realized_epsilon))
            << " ndcg@" << record.metrics.k << "=" << record.metrics.overall.ndcg << "\n"
            << "  record: " << target.string() << "\n";
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  const InteractionStore store = acquire_store(cfg.dataset);
  const std::vector<RunRecord> records = sweep(cfg, store);
  const std::size_t failed =
      static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                             [](const RunRecord& r) { return r.failed; }));
  std::cout << records.size() << " runs (" << failed << " failed), records under "
            << (fs::path(cfg.output_dir) / "records").string() << "\n";
  if (failed == records.size()) {
    std::cerr << "every run failed; first error: " << records.front().error << "\n";
    return 1;
  }
  // aggregate NDCG table to stdout, full CSVs to the reports directory
  std::cout << std::left << std::setw(10) << "budget" << std::setw(16) << "realized_eps"
            << std::setw(12) << "ndcg mean" << std::setw(12) << "ndcg std" << "n\n";
  for (const AggregateRow& row : aggregate_records(records)) {
    if (row.metric != "ndcg" || row.group != "overall") continue;
    std::ostringstream eps;
    if (std::isinf(row.realized_epsilon)) eps << "inf";
    else eps << std::setprecision(4) << row.realized_epsilon;
    std::cout << std::left << std::setw(10) << row.budget << std::setw(16) << eps.str()
              << std::setw(12) << std::setprecision(4) << row.mean << std::setw(12)
              << (row.n > 1 ? std::to_string(row.std_dev) : "") << row.n << "\n";
  }
  const auto files = write_reports(records, (fs::path(cfg.output_dir) / "reports").string());
  std::cout << files.size() << " report files under "
            << (fs::path(cfg.output_dir) / "reports").string() << "\n";
  return failed ? 1 : 0;
}

int cmd_report(const std::string& records_dir, const std::string& out_dir) {
  const std::vector<RunRecord> records = load_records(records_dir);
  if (records.empty()) {
    std::cerr << "error: no records under " << records_dir << "\n";
    return 2;
  }
  const auto files = write_reports(records, out_dir);
  for (const std::string& f : files) std::cout << f << "\n";
  return 0;
}

int cmd_verify() {
  const auto results = verify::run_all();
  bool ok = true;
  for (const verify::SuiteResult& r : results) {
    std::cout << std::left << std::setw(22) << r.name << (r.passed ? "PASS" : "FAIL")
              << std::right << std::setw(10) << std::fixed << std::setprecision(1) << r.ms
              << " ms";
    if (!r.detail.empty()) std::cout << "  " << r.detail;
    std::cout << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"privacy/utility/bias benchmark for implicit-feedback recommenders"};
  app.footer(schema_footer());
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 0;
  bool serial = false;

  auto add_config_opts = [&](CLI::App* sub, bool required) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required(required);
    sub->add_option("--override", overrides, "config override key=value (repeatable)");
    sub->add_option("--threads", threads, "OpenMP thread cap (0 = default)");
    sub->add_flag("--serial", serial, "force the serial reference kernels");
  };

  CLI::App* ingest = app.add_subcommand("ingest", "parse + preprocess a dataset, print stats");
  add_config_opts(ingest, true);

  CLI::App* train_cmd = app.add_subcommand("train", "one training run");
  add_config_opts(train_cmd, true);
  double budget = 0.0;
  std::uint64_t seed = 0;
  std::string checkpoint;
  CLI::Option* budget_opt =
      train_cmd->add_option("--budget", budget, "budget point (sigma for dpsgd, eps for ldp)");
  CLI::Option* seed_opt = train_cmd->add_option("--seed", seed, "run seed");
  train_cmd->add_option("--checkpoint", checkpoint, "write the trained model here");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "budgets x seeds grid, records + reports");
  add_config_opts(sweep_cmd, true);

  CLI::App* report_cmd = app.add_subcommand("report", "CSV tables + SVG charts from records");
  std::string records_dir, reports_out;
  report_cmd->add_option("--records", records_dir, "records directory")->required();
  report_cmd->add_option("--out", reports_out, "output directory (default: sibling reports/)");

  CLI::App* verify_cmd = app.add_subcommand("verify", "run the built-in property suites");
  verify_cmd->add_option("--threads", threads, "OpenMP thread cap (0 = default)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (const char* t = std::getenv("RECPRIV_THREADS"); t && *t && threads == 0)
    threads = std::atoi(t);
  if (threads > 0) par::set_num_threads(threads);

  try {
    if (app.got_subcommand(verify_cmd)) return cmd_verify();
    if (app.got_subcommand(report_cmd)) {
      const std::string out = reports_out.empty()
                                  ? (fs::path(records_dir).parent_path() / "reports").string()
                                  : reports_out;
      return cmd_report(records_dir, out);
    }
    ExperimentConfig cfg = resolve_config(config_path, overrides);
    cfg.train.serial = serial;
    if (app.got_subcommand(ingest)) return cmd_ingest(cfg);
    if (app.got_subcommand(train_cmd))
      return cmd_train(cfg, budget, budget_opt->count() > 0, seed, seed_opt->count() > 0,
                       checkpoint);
    if (app.got_subcommand(sweep_cmd)) return cmd_sweep(cfg);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    const std::string what = e.what();
    std::cerr << "error: " << what << "\n";
    // input problems exit 2, runtime failures exit 1
    return what.find("cannot open") != std::string::npos ||
                   what.find("missing") != std::string::npos ||
                   what.find("mismatch") != std::string::npos
               ? 2
               : 1;
  }
  return 2;
}
