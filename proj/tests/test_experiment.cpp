#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "recpriv/experiment.hpp"
#include "recpriv/report.hpp"

using namespace recpriv;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("recpriv_exp_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// small, fast end-to-end configuration on the synthetic dataset
ExperimentConfig tiny_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.dataset.name = "synthetic";
  cfg.dataset.synth_users = 40;
  cfg.dataset.synth_items = 30;
  cfg.dataset.synth_seed = 5;
  cfg.model_kind = "SVD";
  cfg.dims.latent_dim = 3;
  cfg.regime = "none";
  cfg.train.batch_size = 32;
  cfg.train.lr = 0.05;
  cfg.train.max_epochs = 3;
  cfg.train.patience = 10;
  cfg.train.neg_ratio = 1;
  cfg.k = 5;
  cfg.train.eval_k = 5;
  cfg.seeds = {0, 1};
  cfg.output_dir = out_dir;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("config parsing: defaults, unknown keys, type checks, overrides") {
  const std::string good = R"({
    "dataset": {"name": "synthetic", "synth_users": 50},
    "model": {"kind": "NCF", "dropout": 0.3},
    "privacy": {"regime": "dpsgd", "budgets": [0.5, 1.0], "clip_norm": 2.0},
    "train": {"batch_size": 64, "schedule": "step"},
    "sweep": {"seeds": [0, 1, 2]}
  })";
  ExperimentConfig cfg = config_from_json(good);
  CHECK(cfg.dataset.synth_users == 50);
  CHECK(cfg.model_kind == "NCF");
  CHECK(cfg.dims.dropout == 0.3);
  CHECK(cfg.budgets == std::vector<double>{0.5, 1.0});
  CHECK(cfg.train.batch_size == 64);
  CHECK(cfg.train.schedule == LrSchedule::step);
  CHECK(cfg.seeds.size() == 3);
  CHECK(cfg.train.max_epochs == 400);  // untouched default

  CHECK_THROWS_WITH_AS(config_from_json(R"({"dataset": {"nam": "x"}})"),
                       doctest::Contains("unknown config key"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(R"({"train": {"batch_size": "big"}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(R"({"privacy": {"regime": "dpsgd"}})"),
                  std::invalid_argument);  // nonempty budgets required
  CHECK_THROWS_AS(config_from_json(R"({"privacy": {"regime": "teleport"}})"),
                  std::invalid_argument);

  ExperimentConfig o = config_from_json(good);
  apply_override(o, "model.kind=BPR");
  CHECK(o.model_kind == "BPR");
  CHECK(o.dims.dropout == 0.3);  // only that key changed
  apply_override(o, "privacy.budgets=0.2,0.4,0.8");
  CHECK(o.budgets == std::vector<double>{0.2, 0.4, 0.8});
  CHECK_THROWS_AS(apply_override(o, "nope=1"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(o, "train.batch_size=soon"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(o, "garbage"), std::invalid_argument);
}

TEST_CASE("every schema key has a doc line and the schema accepts its own defaults") {
  for (const ConfigKey& k : config_schema()) {
    CHECK_FALSE(k.key.empty());
    CHECK_FALSE(k.type.empty());
    CHECK_FALSE(k.doc.empty());
  }
  // a config file exercising every key parses cleanly
  std::string all = R"({
    "dataset": {"name":"synthetic","ratings_path":"a","movies_path":"b","review_path":"c",
                "business_path":"d","state_filter":"AZ","cache_path":"e","max_users":10,
                "subsample_seed":1,"synth_users":40,"synth_items":30,"synth_seed":2},
    "model": {"kind":"VAE","latent_dim":4,"gmf_dim":4,"mlp_emb_dim":4,"mlp_hidden1":6,
              "mlp_hidden2":3,"dropout":0.4,"vae_hidden":20,"vae_latent":8},
    "privacy": {"regime":"ldp","budgets":[1.0],"delta":1e-6,"clip_norm":1.5},
    "train": {"batch_size":16,"lr":0.01,"weight_decay":0.0,"max_epochs":5,"patience":3,
              "schedule":"plateau","lr_factor":0.5,"lr_interval":2,"neg_ratio":2},
    "eval": {"k":5},
    "sweep": {"seeds":[0],"workers":2},
    "output": {"dir":"/tmp/recpriv_all_keys"}
  })";
  const ExperimentConfig cfg = config_from_json(all);
  CHECK(cfg.dims.vae_hidden == 20);
  CHECK(cfg.workers == 2);
}

TEST_CASE("fingerprints identify (config, budget, seed) and ignore output location") {
  ExperimentConfig cfg = tiny_config("/tmp/a");
  const std::string fp = cfg.fingerprint(0.5, 1);
  CHECK(fp == cfg.fingerprint(0.5, 1));
  CHECK(fp != cfg.fingerprint(0.5, 2));
  CHECK(fp != cfg.fingerprint(1.0, 1));
  ExperimentConfig moved = cfg;
  moved.output_dir = "/tmp/elsewhere";
  moved.workers = 8;
  CHECK(fp == moved.fingerprint(0.5, 1));
  ExperimentConfig other = cfg;
  other.train.lr *= 2;
  CHECK(fp != other.fingerprint(0.5, 1));
}

TEST_CASE("run_one: baseline records the infinity marker and is fully deterministic") {
  const auto dir = temp_dir("runone");
  ExperimentConfig cfg = tiny_config(dir.string());
  const InteractionStore store = acquire_store(cfg.dataset);
  const RunRecord a = run_one(cfg, store, 0.0, 0);
  REQUIRE_FALSE(a.failed);
  CHECK(std::isinf(a.realized_epsilon));
  CHECK(a.regime == "none");
  CHECK(a.granularity == "interaction");
  CHECK(a.epochs == 3);
  const RunRecord b = run_one(cfg, store, 0.0, 0);
  CHECK(a.metrics.to_json() == b.metrics.to_json());  // end-to-end determinism
  CHECK(a.fingerprint == b.fingerprint);

  // json round-trip, including the inf marker
  const RunRecord back = RunRecord::from_json(a.to_json());
  CHECK(std::isinf(back.realized_epsilon));
  CHECK(back.metrics.to_json() == a.metrics.to_json());
  CHECK(back.seed == a.seed);
  CHECK(back.epoch_log.size() == a.epoch_log.size());
}

TEST_CASE("run_one survives divergence with a failed record") {
  const auto dir = temp_dir("diverge");
  ExperimentConfig cfg = tiny_config(dir.string());
  cfg.train.lr = 1e14;
  const InteractionStore store = acquire_store(cfg.dataset);
  const RunRecord r = run_one(cfg, store, 0.0, 0);
  CHECK(r.failed);
  CHECK_FALSE(r.error.empty());
}

TEST_CASE("sweep: grid size, resume without duplicates, interrupted = uninterrupted") {
  const auto dir = temp_dir("sweep");
  ExperimentConfig cfg = tiny_config(dir.string());
  cfg.regime = "ldp";
  cfg.budgets = {0.5, 2.0};
  cfg.seeds = {0, 1, 2};
  const InteractionStore store = acquire_store(cfg.dataset);

  // interrupted: first run only one budget into the same output dir
  ExperimentConfig partial = cfg;
  partial.budgets = {0.5};
  const auto first = sweep(partial, store);
  CHECK(first.size() == 3);

  const auto resumed = sweep(cfg, store);
  CHECK(resumed.size() == 6);
  std::set<std::string> fingerprints;
  for (const RunRecord& r : resumed) fingerprints.insert(r.fingerprint);
  CHECK(fingerprints.size() == 6);  // no duplicates

  // a fresh, uninterrupted sweep produces the identical record set
  const auto fresh_dir = temp_dir("sweep_fresh");
  ExperimentConfig fresh = cfg;
  fresh.output_dir = fresh_dir.string();
  const auto uninterrupted = sweep(fresh, store);
  REQUIRE(uninterrupted.size() == resumed.size());
  for (std::size_t i = 0; i < resumed.size(); ++i) {
    CHECK(resumed[i].fingerprint == uninterrupted[i].fingerprint);
    CHECK(resumed[i].metrics.to_json() == uninterrupted[i].metrics.to_json());
  }

  // 2 budgets -> 2 aggregate rows per (metric, group) cell
  const auto rows = aggregate_records(resumed);
  int ndcg_overall_rows = 0;
  for (const AggregateRow& r : rows)
    if (r.metric == "ndcg" && r.group == "overall") ++ndcg_overall_rows;
  CHECK(ndcg_overall_rows == 2);
  for (const AggregateRow& r : rows)
    if (r.metric == "ndcg" && r.group == "overall") CHECK(r.n == 3);
}

TEST_CASE("aggregate means and stds come out exactly") {
  RunRecord a, b;
  a.dataset = b.dataset = "synthetic";
  a.model = b.model = "SVD";
  a.regime = b.regime = "ldp";
  a.budget = b.budget = 1.0;
  a.seed = 0;
  b.seed = 1;
  a.realized_epsilon = b.realized_epsilon = 1.0;
  a.metrics.overall.ndcg = 0.4;
  b.metrics.overall.ndcg = 0.6;
  a.metrics.overall.kld = 1.0;
  b.metrics.overall.kld = 1.0;
  const auto rows = aggregate_records({a, b});
  bool saw_ndcg = false;
  for (const AggregateRow& r : rows) {
    if (r.metric == "ndcg" && r.group == "overall") {
      saw_ndcg = true;
      CHECK(r.mean == doctest::Approx(0.5).epsilon(1e-15));
      CHECK(r.std_dev == doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
      CHECK(r.n == 2);
    }
  }
  CHECK(saw_ndcg);
}

TEST_CASE("reports: csv schema, blank std for n=1, svg structure, failure modes") {
  const auto dir = temp_dir("report");
  ExperimentConfig cfg = tiny_config(dir.string());
  cfg.regime = "ldp";
  cfg.budgets = {0.3, 0.6, 1.2, 2.4, 4.8};
  cfg.seeds = {0};
  const InteractionStore store = acquire_store(cfg.dataset);
  auto records = sweep(cfg, store);
  // plus a non-private baseline for the reference line
  ExperimentConfig base = cfg;
  base.regime = "none";
  base.budgets.clear();
  const auto baseline = sweep(base, store);
  records.insert(records.end(), baseline.begin(), baseline.end());

  const auto files = write_reports(records, (dir / "reports").string());
  CHECK_FALSE(files.empty());

  const std::string ndcg_csv = slurp(dir / "reports" / "ndcg.csv");
  CHECK(ndcg_csv.find("dataset,model,regime,budget,realized_epsilon,group,mean,std,n") !=
        std::string::npos);
  // n = 1 -> std column empty: ",," right before the trailing count
  std::istringstream lines(ndcg_csv);
  std::string line;
  std::getline(lines, line);  // header
  int data_rows = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    ++data_rows;
    CHECK(line.substr(line.size() - 3) == ",,1");
  }
  CHECK(data_rows >= 6);  // 5 budgets + baseline, overall group at least

  const std::string svg = slurp(dir / "reports" / "ndcg_synthetic_SVD.svg");
  std::size_t markers = 0;
  for (std::size_t at = svg.find("<circle"); at != std::string::npos;
       at = svg.find("<circle", at + 1))
    ++markers;
  CHECK(markers == 5);  // one marker per ldp budget
  CHECK(svg.find("stroke-dasharray") != std::string::npos);  // baseline reference line

  CHECK_THROWS_AS(write_reports({}, (dir / "r2").string()), std::invalid_argument);
  RunRecord dead;
  dead.failed = true;
  CHECK_THROWS_AS(write_reports({dead}, (dir / "r3").string()), std::invalid_argument);
}

TEST_CASE("aggregates recomputed from persisted records match the stored reports exactly") {
  const auto dir = temp_dir("agg_twice");
  ExperimentConfig cfg = tiny_config(dir.string());
  cfg.regime = "ldp";
  cfg.budgets = {0.5, 1.0};
  const InteractionStore store = acquire_store(cfg.dataset);
  const auto records = sweep(cfg, store);
  write_reports(records, (dir / "reports_a").string());
  const auto reloaded = load_records((dir / "records").string());
  REQUIRE(reloaded.size() == records.size());
  write_reports(reloaded, (dir / "reports_b").string());
  for (const std::string& metric : kReportMetrics) {
    CHECK(slurp(dir / "reports_a" / (metric + ".csv")) ==
          slurp(dir / "reports_b" / (metric + ".csv")));
  }
}

TEST_CASE("dpsgd sweep: realized epsilon decreases strictly in sigma at fixed steps") {
  const auto dir = temp_dir("dpsgd_mono");
  ExperimentConfig cfg = tiny_config(dir.string());
  cfg.regime = "dpsgd";
  cfg.budgets = {0.5, 1.0, 2.0};
  cfg.seeds = {0};
  cfg.clip_norm = 1.0;
  cfg.train.max_epochs = 2;
  cfg.train.patience = 50;  // no early stop: identical step counts across budgets
  const InteractionStore store = acquire_store(cfg.dataset);
  const auto records = sweep(cfg, store);
  REQUIRE(records.size() == 3);
  REQUIRE_FALSE(records[0].failed);
  CHECK(records[0].ledger.steps == records[1].ledger.steps);
  CHECK(records[1].ledger.steps == records[2].ledger.steps);
  CHECK(records[0].realized_epsilon > records[1].realized_epsilon);
  CHECK(records[1].realized_epsilon > records[2].realized_epsilon);
  CHECK(records[0].granularity == "interaction");
}
