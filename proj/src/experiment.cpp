#include "recpriv/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "recpriv/fixtures.hpp"
#include "recpriv/ldp.hpp"
#include "recpriv/parallel.hpp"

namespace recpriv {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json inf_aware(double v) {
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  if (std::isnan(v)) return json();
  return json(v);
}

double inf_aware_read(const json& j, const char* key, double fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (j[key].is_string()) {
    const std::string s = j[key].get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    throw std::runtime_error(std::string("bad numeric field ") + key);
  }
  return j[key].get<double>();
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"dataset.name", "string", "synthetic", "movielens | yelp | synthetic"},
      {"dataset.ratings_path", "string", "", "MovieLens ratings.dat"},
      {"dataset.movies_path", "string", "", "MovieLens movies.dat"},
      {"dataset.review_path", "string", "", "Yelp review JSON-lines"},
      {"dataset.business_path", "string", "", "Yelp business JSON-lines"},
      {"dataset.state_filter", "string", "AZ", "Yelp state code to keep"},
      {"dataset.cache_path", "string", "", "store cache file (read if present, else written)"},
      {"dataset.max_users", "int", "0", "subsample to at most this many users (0 = all)"},
      {"dataset.subsample_seed", "uint", "0", "seed for the user subsample"},
      {"dataset.synth_users", "int", "400", "synthetic dataset: users"},
      {"dataset.synth_items", "int", "200", "synthetic dataset: items"},
      {"dataset.synth_seed", "uint", "7", "synthetic dataset: seed"},
      {"model.kind", "string", "BPR", "SVD | BPR | NCF | VAE"},
      {"model.latent_dim", "int", "5", "svd/bpr embedding size"},
      {"model.gmf_dim", "int", "8", "ncf GMF embedding size"},
      {"model.mlp_emb_dim", "int", "8", "ncf MLP embedding size (tower input = 2x)"},
      {"model.mlp_hidden1", "int", "8", "ncf tower first hidden width"},
      {"model.mlp_hidden2", "int", "4", "ncf tower second hidden width"},
      {"model.dropout", "number", "0.5", "ncf dropout rate"},
      {"model.vae_hidden", "int", "100", "vae hidden width"},
      {"model.vae_latent", "int", "50", "vae latent width"},
      {"privacy.regime", "string", "none", "none | dpsgd | ldp"},
      {"privacy.budgets", "number-list", "", "noise multipliers (dpsgd) or epsilons (ldp)"},
      {"privacy.delta", "number", "1e-05", "delta for the accountant"},
      {"privacy.clip_norm", "number", "1", "per-example l2 clip norm C"},
      {"train.batch_size", "int", "256", "examples per step"},
      {"train.lr", "number", "0.0005", "initial learning rate"},
      {"train.weight_decay", "number", "1e-05", "decoupled l2 decay"},
      {"train.max_epochs", "int", "400", "epoch cap"},
      {"train.patience", "int", "6", "early stop after this many stagnant validation epochs"},
      {"train.schedule", "string", "plateau", "plateau (x lr_factor on stagnant test loss) | step"},
      {"train.lr_factor", "number", "0.1", "learning-rate decay factor"},
      {"train.lr_interval", "int", "4", "stagnant epochs (plateau) or period (step)"},
      {"train.neg_ratio", "int", "4", "negatives per positive for svd/ncf"},
      {"eval.k", "int", "10", "recommendation list length"},
      {"sweep.seeds", "uint-list", "0", "run seeds"},
      {"sweep.workers", "int", "1", "parallel runs"},
      {"output.dir", "string", "out", "records/ and reports/ live here"},
  };
  return schema;
}

void ExperimentConfig::validate() const {
  model_kind_from(model_kind);   // throws on bad values
  const Regime r = regime_from(regime);
  if (r != Regime::none && budgets.empty())
    throw std::invalid_argument("config: privacy.budgets must be nonempty for regime " + regime);
  for (double b : budgets)
    if (!(b > 0.0) || !std::isfinite(b))
      throw std::invalid_argument("config: budgets must be positive finite numbers");
  if (seeds.empty()) throw std::invalid_argument("config: sweep.seeds must be nonempty");
  if (!(delta > 0.0) || delta >= 1.0) throw std::invalid_argument("config: delta must be in (0,1)");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("config: clip_norm must be positive");
  if (k < 1) throw std::invalid_argument("config: eval.k must be >= 1");
  if (workers < 1) throw std::invalid_argument("config: sweep.workers must be >= 1");
  if (train.batch_size < 1 || train.max_epochs < 1 || train.patience < 1 ||
      train.lr_interval < 1 || train.neg_ratio < 0 || !(train.lr > 0.0) ||
      !(train.weight_decay >= 0.0) || !(train.lr_factor > 0.0))
    throw std::invalid_argument("config: bad train section");
  if (schedule != "plateau" && schedule != "step")
    throw std::invalid_argument("config: train.schedule must be plateau or step");
  if (dataset.name != "movielens" && dataset.name != "yelp" && dataset.name != "synthetic")
    throw std::invalid_argument("config: dataset.name must be movielens, yelp or synthetic");
  if (dataset.max_users < 0) throw std::invalid_argument("config: dataset.max_users must be >= 0");
}

std::string ExperimentConfig::canonical_json() const {
  json doc;
  doc["dataset"] = {{"name", dataset.name},
                    {"ratings_path", dataset.ratings_path},
                    {"movies_path", dataset.movies_path},
                    {"review_path", dataset.review_path},
                    {"business_path", dataset.business_path},
                    {"state_filter", dataset.state_filter},
                    {"cache_path", dataset.cache_path},
                    {"max_users", dataset.max_users},
                    {"subsample_seed", dataset.subsample_seed},
                    {"synth_users", dataset.synth_users},
                    {"synth_items", dataset.synth_items},
                    {"synth_seed", dataset.synth_seed}};
  doc["model"] = {{"kind", model_kind},
                  {"latent_dim", dims.latent_dim},
                  {"gmf_dim", dims.gmf_dim},
                  {"mlp_emb_dim", dims.mlp_emb_dim},
                  {"mlp_hidden1", dims.mlp_hidden1},
                  {"mlp_hidden2", dims.mlp_hidden2},
                  {"dropout", dims.dropout},
                  {"vae_hidden", dims.vae_hidden},
                  {"vae_latent", dims.vae_latent}};
  doc["privacy"] = {{"regime", regime},
                    {"budgets", budgets},
                    {"delta", delta},
                    {"clip_norm", clip_norm}};
  doc["train"] = {{"batch_size", train.batch_size},
                  {"lr", train.lr},
                  {"weight_decay", train.weight_decay},
                  {"max_epochs", train.max_epochs},
                  {"patience", train.patience},
                  {"schedule", schedule},
                  {"lr_factor", train.lr_factor},
                  {"lr_interval", train.lr_interval},
                  {"neg_ratio", train.neg_ratio}};
  doc["eval"] = {{"k", k}};
  doc["sweep"] = {{"seeds", seeds}, {"workers", workers}};
  doc["output"] = {{"dir", output_dir}};
  return doc.dump();
}

std::string ExperimentConfig::fingerprint(double budget, std::uint64_t seed) const {
  // workers and output location must not change the run identity
  ExperimentConfig id = *this;
  id.workers = 1;
  id.output_dir = "";
  std::ostringstream key;
  key << id.canonical_json() << "|budget=" << budget << "|seed=" << seed;
  std::ostringstream hex;
  hex << std::hex << fnv1a64(key.str());
  return hex.str();
}

namespace {

// dotted-path access into the parsed JSON with unknown-key rejection
void walk_keys(const json& node, const std::string& prefix, std::vector<std::string>& found) {
  for (auto& [key, value] : node.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object())
      walk_keys(value, path, found);
    else
      found.push_back(path);
  }
}

const ConfigKey* schema_lookup(const std::string& key) {
  for (const ConfigKey& k : config_schema())
    if (k.key == key) return &k;
  return nullptr;
}

void assign_field(ExperimentConfig& cfg, const std::string& key, const json& value) {
  auto want_string = [&]() -> std::string {
    if (!value.is_string()) throw std::invalid_argument("config key " + key + " expects a string");
    return value.get<std::string>();
  };
  auto want_int = [&]() -> int {
    if (!value.is_number_integer()) throw std::invalid_argument("config key " + key + " expects an integer");
    return value.get<int>();
  };
  auto want_uint = [&]() -> std::uint64_t {
    if (!value.is_number_unsigned() && !value.is_number_integer())
      throw std::invalid_argument("config key " + key + " expects a nonnegative integer");
    const auto v = value.get<std::int64_t>();
    if (v < 0) throw std::invalid_argument("config key " + key + " expects a nonnegative integer");
    return static_cast<std::uint64_t>(v);
  };
  auto want_number = [&]() -> double {
    if (!value.is_number()) throw std::invalid_argument("config key " + key + " expects a number");
    return value.get<double>();
  };

  if (key == "dataset.name") cfg.dataset.name = want_string();
  else if (key == "dataset.ratings_path") cfg.dataset.ratings_path = want_string();
  else if (key == "dataset.movies_path") cfg.dataset.movies_path = want_string();
  else if (key == "dataset.review_path") cfg.dataset.review_path = want_string();
  else if (key == "dataset.business_path") cfg.dataset.business_path = want_string();
  else if (key == "dataset.state_filter") cfg.dataset.state_filter = want_string();
  else if (key == "dataset.cache_path") cfg.dataset.cache_path = want_string();
  else if (key == "dataset.max_users") cfg.dataset.max_users = want_int();
  else if (key == "dataset.subsample_seed") cfg.dataset.subsample_seed = want_uint();
  else if (key == "dataset.synth_users") cfg.dataset.synth_users = want_int();
  else if (key == "dataset.synth_items") cfg.dataset.synth_items = want_int();
  else if (key == "dataset.synth_seed") cfg.dataset.synth_seed = want_uint();
  else if (key == "model.kind") cfg.model_kind = want_string();
  else if (key == "model.latent_dim") cfg.dims.latent_dim = want_int();
  else if (key == "model.gmf_dim") cfg.dims.gmf_dim = want_int();
  else if (key == "model.mlp_emb_dim") cfg.dims.mlp_emb_dim = want_int();
  else if (key == "model.mlp_hidden1") cfg.dims.mlp_hidden1 = want_int();
  else if (key == "model.mlp_hidden2") cfg.dims.mlp_hidden2 = want_int();
  else if (key == "model.dropout") cfg.dims.dropout = want_number();
  else if (key == "model.vae_hidden") cfg.dims.vae_hidden = want_int();
  else if (key == "model.vae_latent") cfg.dims.vae_latent = want_int();
  else if (key == "privacy.regime") cfg.regime = want_string();
  else if (key == "privacy.budgets") {
    if (!value.is_array()) throw std::invalid_argument("privacy.budgets expects a number list");
    cfg.budgets = value.get<std::vector<double>>();
  } else if (key == "privacy.delta") cfg.delta = want_number();
  else if (key == "privacy.clip_norm") cfg.clip_norm = want_number();
  else if (key == "train.batch_size") cfg.train.batch_size = want_int();
  else if (key == "train.lr") cfg.train.lr = want_number();
  else if (key == "train.weight_decay") cfg.train.weight_decay = want_number();
  else if (key == "train.max_epochs") cfg.train.max_epochs = want_int();
  else if (key == "train.patience") cfg.train.patience = want_int();
  else if (key == "train.schedule") cfg.schedule = want_string();
  else if (key == "train.lr_factor") cfg.train.lr_factor = want_number();
  else if (key == "train.lr_interval") cfg.train.lr_interval = want_int();
  else if (key == "train.neg_ratio") cfg.train.neg_ratio = want_int();
  else if (key == "eval.k") cfg.k = want_int();
  else if (key == "sweep.seeds") {
    if (!value.is_array()) throw std::invalid_argument("sweep.seeds expects an integer list");
    cfg.seeds.clear();
    for (const json& s : value) {
      const auto v = s.get<std::int64_t>();
      if (v < 0) throw std::invalid_argument("sweep.seeds must be nonnegative");
      cfg.seeds.push_back(static_cast<std::uint64_t>(v));
    }
  } else if (key == "sweep.workers") cfg.workers = want_int();
  else if (key == "output.dir") cfg.output_dir = want_string();
  else throw std::invalid_argument("unknown config key: " + key);
}

json dig(const json& doc, const std::string& dotted) {
  const json* node = &doc;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', pos);
    const std::string part = dotted.substr(pos, dot - pos);
    if (!node->contains(part)) return json();
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  return *node;
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  json doc = json::parse(text);
  if (!doc.is_object()) throw std::invalid_argument("config: top level must be an object");
  std::vector<std::string> keys;
  walk_keys(doc, "", keys);
  for (const std::string& key : keys)
    if (!schema_lookup(key)) throw std::invalid_argument("unknown config key: " + key);
  ExperimentConfig cfg;
  for (const std::string& key : keys) assign_field(cfg, key, dig(doc, key));
  cfg.train.schedule = cfg.schedule == "step" ? LrSchedule::step : LrSchedule::plateau;
  cfg.train.eval_k = cfg.k;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  const ConfigKey* schema = schema_lookup(key);
  if (!schema) throw std::invalid_argument("unknown config key: " + key);

  json value;
  if (schema->type == "string") {
    value = raw;
  } else if (schema->type == "int" || schema->type == "uint" || schema->type == "number") {
    value = json::parse(raw, nullptr, false);
    if (value.is_discarded() || !value.is_number())
      throw std::invalid_argument("override " + key + " expects a " + schema->type);
  } else {  // comma-separated list
    json arr = json::array();
    std::stringstream ss(raw);
    std::string part;
    while (std::getline(ss, part, ',')) {
      json v = json::parse(part, nullptr, false);
      if (v.is_discarded() || !v.is_number())
        throw std::invalid_argument("override " + key + " expects numbers");
      arr.push_back(v);
    }
    if (arr.empty()) throw std::invalid_argument("override " + key + ": empty list");
    value = std::move(arr);
  }
  assign_field(cfg, key, value);
  cfg.train.schedule = cfg.schedule == "step" ? LrSchedule::step : LrSchedule::plateau;
  cfg.train.eval_k = cfg.k;
  cfg.validate();
}

std::string RunRecord::to_json() const {
  json doc;
  doc["fingerprint"] = fingerprint;
  doc["dataset"] = dataset;
  doc["model"] = model;
  doc["regime"] = regime;
  doc["budget"] = budget;
  doc["seed"] = seed;
  doc["realized_epsilon"] = inf_aware(realized_epsilon);
  doc["granularity"] = granularity;
  doc["epochs"] = epochs;
  doc["best_epoch"] = best_epoch;
  doc["wall_seconds"] = wall_seconds;
  doc["failed"] = failed;
  doc["error"] = error;
  doc["metrics"] = json::parse(metrics.to_json());
  doc["ledger"] = {{"steps", ledger.steps},
                   {"sample_rate", ledger.sample_rate},
                   {"noise_multiplier", ledger.noise_multiplier},
                   {"delta", ledger.delta},
                   {"epsilon", inf_aware(ledger.epsilon)}};
  json log = json::array();
  for (const EpochStats& e : epoch_log)
    log.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"test_loss", e.test_loss},
                   {"valid_ndcg", e.valid_ndcg},
                   {"lr", e.lr},
                   {"ledger_epsilon", inf_aware(e.ledger_epsilon)}});
  doc["epoch_log"] = std::move(log);
  return doc.dump(2);
}

RunRecord RunRecord::from_json(const std::string& text) {
  json doc = json::parse(text);
  RunRecord r;
  r.fingerprint = doc.at("fingerprint").get<std::string>();
  r.dataset = doc.at("dataset").get<std::string>();
  r.model = doc.at("model").get<std::string>();
  r.regime = doc.at("regime").get<std::string>();
  r.budget = doc.at("budget").get<double>();
  r.seed = doc.at("seed").get<std::uint64_t>();
  r.realized_epsilon = inf_aware_read(doc, "realized_epsilon", kInf);
  r.granularity = doc.value("granularity", "");
  r.epochs = doc.value("epochs", 0);
  r.best_epoch = doc.value("best_epoch", -1);
  r.wall_seconds = doc.value("wall_seconds", 0.0);
  r.failed = doc.value("failed", false);
  r.error = doc.value("error", "");
  if (doc.contains("metrics")) r.metrics = MetricsReport::from_json(doc["metrics"].dump());
  if (doc.contains("ledger")) {
    const json& l = doc["ledger"];
    r.ledger.steps = l.value("steps", std::uint64_t{0});
    r.ledger.sample_rate = l.value("sample_rate", 1.0);
    r.ledger.noise_multiplier = l.value("noise_multiplier", 0.0);
    r.ledger.delta = l.value("delta", 1e-5);
    r.ledger.epsilon = inf_aware_read(l, "epsilon", kInf);
  }
  if (doc.contains("epoch_log")) {
    for (const json& e : doc["epoch_log"]) {
      EpochStats s;
      s.epoch = e.value("epoch", 0);
      s.train_loss = e.value("train_loss", 0.0);
      s.test_loss = e.value("test_loss", 0.0);
      s.valid_ndcg = e.value("valid_ndcg", 0.0);
      s.lr = e.value("lr", 0.0);
      s.ledger_epsilon = inf_aware_read(e, "ledger_epsilon", kInf);
      r.epoch_log.push_back(s);
    }
  }
  return r;
}

InteractionStore acquire_store(const DatasetSection& dataset, PreprocessStats* stats) {
  InteractionStore store;
  if (!dataset.cache_path.empty() && fs::exists(dataset.cache_path)) {
    store = load_store(dataset.cache_path);
  } else if (dataset.name == "movielens") {
    store = preprocess(parse_movielens(dataset.ratings_path, dataset.movies_path), stats);
  } else if (dataset.name == "yelp") {
    store = preprocess(
        parse_yelp(dataset.review_path, dataset.business_path, dataset.state_filter), stats);
  } else if (dataset.name == "synthetic") {
    store = fixtures::synthetic_store(dataset.synth_users, dataset.synth_items, dataset.synth_seed);
  } else {
    throw std::invalid_argument("unknown dataset: " + dataset.name);
  }
  if (!dataset.cache_path.empty() && !fs::exists(dataset.cache_path))
    save_store(store, dataset.cache_path);
  if (dataset.max_users > 0)
    store = subsample_users(store, static_cast<std::size_t>(dataset.max_users),
                            dataset.subsample_seed);
  return store;
}

namespace {

const char* dp_granularity(ModelKind kind) {
  switch (kind) {
    case ModelKind::svd:
    case ModelKind::ncf: return "interaction";
    case ModelKind::bpr: return "triple";
    case ModelKind::vae: return "user-row";
  }
  return "?";
}

}  // namespace

RunRecord run_one(const ExperimentConfig& cfg, const InteractionStore& store, double budget,
                  std::uint64_t seed, const std::string& checkpoint_path) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const ModelKind kind = model_kind_from(cfg.model_kind);
  const Regime regime = regime_from(cfg.regime);

  RunRecord record;
  record.fingerprint = cfg.fingerprint(budget, seed);
  record.dataset = cfg.dataset.name;
  record.model = model_kind_name(kind);
  record.regime = cfg.regime;
  record.budget = budget;
  record.seed = seed;
  record.granularity = dp_granularity(kind);
  record.ledger.delta = cfg.delta;

  try {
    const SplitDataset split = split_per_user(store, mix_seed(seed, 1));
    const SegmentMap segments = segment(store, split);

    std::vector<std::vector<ItemIndex>> train_rows;
    if (regime == Regime::ldp) {
      LdpSpec spec{budget, mix_seed(seed, 3)};
      train_rows = perturb_training_set(split, store, spec, cfg.train.serial);
    } else {
      train_rows = split.train;
    }

    PrivacySetup privacy;
    privacy.regime = regime;
    privacy.delta = cfg.delta;
    if (regime == Regime::dpsgd) {
      privacy.clip_norm = cfg.clip_norm;
      privacy.noise_multiplier = budget;
    } else if (regime == Regime::ldp) {
      privacy.ldp_epsilon = budget;
    }

    ModelState state = init_model(kind, cfg.dims, store.num_users, store.num_items,
                                  mix_seed(seed, 2));
    TrainResult tr = train(std::move(state), store, split, train_rows, cfg.train, privacy,
                           mix_seed(seed, 4));
    record.epochs = static_cast<int>(tr.log.size());
    record.best_epoch = tr.best_epoch;
    record.epoch_log = tr.log;
    record.ledger.steps = tr.ledger.steps;
    record.ledger.sample_rate = tr.ledger.sample_rate;
    record.ledger.noise_multiplier = tr.ledger.noise_multiplier;
    if (regime == Regime::dpsgd) {
      record.ledger.epsilon = ledger_epsilon(tr.ledger, cfg.delta);
      record.realized_epsilon = record.ledger.epsilon;
    } else if (regime == Regime::ldp) {
      record.ledger.epsilon = budget;
      record.realized_epsilon = budget;
    } else {
      record.ledger.epsilon = kInf;
      record.realized_epsilon = kInf;
    }
    if (tr.diverged) {
      record.failed = true;
      record.error = tr.error;
    } else {
      record.metrics =
          evaluate(tr.state, store, split, segments, cfg.k, train_rows, cfg.train.serial);
      if (!checkpoint_path.empty()) {
        json ledger = {{"steps", record.ledger.steps},
                       {"sample_rate", record.ledger.sample_rate},
                       {"noise_multiplier", record.ledger.noise_multiplier},
                       {"delta", record.ledger.delta},
                       {"epsilon", inf_aware(record.realized_epsilon)}};
        save_checkpoint(tr.state, checkpoint_path, ledger.dump());
      }
    }
  } catch (const std::exception& e) {
    record.failed = true;
    record.error = e.what();
  }
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return record;
}

namespace {

void persist_record(const RunRecord& record, const fs::path& records_dir) {
  fs::create_directories(records_dir);
  const fs::path target = records_dir / (record.fingerprint + ".json");
  const fs::path tmp = records_dir / (record.fingerprint + ".json.tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write record: " + tmp.string());
    out << record.to_json() << '\n';
  }
  fs::rename(tmp, target);
}

}  // namespace

std::vector<RunRecord> sweep(const ExperimentConfig& cfg, const InteractionStore& store) {
  cfg.validate();
  const fs::path records_dir = fs::path(cfg.output_dir) / "records";
  std::vector<double> budgets = cfg.budgets;
  if (regime_from(cfg.regime) == Regime::none) budgets = {0.0};

  struct Cell {
    double budget;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (double b : budgets)
    for (std::uint64_t s : cfg.seeds) cells.push_back({b, s});

  std::vector<RunRecord> records(cells.size());
  std::mutex io_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t at = next.fetch_add(1);
      if (at >= cells.size()) break;
      const Cell& cell = cells[at];
      const std::string fp = cfg.fingerprint(cell.budget, cell.seed);
      const fs::path existing = records_dir / (fp + ".json");
      if (fs::exists(existing)) {
        std::ifstream in(existing);
        std::stringstream buf;
        buf << in.rdbuf();
        records[at] = RunRecord::from_json(buf.str());
        continue;
      }
      RunRecord record = run_one(cfg, store, cell.budget, cell.seed);
      {
        std::lock_guard<std::mutex> lock(io_mutex);
        persist_record(record, records_dir);
      }
      records[at] = std::move(record);
    }
  };
  const int workers = std::max(1, cfg.workers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return records;
}

std::vector<RunRecord> load_records(const std::string& records_dir) {
  std::vector<RunRecord> records;
  if (!fs::exists(records_dir)) return records;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(records_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const fs::path& p : files) {
    std::ifstream in(p);
    std::stringstream buf;
    buf << in.rdbuf();
    records.push_back(RunRecord::from_json(buf.str()));
  }
  return records;
}

}  // namespace recpriv
