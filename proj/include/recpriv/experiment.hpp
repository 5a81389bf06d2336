#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recpriv/dataset.hpp"
#include "recpriv/metrics.hpp"
#include "recpriv/train.hpp"

namespace recpriv {

struct DatasetSection {
  std::string name = "synthetic";  // movielens | yelp | synthetic
  std::string ratings_path;
  std::string movies_path;
  std::string review_path;
  std::string business_path;
  std::string state_filter = "AZ";
  std::string cache_path;  // optional store cache, read when present else written
  int max_users = 0;       // 0 = all; the "mini" profile sets this
  std::uint64_t subsample_seed = 0;
  int synth_users = 400;
  int synth_items = 200;
  std::uint64_t synth_seed = 7;
};

struct ExperimentConfig {
  DatasetSection dataset;
  std::string model_kind = "BPR";
  ModelDims dims;
  std::string regime = "none";       // none | dpsgd | ldp
  std::vector<double> budgets;       // sigma values (dpsgd) or epsilons (ldp)
  double delta = 1e-5;
  double clip_norm = 1.0;
  TrainConfig train;
  std::string schedule = "plateau";  // plateau | step
  int k = 10;
  std::vector<std::uint64_t> seeds = {0};
  int workers = 1;
  std::string output_dir = "out";

  void validate() const;
  std::string canonical_json() const;
  /// Stable id of one (config, budget, seed) cell; names the record file.
  std::string fingerprint(double budget, std::uint64_t seed) const;
};

/// Schema row used for validation, --override type checking and --help.
struct ConfigKey {
  std::string key;
  std::string type;  // "string" | "int" | "uint" | "number" | "number-list" | "uint-list"
  std::string default_value;
  std::string doc;
};
const std::vector<ConfigKey>& config_schema();

ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// key=value with dotted keys; lists take comma-separated values.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

struct LedgerSnapshot {
  std::uint64_t steps = 0;
  double sample_rate = 1.0;
  double noise_multiplier = 0.0;
  double delta = 1e-5;
  double epsilon = kInf;
};

struct RunRecord {
  std::string fingerprint;
  std::string dataset;
  std::string model;
  std::string regime;
  double budget = 0.0;
  std::uint64_t seed = 0;
  double realized_epsilon = kInf;  // inf marks the non-private baseline
  std::string granularity;         // DP example unit: interaction / triple / user-row
  int epochs = 0;
  int best_epoch = -1;
  double wall_seconds = 0.0;
  bool failed = false;
  std::string error;
  MetricsReport metrics;
  LedgerSnapshot ledger;
  std::vector<EpochStats> epoch_log;

  std::string to_json() const;
  static RunRecord from_json(const std::string& text);
};

/// Loads or builds the configured store (cache-aware; applies max_users).
InteractionStore acquire_store(const DatasetSection& dataset, PreprocessStats* stats = nullptr);

/// One training run: split + segments, optional LDP perturbation, training,
/// test evaluation. Divergence produces a failed record, not an exception.
/// A nonempty `checkpoint_path` saves the trained model there.
RunRecord run_one(const ExperimentConfig& cfg, const InteractionStore& store, double budget,
                  std::uint64_t seed, const std::string& checkpoint_path = "");

/// budgets x seeds, resumable by fingerprint; records are persisted under
/// <output_dir>/records atomically. Existing records are not recomputed.
std::vector<RunRecord> sweep(const ExperimentConfig& cfg, const InteractionStore& store);

std::vector<RunRecord> load_records(const std::string& records_dir);

}  // namespace recpriv
