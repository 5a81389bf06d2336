#pragma once

#include <cstdint>
#include <vector>

#include "recpriv/dataset.hpp"
#include "recpriv/dpsgd.hpp"
#include "recpriv/models.hpp"

namespace recpriv {

enum class Regime { none, dpsgd, ldp };

const char* regime_name(Regime r);
Regime regime_from(std::string_view name);

enum class LrSchedule { plateau, step };

struct TrainConfig {
  int batch_size = 256;
  double lr = 0.0005;
  double weight_decay = 1e-5;
  int max_epochs = 400;
  int patience = 6;           // early stop after this many stagnant validation epochs
  LrSchedule schedule = LrSchedule::plateau;
  double lr_factor = 0.1;     // plateau: x0.1 after lr_interval stagnant test-loss epochs
  int lr_interval = 4;        // step (ncf): x lr_factor every lr_interval epochs
  int neg_ratio = 4;          // negatives per positive for svd/ncf
  int eval_k = 10;
  bool serial = false;        // force the serial kernels
};

struct PrivacySetup {
  Regime regime = Regime::none;
  double clip_norm = kInf;       // dpsgd only
  double noise_multiplier = 0.0; // dpsgd only
  double delta = 1e-5;
  double ldp_epsilon = 0.0;      // informational; perturbation happens upstream
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;   // monitor driving the plateau schedule
  double valid_ndcg = 0.0;
  double lr = 0.0;
  double ledger_epsilon = 0.0;
};

struct TrainResult {
  ModelState state;
  std::vector<EpochStats> log;
  PrivacyLedger ledger;
  int best_epoch = -1;
  bool diverged = false;
  std::string error;
};

/// Trains in place on `train_rows` (the true split under none/dpsgd, the
/// perturbed sets under ldp). Under dpsgd every step routes through
/// clip -> aggregate+noise -> update and bumps the ledger; sigma = 0 with an
/// infinite clip norm reproduces the plain-SGD trajectory bit for bit.
TrainResult train(ModelState state, const InteractionStore& store, const SplitDataset& split,
                  const std::vector<std::vector<ItemIndex>>& train_rows, const TrainConfig& cfg,
                  const PrivacySetup& privacy, std::uint64_t seed);

/// One epoch's example pool (positives plus freshly drawn negatives for
/// svd/ncf, (u,i,j) triples for bpr, one row per user for vae).
std::vector<TrainExample> build_epoch_pool(ModelKind kind,
                                           const std::vector<std::vector<ItemIndex>>& rows,
                                           std::int32_t num_items, int neg_ratio,
                                           SplitMix64& rng);

}  // namespace recpriv
