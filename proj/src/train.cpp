#include "recpriv/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <span>
#include <stdexcept>

#include "recpriv/metrics.hpp"
#include "recpriv/parallel.hpp"

namespace recpriv {

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::none: return "none";
    case Regime::dpsgd: return "dpsgd";
    case Regime::ldp: return "ldp";
  }
  return "?";
}

Regime regime_from(std::string_view name) {
  if (name == "none") return Regime::none;
  if (name == "dpsgd") return Regime::dpsgd;
  if (name == "ldp") return Regime::ldp;
  throw std::invalid_argument("unknown privacy regime: " + std::string(name));
}

namespace {

ItemIndex sample_negative(std::span<const ItemIndex> row_sorted, std::int32_t num_items,
                          SplitMix64& rng) {
  std::uniform_int_distribution<ItemIndex> pick(0, num_items - 1);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const ItemIndex j = pick(rng);
    if (!std::binary_search(row_sorted.begin(), row_sorted.end(), j)) return j;
  }
  return -1;  // degenerate row covering (almost) the whole catalog
}

}  // namespace

std::vector<TrainExample> build_epoch_pool(ModelKind kind,
                                           const std::vector<std::vector<ItemIndex>>& rows,
                                           std::int32_t num_items, int neg_ratio,
                                           SplitMix64& rng) {
  std::vector<TrainExample> pool;
  switch (kind) {
    case ModelKind::svd:
    case ModelKind::ncf: {
      for (UserIndex u = 0; u < static_cast<UserIndex>(rows.size()); ++u) {
        const auto& row = rows[u];
        if (static_cast<std::int32_t>(row.size()) >= num_items) continue;
        for (ItemIndex i : row) {
          pool.push_back({u, i, -1, 1.0});
          for (int t = 0; t < neg_ratio; ++t) {
            const ItemIndex j = sample_negative(row, num_items, rng);
            if (j >= 0) pool.push_back({u, j, -1, 0.0});
          }
        }
      }
      break;
    }
    case ModelKind::bpr: {
      for (UserIndex u = 0; u < static_cast<UserIndex>(rows.size()); ++u) {
        const auto& row = rows[u];
        if (static_cast<std::int32_t>(row.size()) >= num_items) continue;
        for (ItemIndex i : row) {
          const ItemIndex j = sample_negative(row, num_items, rng);
          if (j >= 0) pool.push_back({u, i, j, 1.0});
        }
      }
      break;
    }
    case ModelKind::vae: {
      for (UserIndex u = 0; u < static_cast<UserIndex>(rows.size()); ++u)
        pool.push_back({u, 0, -1, 1.0});
      break;
    }
  }
  return pool;
}

namespace {

// fixed monitor set on the test split (negatives drawn once)
std::vector<TrainExample> build_monitor(ModelKind kind, const SplitDataset& split,
                                        const std::vector<std::vector<ItemIndex>>& train_rows,
                                        std::int32_t num_items, int neg_ratio, std::uint64_t seed) {
  SplitMix64 rng(mix_seed(seed, 0x7e57ULL));
  std::vector<TrainExample> monitor;
  switch (kind) {
    case ModelKind::svd:
    case ModelKind::ncf: {
      for (UserIndex u = 0; u < static_cast<UserIndex>(split.test.size()); ++u) {
        if (static_cast<std::int32_t>(train_rows[u].size()) >= num_items) continue;
        for (ItemIndex i : split.test[u]) {
          monitor.push_back({u, i, -1, 1.0});
          for (int t = 0; t < neg_ratio; ++t) {
            const ItemIndex j = sample_negative(train_rows[u], num_items, rng);
            if (j >= 0) monitor.push_back({u, j, -1, 0.0});
          }
        }
      }
      break;
    }
    case ModelKind::bpr: {
      for (UserIndex u = 0; u < static_cast<UserIndex>(split.test.size()); ++u) {
        if (static_cast<std::int32_t>(train_rows[u].size()) >= num_items) continue;
        for (ItemIndex i : split.test[u]) {
          const ItemIndex j = sample_negative(train_rows[u], num_items, rng);
          if (j >= 0) monitor.push_back({u, i, j, 1.0});
        }
      }
      break;
    }
    case ModelKind::vae: {
      for (UserIndex u = 0; u < static_cast<UserIndex>(split.test.size()); ++u)
        if (!split.test[u].empty()) monitor.push_back({u, 0, -1, 1.0});
      break;
    }
  }
  return monitor;
}

double monitor_loss(const ModelState& state, std::span<const TrainExample> monitor,
                    const SplitDataset& split,
                    const std::vector<std::vector<ItemIndex>>& train_rows, bool serial) {
  if (monitor.empty()) return 0.0;
  std::vector<double> losses(monitor.size());
  par::for_each_index(
      monitor.size(),
      [&](std::size_t n) {
        const TrainExample& ex = monitor[n];
        losses[n] = eval_loss(state, ex, train_rows[static_cast<std::size_t>(ex.user)],
                              split.test[static_cast<std::size_t>(ex.user)]);
      },
      serial);
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(losses.size());
}

double validation_ndcg(const ModelState& state, const SplitDataset& split,
                       const std::vector<std::vector<ItemIndex>>& train_rows, int k, bool serial) {
  const std::size_t users = split.train.size();
  std::vector<double> per_user(users);
  par::for_each_index(
      users,
      [&](std::size_t u) {
        const auto rec = recommend_topk(state, static_cast<UserIndex>(u), k, split.train[u],
                                        train_rows[u]);
        per_user[u] = ndcg_at_k(rec, split.valid[u], k);
      },
      serial);
  double sum = 0.0;
  int n = 0;
  for (double v : per_user) {
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

TrainResult train(ModelState state, const InteractionStore& store, const SplitDataset& split,
                  const std::vector<std::vector<ItemIndex>>& train_rows, const TrainConfig& cfg,
                  const PrivacySetup& privacy, std::uint64_t seed) {
  if (train_rows.size() != static_cast<std::size_t>(store.num_users))
    throw std::invalid_argument("train: train_rows size mismatch");
  if (cfg.batch_size <= 0 || cfg.max_epochs <= 0 || cfg.patience <= 0)
    throw std::invalid_argument("train: bad batch_size/max_epochs/patience");
  const bool dp = privacy.regime == Regime::dpsgd;

  TrainResult result;
  result.ledger.noise_multiplier = privacy.noise_multiplier;

  // pool size is a property of the data, so q is fixed before the first step
  std::uint64_t probe_key = mix_seed(seed, 0xb001ULL);
  std::size_t pool_size = 0;
  {
    SplitMix64 probe(mix_seed(probe_key, 0));
    pool_size = build_epoch_pool(state.kind, train_rows, store.num_items, cfg.neg_ratio, probe).size();
  }
  if (pool_size < static_cast<std::size_t>(cfg.batch_size))
    throw std::invalid_argument("train: batch_size exceeds the example pool (" +
                                std::to_string(pool_size) + ")");
  ClipNoiseSpec step_spec;
  step_spec.clip_norm = privacy.clip_norm;
  step_spec.noise_multiplier = privacy.noise_multiplier;
  step_spec.batch_size = cfg.batch_size;
  step_spec.sample_rate = static_cast<double>(cfg.batch_size) / static_cast<double>(pool_size);
  if (dp) step_spec.validate();
  result.ledger.sample_rate = step_spec.sample_rate;

  const std::vector<TrainExample> monitor =
      build_monitor(state.kind, split, train_rows, store.num_items, cfg.neg_ratio, seed);

  std::vector<double> best_params = state.params;
  double best_ndcg = -1.0;
  int stale_valid = 0;
  double lr = cfg.lr;
  double best_monitor = kInf;
  int stale_monitor = 0;
  std::uint64_t global_step = 0;

  std::vector<double> batch_sum(state.param_count());
  std::vector<SparseGrad> slot_grads(static_cast<std::size_t>(cfg.batch_size));
  std::vector<double> slot_loss(static_cast<std::size_t>(cfg.batch_size));
  const double clip_bound_sq =
      std::isfinite(privacy.clip_norm) ? privacy.clip_norm * privacy.clip_norm * (1.0 + 1e-9)
                                       : kInf;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    SplitMix64 pool_rng(mix_seed(probe_key, static_cast<std::uint64_t>(epoch)));
    std::vector<TrainExample> pool =
        build_epoch_pool(state.kind, train_rows, store.num_items, cfg.neg_ratio, pool_rng);
    std::shuffle(pool.begin(), pool.end(), pool_rng);
    const std::size_t steps = pool.size() / static_cast<std::size_t>(cfg.batch_size);

    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    bool blew_up = false;
    std::string blow_up_msg;
    for (std::size_t s = 0; s < steps && !blew_up; ++s) {
      const std::size_t base = s * static_cast<std::size_t>(cfg.batch_size);
      // per-example gradients (and clipping) run in parallel into slots
      std::atomic<bool> failed{false};
      par::for_each_index(
          static_cast<std::size_t>(cfg.batch_size),
          [&](std::size_t b) {
            const TrainExample& ex = pool[base + b];
            const std::uint64_t key =
                mix_seed(mix_seed(mix_seed(seed, 0xd401ULL), static_cast<std::uint64_t>(epoch)),
                         base + b);
            try {
              slot_loss[b] = loss_and_grad_sparse(
                  state, ex, train_rows[static_cast<std::size_t>(ex.user)], key, slot_grads[b]);
              if (dp) {
                slot_grads[b].clip_to(privacy.clip_norm);
                if (slot_grads[b].squared_norm() > clip_bound_sq)
                  throw std::runtime_error("post-clip norm above the bound");
              }
            } catch (const std::exception&) {
              failed.store(true);
            }
          },
          cfg.serial);
      if (failed.load()) {
        blew_up = true;
        blow_up_msg = "non-finite loss or gradient at epoch " + std::to_string(epoch);
        break;
      }

      // serial reduction in slot order keeps runs bitwise reproducible
      std::fill(batch_sum.begin(), batch_sum.end(), 0.0);
      for (int b = 0; b < cfg.batch_size; ++b) {
        loss_sum += slot_loss[static_cast<std::size_t>(b)];
        ++loss_n;
        slot_grads[static_cast<std::size_t>(b)].add_to(batch_sum);
      }
      const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
      for (double& x : batch_sum) x *= inv_b;
      if (dp && privacy.noise_multiplier > 0.0) {
        SplitMix64 noise_rng(mix_seed(mix_seed(seed, 0x9015eULL), global_step));
        std::normal_distribution<double> n01(0.0, 1.0);
        const double sd = privacy.noise_multiplier * privacy.clip_norm * inv_b;
        for (double& x : batch_sum) x += sd * n01(noise_rng);
      }
      sgd_update(state.params, batch_sum, lr, cfg.weight_decay);
      if (dp) result.ledger.record_step();
      ++global_step;
    }
    if (blew_up || !all_finite(state.params)) {
      result.diverged = true;
      result.error = blow_up_msg.empty() ? "non-finite parameters" : blow_up_msg;
      break;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_n == 0 ? 0.0 : loss_sum / static_cast<double>(loss_n);
    stats.test_loss = monitor_loss(state, monitor, split, train_rows, cfg.serial);
    stats.valid_ndcg = validation_ndcg(state, split, train_rows, cfg.eval_k, cfg.serial);
    stats.lr = lr;
    stats.ledger_epsilon = dp ? ledger_epsilon(result.ledger, privacy.delta) : kInf;
    result.log.push_back(stats);

    if (stats.valid_ndcg > best_ndcg + 1e-12) {
      best_ndcg = stats.valid_ndcg;
      best_params = state.params;
      result.best_epoch = epoch;
      stale_valid = 0;
    } else {
      ++stale_valid;
    }
    if (stale_valid >= cfg.patience) break;

    if (cfg.schedule == LrSchedule::plateau) {
      if (stats.test_loss < best_monitor * (1.0 - 1e-4)) {
        best_monitor = stats.test_loss;
        stale_monitor = 0;
      } else if (++stale_monitor >= cfg.lr_interval) {
        lr *= cfg.lr_factor;
        stale_monitor = 0;
      }
    } else if (epoch % cfg.lr_interval == 0) {
      lr *= cfg.lr_factor;
    }
  }

  if (result.best_epoch > 0) state.params = std::move(best_params);
  result.state = std::move(state);
  return result;
}

}  // namespace recpriv
