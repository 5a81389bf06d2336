#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "recpriv/fixtures.hpp"
#include "recpriv/ldp.hpp"
#include "recpriv/train.hpp"

using namespace recpriv;

namespace {

// 20 users x 20 items with planted block structure: the first half of the
// users likes the first half of the items, and vice versa
InteractionStore blocky_store() {
  InteractionStore store;
  store.num_users = 20;
  store.num_items = 20;
  store.category_names = {"a", "b"};
  for (ItemIndex i = 0; i < 20; ++i) {
    store.item_categories.push_back({i < 10 ? 0 : 1});
    store.item_external_ids.push_back("i" + std::to_string(i));
    store.item_index.emplace(store.item_external_ids.back(), i);
  }
  SplitMix64 rng(42);
  for (UserIndex u = 0; u < 20; ++u) {
    store.user_external_ids.push_back("u" + std::to_string(u));
    store.user_index.emplace(store.user_external_ids.back(), u);
    const ItemIndex base = u < 10 ? 0 : 10;
    std::vector<ItemIndex> block(10);
    std::iota(block.begin(), block.end(), base);
    std::shuffle(block.begin(), block.end(), rng);
    std::vector<ItemIndex> pos(block.begin(), block.begin() + 8);
    std::sort(pos.begin(), pos.end());
    store.positives.push_back(std::move(pos));
  }
  store.validate();
  return store;
}

}  // namespace

TEST_CASE("non-private svd fits planted block structure: loss strictly decreases") {
  const InteractionStore store = blocky_store();
  const SplitDataset split = split_per_user(store, 7);
  ModelDims dims;
  dims.latent_dim = 4;
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  cfg.max_epochs = 10;
  cfg.patience = 20;
  cfg.neg_ratio = 2;
  const TrainResult r = train(init_model(ModelKind::svd, dims, 20, 20, 3), store, split,
                              split.train, cfg, PrivacySetup{}, 11);
  REQUIRE(r.log.size() == 10);
  for (std::size_t e = 1; e < r.log.size(); ++e)
    CHECK(r.log[e].train_loss < r.log[e - 1].train_loss);
  CHECK(r.log.back().train_loss < 0.5 * r.log.front().train_loss);
}

TEST_CASE("early stopping halts after patience stagnant validation epochs") {
  const InteractionStore store = fixtures::synthetic_store(30, 25, 2);
  const SplitDataset split = split_per_user(store, 1);
  ModelDims dims;
  dims.latent_dim = 3;
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.lr = 0.0;  // parameters frozen: validation NDCG is identical every epoch
  cfg.max_epochs = 50;
  cfg.patience = 6;
  const TrainResult r = train(init_model(ModelKind::svd, dims, store.num_users, store.num_items, 4),
                              store, split, split.train, cfg, PrivacySetup{}, 9);
  CHECK(static_cast<int>(r.log.size()) == 1 + cfg.patience);
  CHECK(r.best_epoch == 1);
}

TEST_CASE("epoch cap is respected") {
  const InteractionStore store = fixtures::synthetic_store(30, 25, 2);
  const SplitDataset split = split_per_user(store, 1);
  ModelDims dims;
  dims.latent_dim = 3;
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.lr = 0.05;
  cfg.max_epochs = 4;
  cfg.patience = 50;
  const TrainResult r = train(init_model(ModelKind::svd, dims, store.num_users, store.num_items, 4),
                              store, split, split.train, cfg, PrivacySetup{}, 9);
  CHECK(static_cast<int>(r.log.size()) == 4);
}

TEST_CASE("negative samples never collide with the user's training positives") {
  const InteractionStore store = fixtures::synthetic_store(40, 30, 5);
  const SplitDataset split = split_per_user(store, 3);
  for (ModelKind kind : {ModelKind::svd, ModelKind::ncf, ModelKind::bpr}) {
    SplitMix64 rng(17);
    const auto pool = build_epoch_pool(kind, split.train, store.num_items, 4, rng);
    REQUIRE_FALSE(pool.empty());
    std::size_t negatives = 0;
    for (const TrainExample& ex : pool) {
      const auto& row = split.train[static_cast<std::size_t>(ex.user)];
      if (kind == ModelKind::bpr) {
        CHECK(ex.neg_item >= 0);
        CHECK_FALSE(std::binary_search(row.begin(), row.end(), ex.neg_item));
        CHECK(std::binary_search(row.begin(), row.end(), ex.item));
        ++negatives;
      } else if (ex.label == 0.0) {
        CHECK_FALSE(std::binary_search(row.begin(), row.end(), ex.item));
        ++negatives;
      } else {
        CHECK(std::binary_search(row.begin(), row.end(), ex.item));
      }
    }
    CHECK(negatives > 0);
  }
  // vae: one row per user
  SplitMix64 rng(18);
  const auto vae_pool = build_epoch_pool(ModelKind::vae, split.train, store.num_items, 4, rng);
  CHECK(vae_pool.size() == split.train.size());
}

TEST_CASE("dpsgd ledger counts every step with the pool-derived sample rate") {
  const InteractionStore store = fixtures::synthetic_store(30, 25, 6);
  const SplitDataset split = split_per_user(store, 2);
  ModelDims dims;
  dims.latent_dim = 3;
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.lr = 0.02;
  cfg.max_epochs = 3;
  cfg.patience = 10;
  cfg.neg_ratio = 1;
  PrivacySetup dp;
  dp.regime = Regime::dpsgd;
  dp.clip_norm = 1.0;
  dp.noise_multiplier = 1.0;
  const TrainResult r = train(init_model(ModelKind::bpr, dims, store.num_users, store.num_items, 8),
                              store, split, split.train, cfg, dp, 13);
  REQUIRE_FALSE(r.diverged);
  std::size_t pool_size = 0;
  {
    SplitMix64 probe(1);
    pool_size = build_epoch_pool(ModelKind::bpr, split.train, store.num_items, 1, probe).size();
  }
  const std::size_t steps_per_epoch = pool_size / 32;
  CHECK(r.ledger.steps == steps_per_epoch * r.log.size());
  CHECK(r.ledger.sample_rate == doctest::Approx(32.0 / static_cast<double>(pool_size)));
  // epsilon grows with the step count across the epoch log
  for (std::size_t e = 1; e < r.log.size(); ++e)
    CHECK(r.log[e].ledger_epsilon >= r.log[e - 1].ledger_epsilon);
}

TEST_CASE("divergence is reported, not thrown") {
  const InteractionStore store = fixtures::synthetic_store(30, 25, 6);
  const SplitDataset split = split_per_user(store, 2);
  ModelDims dims;
  dims.latent_dim = 3;
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.lr = 1e14;  // guaranteed blow-up
  cfg.max_epochs = 5;
  cfg.patience = 10;
  const TrainResult r = train(init_model(ModelKind::svd, dims, store.num_users, store.num_items, 4),
                              store, split, split.train, cfg, PrivacySetup{}, 9);
  CHECK(r.diverged);
  CHECK_FALSE(r.error.empty());
}

TEST_CASE("training on ldp-perturbed rows keeps holdouts clean and runs end to end") {
  const InteractionStore store = fixtures::synthetic_store(30, 25, 7);
  const SplitDataset split = split_per_user(store, 5);
  const auto perturbed = perturb_training_set(split, store, LdpSpec{0.5, 3});
  // perturbation must actually change something at eps = 0.5
  CHECK(perturbed != split.train);
  ModelDims dims;
  dims.latent_dim = 3;
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.lr = 0.05;
  cfg.max_epochs = 2;
  cfg.patience = 10;
  PrivacySetup ldp;
  ldp.regime = Regime::ldp;
  ldp.ldp_epsilon = 0.5;
  const TrainResult r = train(init_model(ModelKind::svd, dims, store.num_users, store.num_items, 4),
                              store, split, perturbed, cfg, ldp, 19);
  CHECK_FALSE(r.diverged);
  CHECK(r.ledger.steps == 0);  // no dpsgd accounting under ldp
  CHECK(r.log.size() == 2);
}

TEST_CASE("train rejects a batch size larger than the example pool") {
  const InteractionStore store = fixtures::synthetic_store(20, 20, 8);
  const SplitDataset split = split_per_user(store, 5);
  ModelDims dims;
  TrainConfig cfg;
  cfg.batch_size = 1 << 20;
  CHECK_THROWS_AS(train(init_model(ModelKind::vae, dims, store.num_users, store.num_items, 4),
                        store, split, split.train, cfg, PrivacySetup{}, 19),
                  std::invalid_argument);
}
