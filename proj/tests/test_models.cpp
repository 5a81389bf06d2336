#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "recpriv/fixtures.hpp"
#include "recpriv/models.hpp"
#include "recpriv/verify.hpp"

using namespace recpriv;

TEST_CASE("init shapes follow the configured dims (full 1M-scale tables)") {
  ModelDims dims;
  dims.latent_dim = 5;
  const ModelState svd = init_model(ModelKind::svd, dims, 6038, 3258, 1);
  CHECK(svd.tensor("user_emb").rows == 6038);
  CHECK(svd.tensor("user_emb").cols == 5);
  CHECK(svd.tensor("item_emb").rows == 3258);
  CHECK(svd.tensor("item_emb").cols == 5);
  CHECK(svd.param_count() == (6038 + 3258) * 5);

  ModelDims ncf_dims;  // gmf 8, mlp tower 16 -> 8 -> 4 -> fuse 12 -> 1
  const ModelState ncf = init_model(ModelKind::ncf, ncf_dims, 10, 12, 1);
  CHECK(ncf.tensor("gmf_user").cols == 8);
  CHECK(ncf.tensor("mlp_user").cols == 8);
  CHECK(ncf.tensor("w1").rows == 8);
  CHECK(ncf.tensor("w1").cols == 16);
  CHECK(ncf.tensor("w2").rows == 4);
  CHECK(ncf.tensor("w2").cols == 8);
  CHECK(ncf.tensor("w_out").cols == 12);
  CHECK(ncf.dims.dropout == 0.5);

  const ModelState a = init_model(ModelKind::vae, dims, 20, 30, 7);
  const ModelState b = init_model(ModelKind::vae, dims, 20, 30, 7);
  CHECK(a.params == b.params);  // deterministic under seed
  const ModelState c = init_model(ModelKind::vae, dims, 20, 30, 8);
  CHECK(a.params != c.params);

  ModelDims bad;
  bad.latent_dim = 0;
  CHECK_THROWS_AS(init_model(ModelKind::svd, bad, 5, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(init_model(ModelKind::svd, dims, 0, 5, 1), std::invalid_argument);
}

TEST_CASE("scores: zero dot product, sigmoid range, softmax normalization") {
  ModelDims dims;
  dims.latent_dim = 3;
  ModelState svd = init_model(ModelKind::svd, dims, 4, 6, 1);
  std::fill(svd.params.begin(), svd.params.end(), 0.0);
  std::vector<double> score(1);
  score_items(svd, 0, std::vector<ItemIndex>{2}, {}, score);
  CHECK(score[0] == 0.0);

  ModelDims ncf_dims;
  ncf_dims.gmf_dim = 4;
  ncf_dims.mlp_emb_dim = 4;
  ncf_dims.mlp_hidden1 = 6;
  ncf_dims.mlp_hidden2 = 3;
  const ModelState ncf = init_model(ModelKind::ncf, ncf_dims, 5, 7, 3);
  const auto all = score_all_items(ncf, 2, {});
  for (double s : all) {
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }

  ModelDims vae_dims;
  vae_dims.vae_hidden = 10;
  vae_dims.vae_latent = 4;
  const ModelState vae = init_model(ModelKind::vae, vae_dims, 5, 9, 4);
  const std::vector<ItemIndex> row = {1, 4, 6};
  const auto logits = score_all_items(vae, 0, row);
  double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - hi);
  double total = 0.0;
  for (double l : logits) total += std::exp(l - hi) / z;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));

  CHECK_THROWS_AS(score_all_items(svd, 99, {}), std::invalid_argument);
}

TEST_CASE("loss fixed points: bpr ln 2, ncf ln 2, vae zero KL") {
  ModelDims dims;
  dims.latent_dim = 3;
  ModelState bpr = init_model(ModelKind::bpr, dims, 3, 5, 1);
  // identical item embeddings force score(u,i) == score(u,j)
  auto items = bpr.view("item_emb");
  for (int col = 0; col < 3; ++col) items[1 * 3 + col] = items[2 * 3 + col];
  SparseGrad g;
  const double bpr_loss = loss_and_grad_sparse(bpr, {0, 1, 2, 1.0}, {}, 0, g);
  CHECK(bpr_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(loss_and_grad_sparse(bpr, {0, 1, 1, 1.0}, {}, 0, g), std::invalid_argument);

  ModelDims ncf_dims;
  ModelState ncf = init_model(ModelKind::ncf, ncf_dims, 3, 5, 1);
  std::fill(ncf.params.begin(), ncf.params.end(), 0.0);  // logit 0 -> p = 0.5
  const double ncf_loss = loss_and_grad_sparse(ncf, {0, 1, -1, 1.0}, {}, 0, g);
  CHECK(ncf_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  ModelDims vae_dims;
  vae_dims.vae_hidden = 8;
  vae_dims.vae_latent = 4;
  ModelState vae = init_model(ModelKind::vae, vae_dims, 3, 6, 1);
  std::fill(vae.params.begin(), vae.params.end(), 0.0);  // mu = 0, logvar = 0
  const std::vector<ItemIndex> row = {0, 3};
  const VaeLossParts parts = vae_loss_parts(vae, row, 9);
  CHECK(parts.kl == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(parts.total == doctest::Approx(parts.reconstruction).epsilon(1e-15));
}

TEST_CASE("vae elbo decomposition holds and KL is nonnegative") {
  ModelDims dims;
  dims.vae_hidden = 10;
  dims.vae_latent = 5;
  SplitMix64 rng(31);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    ModelState vae = init_model(ModelKind::vae, dims, 4, 8, static_cast<std::uint64_t>(t));
    for (double& p : vae.params) p = 0.3 * n01(rng);
    std::vector<ItemIndex> row;
    for (ItemIndex i = 0; i < 8; ++i)
      if (rng() % 2) row.push_back(i);
    if (row.empty()) row.push_back(0);
    const VaeLossParts parts = vae_loss_parts(vae, row, static_cast<std::uint64_t>(t) + 100);
    CHECK(parts.kl >= 0.0);
    CHECK(parts.reconstruction + parts.kl ==
          doctest::Approx(parts.total).epsilon(1e-8).scale(std::abs(parts.total) + 1.0));
    SparseGrad g;
    const double loss = loss_and_grad_sparse(vae, {0, 0, -1, 1.0}, row,
                                             static_cast<std::uint64_t>(t) + 100, g);
    CHECK(loss == doctest::Approx(parts.total).epsilon(1e-12));
  }
}

TEST_CASE("bpr swap inequality: loss(i,j) + loss(j,i) >= 2 ln 2") {
  ModelDims dims;
  dims.latent_dim = 4;
  SplitMix64 rng(17);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    ModelState bpr = init_model(ModelKind::bpr, dims, 5, 8, static_cast<std::uint64_t>(t));
    for (double& p : bpr.params) p = 0.5 * n01(rng);
    const ItemIndex i = static_cast<ItemIndex>(rng() % 8);
    ItemIndex j = static_cast<ItemIndex>(rng() % 8);
    if (j == i) j = (j + 1) % 8;
    SparseGrad g;
    const double fwd = loss_and_grad_sparse(bpr, {1, i, j, 1.0}, {}, 0, g);
    const double bwd = loss_and_grad_sparse(bpr, {1, j, i, 1.0}, {}, 0, g);
    CHECK(fwd + bwd >= 2.0 * std::log(2.0) - 1e-12);
  }
  // equality exactly at equal scores
  ModelState bpr = init_model(ModelKind::bpr, dims, 2, 4, 0);
  auto items = bpr.view("item_emb");
  for (int col = 0; col < 4; ++col) items[0 * 4 + col] = items[1 * 4 + col];
  SparseGrad g;
  const double fwd = loss_and_grad_sparse(bpr, {0, 0, 1, 1.0}, {}, 0, g);
  const double bwd = loss_and_grad_sparse(bpr, {0, 1, 0, 1.0}, {}, 0, g);
  CHECK(fwd + bwd == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("finite differences confirm every model's exact gradients") {
  const auto suite = verify::gradient_check_suite(100);
  INFO(suite.detail);
  CHECK(suite.passed);
}

TEST_CASE("a broken clip makes the gradient-check suite fail (mutation fixture)") {
  const auto broken = verify::gradient_check_suite(5, [](std::vector<double> g, double c) {
    // wrong rule: clamps each coordinate instead of rescaling the vector
    for (double& x : g) x = std::clamp(x, -c, c);
    return g;
  });
  CHECK_FALSE(broken.passed);
  CHECK(broken.detail.find("clip") != std::string::npos);
}

TEST_CASE("recommend_topk ranks by score with index tie-breaks and honors exclusions") {
  ModelDims dims;
  dims.latent_dim = 1;
  ModelState svd = init_model(ModelKind::svd, dims, 1, 2, 1);
  svd.view("user_emb")[0] = 1.0;
  svd.view("item_emb")[0] = 0.9;
  svd.view("item_emb")[1] = 0.1;
  const auto top1 = recommend_topk(svd, 0, 1, {}, {});
  REQUIRE(top1.items.size() == 1);
  CHECK(top1.items[0] == 0);
  CHECK_FALSE(top1.truncated);

  ModelState flat = init_model(ModelKind::svd, dims, 1, 6, 1);
  std::fill(flat.params.begin(), flat.params.end(), 0.0);  // every score ties at 0
  const auto ties = recommend_topk(flat, 0, 3, {}, {});
  CHECK(ties.items == std::vector<ItemIndex>{0, 1, 2});

  const std::vector<ItemIndex> all = {0, 1, 2, 3, 4, 5};
  const auto empty = recommend_topk(flat, 0, 3, all, {});
  CHECK(empty.items.empty());
  CHECK(empty.truncated);

  CHECK_THROWS_AS(recommend_topk(flat, 0, 0, {}, {}), std::invalid_argument);

  // excluded items never appear (random draws)
  const InteractionStore store = fixtures::synthetic_store(30, 25, 15);
  ModelDims d2;
  const ModelState m = init_model(ModelKind::svd, d2, store.num_users, store.num_items, 5);
  for (UserIndex u = 0; u < store.num_users; ++u) {
    const auto rec = recommend_topk(m, u, 10, store.positives[u], {});
    for (ItemIndex i : rec.items)
      CHECK_FALSE(std::binary_search(store.positives[u].begin(), store.positives[u].end(), i));
  }
}

TEST_CASE("checkpoints round-trip bitwise with dims, kind and ledger snapshot") {
  const auto dir = std::filesystem::temp_directory_path() / "recpriv_ckpt";
  std::filesystem::create_directories(dir);
  ModelDims dims;
  dims.gmf_dim = 4;
  dims.mlp_emb_dim = 4;
  dims.mlp_hidden1 = 6;
  dims.mlp_hidden2 = 3;
  const ModelState state = init_model(ModelKind::ncf, dims, 7, 9, 123);
  const std::string path = (dir / "model.json").string();
  save_checkpoint(state, path, R"({"steps":42,"epsilon":1.5})");
  std::string ledger;
  const ModelState loaded = load_checkpoint(path, &ledger);
  CHECK(loaded.kind == ModelKind::ncf);
  CHECK(loaded.num_users == 7);
  CHECK(loaded.num_items == 9);
  CHECK(loaded.dims.mlp_hidden1 == 6);
  CHECK(loaded.params == state.params);  // bitwise
  CHECK(ledger.find("42") != std::string::npos);
}
