#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recpriv/common.hpp"
#include "recpriv/dataset.hpp"

namespace recpriv {

enum class ModelKind { svd, bpr, ncf, vae };

const char* model_kind_name(ModelKind k);
ModelKind model_kind_from(std::string_view name);

struct ModelDims {
  int latent_dim = 5;      // svd / bpr embedding size
  int gmf_dim = 8;         // ncf GMF embedding size
  int mlp_emb_dim = 8;     // ncf MLP embedding size (tower input = 2x this)
  int mlp_hidden1 = 8;     // ncf tower: 2*mlp_emb_dim -> hidden1 -> hidden2 -> fuse
  int mlp_hidden2 = 4;
  double dropout = 0.5;    // ncf tower dropout (training only)
  int vae_hidden = 100;
  int vae_latent = 50;
};

struct TensorView {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// All parameters live in one flat vector; tensors are views into it, so the
/// flat "view" used by the privacy machinery is the storage itself.
struct ModelState {
  ModelKind kind = ModelKind::svd;
  ModelDims dims;
  std::int32_t num_users = 0;
  std::int32_t num_items = 0;
  std::uint64_t init_seed = 0;
  std::vector<TensorView> tensors;
  std::vector<double> params;

  std::span<double> view(std::string_view name);
  std::span<const double> view(std::string_view name) const;
  const TensorView& tensor(std::string_view name) const;
  std::size_t param_count() const { return params.size(); }
};

/// Embeddings ~ N(0, 0.01^2); layer weights uniform in +-1/sqrt(fan_in);
/// biases zero. Deterministic under seed.
ModelState init_model(ModelKind kind, const ModelDims& dims, std::int32_t num_users,
                      std::int32_t num_items, std::uint64_t seed);

/// One training example. svd/ncf: (user, item, label); bpr: (user, item=pos,
/// neg_item); vae: user only (the interaction row is passed separately).
struct TrainExample {
  UserIndex user = 0;
  ItemIndex item = 0;
  ItemIndex neg_item = -1;
  double label = 1.0;
};

/// Per-example gradient as disjoint segments of the flat parameter vector
/// (embedding rows plus dense blocks; a single full-width segment for vae).
struct GradSegment {
  std::size_t offset = 0;
  std::vector<double> values;
};

struct SparseGrad {
  std::vector<GradSegment> segments;

  double squared_norm() const;
  void scale(double s);
  void add_to(std::span<double> dense) const;
  std::vector<double> to_dense(std::size_t param_count) const;
  /// Rescale to norm <= C (no-op when already within the bound).
  void clip_to(double clip_norm);
};

/// Exact per-example loss and gradient. `vae_row` is the user's binary
/// interaction row (sorted item indices) and is only read for vae;
/// `noise_key` seeds the example's private randomness (ncf dropout mask,
/// vae reparameterization draw), so a fixed key makes the loss a
/// deterministic, finite-differentiable function of the parameters.
double loss_and_grad_sparse(const ModelState& state, const TrainExample& ex,
                            std::span<const ItemIndex> vae_row, std::uint64_t noise_key,
                            SparseGrad& out);

std::pair<double, std::vector<double>> loss_and_grad(const ModelState& state,
                                                     const TrainExample& ex,
                                                     std::span<const ItemIndex> vae_row,
                                                     std::uint64_t noise_key);

struct VaeLossParts {
  double total = 0.0;
  double reconstruction = 0.0;  // multinomial NLL
  double kl = 0.0;
};
VaeLossParts vae_loss_parts(const ModelState& state, std::span<const ItemIndex> row,
                            std::uint64_t noise_key);

/// Inference-mode loss (no dropout, vae uses the encoder mean). For vae the
/// criterion is scored on `vae_targets` given `vae_input_row`; the other
/// kinds ignore both spans.
double eval_loss(const ModelState& state, const TrainExample& ex,
                 std::span<const ItemIndex> vae_input_row,
                 std::span<const ItemIndex> vae_targets);

/// How close the example's forward pass sits to non-smooth or saturated
/// activation regions; the finite-difference harness widens (or redraws)
/// its tolerance based on this.
struct ActivationDiag {
  double min_abs_relu_pre = kInf;  // ncf: distance to the nearest relu kink
  double max_abs_tanh = 0.0;       // vae: worst tanh saturation
  double sigmoid_slope = 0.25;     // ncf: p(1-p) at the output
};
ActivationDiag activation_diagnostics(const ModelState& state, const TrainExample& ex,
                                      std::span<const ItemIndex> vae_row, std::uint64_t noise_key);

/// Scores for an explicit list of items. `user_train_row` provides the vae
/// encoder input (ignored by the other kinds). Inference is deterministic:
/// no dropout, vae uses the encoder mean.
void score_items(const ModelState& state, UserIndex user, std::span<const ItemIndex> items,
                 std::span<const ItemIndex> user_train_row, std::span<double> out);

std::vector<double> score_all_items(const ModelState& state, UserIndex user,
                                    std::span<const ItemIndex> user_train_row);

struct RecommendationList {
  UserIndex user = 0;
  std::vector<ItemIndex> items;  // ranked best-first
  std::vector<double> scores;
  bool truncated = false;  // fewer than k candidates existed
};

/// Top-k over all items not in `exclude_sorted`; ties break toward the
/// smaller item index.
RecommendationList recommend_topk(const ModelState& state, UserIndex user, int k,
                                  std::span<const ItemIndex> exclude_sorted,
                                  std::span<const ItemIndex> user_train_row);

/// Versioned JSON checkpoint with the named-tensor layout.
void save_checkpoint(const ModelState& state, const std::string& path,
                     const std::string& ledger_json = "");
ModelState load_checkpoint(const std::string& path, std::string* ledger_json = nullptr);

}  // namespace recpriv
