#include "recpriv/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace recpriv {

namespace {

using nlohmann::json;

constexpr int kCheckpointVersion = 1;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + e^z) without overflow
double softplus(double z) { return std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0); }

struct Layout {
  std::vector<TensorView> tensors;
  std::size_t total = 0;
  void add(std::string name, std::size_t rows, std::size_t cols) {
    tensors.push_back({std::move(name), total, rows, cols});
    total += rows * cols;
  }
};

Layout make_layout(ModelKind kind, const ModelDims& d, std::int32_t users, std::int32_t items) {
  Layout layout;
  const auto u = static_cast<std::size_t>(users);
  const auto i = static_cast<std::size_t>(items);
  switch (kind) {
    case ModelKind::svd:
    case ModelKind::bpr: {
      if (d.latent_dim <= 0) throw std::invalid_argument("latent_dim must be positive");
      layout.add("user_emb", u, static_cast<std::size_t>(d.latent_dim));
      layout.add("item_emb", i, static_cast<std::size_t>(d.latent_dim));
      break;
    }
    case ModelKind::ncf: {
      if (d.gmf_dim <= 0 || d.mlp_emb_dim <= 0 || d.mlp_hidden1 <= 0 || d.mlp_hidden2 <= 0)
        throw std::invalid_argument("ncf dims must be positive");
      if (d.dropout < 0.0 || d.dropout >= 1.0)
        throw std::invalid_argument("ncf dropout must be in [0,1)");
      const auto g = static_cast<std::size_t>(d.gmf_dim);
      const auto m = static_cast<std::size_t>(d.mlp_emb_dim);
      const auto h1 = static_cast<std::size_t>(d.mlp_hidden1);
      const auto h2 = static_cast<std::size_t>(d.mlp_hidden2);
      layout.add("gmf_user", u, g);
      layout.add("gmf_item", i, g);
      layout.add("mlp_user", u, m);
      layout.add("mlp_item", i, m);
      // dense blocks stay contiguous so one grad segment can cover them all
      layout.add("w1", h1, 2 * m);
      layout.add("b1", h1, 1);
      layout.add("w2", h2, h1);
      layout.add("b2", h2, 1);
      layout.add("w_out", 1, g + h2);
      layout.add("b_out", 1, 1);
      break;
    }
    case ModelKind::vae: {
      if (d.vae_hidden <= 0 || d.vae_latent <= 0)
        throw std::invalid_argument("vae dims must be positive");
      const auto h = static_cast<std::size_t>(d.vae_hidden);
      const auto l = static_cast<std::size_t>(d.vae_latent);
      layout.add("enc_w1", h, i);
      layout.add("enc_b1", h, 1);
      layout.add("enc_wmu", l, h);
      layout.add("enc_bmu", l, 1);
      layout.add("enc_wlv", l, h);
      layout.add("enc_blv", l, 1);
      layout.add("dec_w1", h, l);
      layout.add("dec_b1", h, 1);
      layout.add("dec_w2", i, h);
      layout.add("dec_b2", i, 1);
      break;
    }
  }
  return layout;
}

bool is_embedding(std::string_view name) {
  return name == "user_emb" || name == "item_emb" || name == "gmf_user" || name == "gmf_item" ||
         name == "mlp_user" || name == "mlp_item";
}

bool is_bias(std::string_view name) { return name.size() >= 1 && (name[0] == 'b' || name.substr(0, 5) == "enc_b" || name.substr(0, 5) == "dec_b"); }

void check_user(const ModelState& s, UserIndex u) {
  if (u < 0 || u >= s.num_users) throw std::invalid_argument("user index out of range");
}
void check_item(const ModelState& s, ItemIndex i) {
  if (i < 0 || i >= s.num_items) throw std::invalid_argument("item index out of range");
}

[[noreturn]] void throw_nonfinite(const ModelState& s, const char* where) {
  std::ostringstream msg;
  msg << where << ": non-finite loss (model=" << model_kind_name(s.kind)
      << ", |theta|=" << l2_norm(s.params) << ")";
  throw std::runtime_error(msg.str());
}

}  // namespace

const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::svd: return "SVD";
    case ModelKind::bpr: return "BPR";
    case ModelKind::ncf: return "NCF";
    case ModelKind::vae: return "VAE";
  }
  return "?";
}

ModelKind model_kind_from(std::string_view name) {
  std::string up(name);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  if (up == "SVD") return ModelKind::svd;
  if (up == "BPR") return ModelKind::bpr;
  if (up == "NCF") return ModelKind::ncf;
  if (up == "VAE") return ModelKind::vae;
  throw std::invalid_argument("unknown model kind: " + std::string(name));
}

std::span<double> ModelState::view(std::string_view name) {
  const TensorView& t = tensor(name);
  return {params.data() + t.offset, t.size()};
}

std::span<const double> ModelState::view(std::string_view name) const {
  const TensorView& t = tensor(name);
  return {params.data() + t.offset, t.size()};
}

const TensorView& ModelState::tensor(std::string_view name) const {
  for (const TensorView& t : tensors)
    if (t.name == name) return t;
  throw std::invalid_argument("no tensor named " + std::string(name));
}

ModelState init_model(ModelKind kind, const ModelDims& dims, std::int32_t num_users,
                      std::int32_t num_items, std::uint64_t seed) {
  if (num_users <= 0 || num_items <= 0)
    throw std::invalid_argument("init_model: need at least one user and one item");
  ModelState s;
  s.kind = kind;
  s.dims = dims;
  s.num_users = num_users;
  s.num_items = num_items;
  s.init_seed = seed;
  Layout layout = make_layout(kind, dims, num_users, num_items);
  s.tensors = std::move(layout.tensors);
  s.params.assign(layout.total, 0.0);

  SplitMix64 rng(mix_seed(seed, 0x1417ULL));
  std::normal_distribution<double> emb(0.0, 0.01);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const TensorView& t : s.tensors) {
    auto dst = std::span<double>(s.params.data() + t.offset, t.size());
    if (is_embedding(t.name)) {
      for (double& x : dst) x = emb(rng);
    } else if (is_bias(t.name)) {
      // zeros
    } else {
      const double a = 1.0 / std::sqrt(static_cast<double>(t.cols));
      for (double& x : dst) x = a * (2.0 * unit(rng) - 1.0);
    }
  }
  return s;
}

double SparseGrad::squared_norm() const {
  double s = 0.0;
  for (const GradSegment& seg : segments)
    for (double v : seg.values) s += v * v;
  return s;
}

void SparseGrad::scale(double s) {
  for (GradSegment& seg : segments)
    for (double& v : seg.values) v *= s;
}

void SparseGrad::add_to(std::span<double> dense) const {
  for (const GradSegment& seg : segments) {
    for (std::size_t k = 0; k < seg.values.size(); ++k) dense[seg.offset + k] += seg.values[k];
  }
}

std::vector<double> SparseGrad::to_dense(std::size_t param_count) const {
  std::vector<double> dense(param_count, 0.0);
  add_to(dense);
  return dense;
}

void SparseGrad::clip_to(double clip_norm) {
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_to: clip_norm must be > 0");
  const double norm = std::sqrt(squared_norm());
  if (!std::isfinite(norm)) throw std::runtime_error("clip_to: non-finite gradient");
  const double ratio = norm / clip_norm;
  if (ratio > 1.0) scale(clip_norm / norm);
}

namespace {

// ---- svd / bpr ----

double svd_loss_grad(const ModelState& s, const TrainExample& ex, SparseGrad& out) {
  const int d = s.dims.latent_dim;
  const TensorView& tu = s.tensor("user_emb");
  const TensorView& ti = s.tensor("item_emb");
  const double* p = s.params.data() + tu.offset + static_cast<std::size_t>(ex.user) * d;
  const double* q = s.params.data() + ti.offset + static_cast<std::size_t>(ex.item) * d;
  double score = 0.0;
  for (int k = 0; k < d; ++k) score += p[k] * q[k];
  const double resid = score - ex.label;
  const double loss = resid * resid;
  const double ds = 2.0 * resid;
  GradSegment gu{tu.offset + static_cast<std::size_t>(ex.user) * d, std::vector<double>(d)};
  GradSegment gi{ti.offset + static_cast<std::size_t>(ex.item) * d, std::vector<double>(d)};
  for (int k = 0; k < d; ++k) {
    gu.values[k] = ds * q[k];
    gi.values[k] = ds * p[k];
  }
  out.segments.push_back(std::move(gu));
  out.segments.push_back(std::move(gi));
  return loss;
}

double bpr_loss_grad(const ModelState& s, const TrainExample& ex, SparseGrad& out) {
  if (ex.neg_item < 0) throw std::invalid_argument("bpr example needs a negative item");
  if (ex.neg_item == ex.item) throw std::invalid_argument("bpr example: pos == neg");
  check_item(s, ex.neg_item);
  const int d = s.dims.latent_dim;
  const TensorView& tu = s.tensor("user_emb");
  const TensorView& ti = s.tensor("item_emb");
  const double* p = s.params.data() + tu.offset + static_cast<std::size_t>(ex.user) * d;
  const double* qi = s.params.data() + ti.offset + static_cast<std::size_t>(ex.item) * d;
  const double* qj = s.params.data() + ti.offset + static_cast<std::size_t>(ex.neg_item) * d;
  double x = 0.0;
  for (int k = 0; k < d; ++k) x += p[k] * (qi[k] - qj[k]);
  const double loss = softplus(-x);      // -log sigmoid(x)
  const double g = -sigmoid(-x);         // dloss/dx
  GradSegment gu{tu.offset + static_cast<std::size_t>(ex.user) * d, std::vector<double>(d)};
  GradSegment gi{ti.offset + static_cast<std::size_t>(ex.item) * d, std::vector<double>(d)};
  GradSegment gj{ti.offset + static_cast<std::size_t>(ex.neg_item) * d, std::vector<double>(d)};
  for (int k = 0; k < d; ++k) {
    gu.values[k] = g * (qi[k] - qj[k]);
    gi.values[k] = g * p[k];
    gj.values[k] = -g * p[k];
  }
  out.segments.push_back(std::move(gu));
  out.segments.push_back(std::move(gi));
  out.segments.push_back(std::move(gj));
  return loss;
}

// ---- ncf ----

struct NcfForward {
  std::vector<double> a0, z1, d1, z2, d2, phi;  // d* are post-dropout activations
  std::vector<double> mask1, mask2;             // dropout scale per unit (0 or 1/keep)
  double z = 0.0;
};

NcfForward ncf_forward(const ModelState& s, UserIndex u, ItemIndex i, bool training,
                       std::uint64_t noise_key) {
  const auto g = static_cast<std::size_t>(s.dims.gmf_dim);
  const auto m = static_cast<std::size_t>(s.dims.mlp_emb_dim);
  const auto h1 = static_cast<std::size_t>(s.dims.mlp_hidden1);
  const auto h2 = static_cast<std::size_t>(s.dims.mlp_hidden2);
  const double* gu = s.params.data() + s.tensor("gmf_user").offset + static_cast<std::size_t>(u) * g;
  const double* gi = s.params.data() + s.tensor("gmf_item").offset + static_cast<std::size_t>(i) * g;
  const double* mu = s.params.data() + s.tensor("mlp_user").offset + static_cast<std::size_t>(u) * m;
  const double* mi = s.params.data() + s.tensor("mlp_item").offset + static_cast<std::size_t>(i) * m;
  const auto w1 = s.view("w1");
  const auto b1 = s.view("b1");
  const auto w2 = s.view("w2");
  const auto b2 = s.view("b2");
  const auto wo = s.view("w_out");
  const auto bo = s.view("b_out");

  NcfForward f;
  f.a0.resize(2 * m);
  for (std::size_t k = 0; k < m; ++k) {
    f.a0[k] = mu[k];
    f.a0[m + k] = mi[k];
  }
  const double keep = 1.0 - s.dims.dropout;
  f.mask1.assign(h1, 1.0);
  f.mask2.assign(h2, 1.0);
  if (training && s.dims.dropout > 0.0) {
    SplitMix64 rng(mix_seed(noise_key, 0xd40ULL));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (double& v : f.mask1) v = unit(rng) < s.dims.dropout ? 0.0 : 1.0 / keep;
    for (double& v : f.mask2) v = unit(rng) < s.dims.dropout ? 0.0 : 1.0 / keep;
  }

  f.z1.resize(h1);
  f.d1.resize(h1);
  for (std::size_t r = 0; r < h1; ++r) {
    double acc = b1[r];
    const double* row = w1.data() + r * 2 * m;
    for (std::size_t c = 0; c < 2 * m; ++c) acc += row[c] * f.a0[c];
    f.z1[r] = acc;
    f.d1[r] = std::max(acc, 0.0) * f.mask1[r];
  }
  f.z2.resize(h2);
  f.d2.resize(h2);
  for (std::size_t r = 0; r < h2; ++r) {
    double acc = b2[r];
    const double* row = w2.data() + r * h1;
    for (std::size_t c = 0; c < h1; ++c) acc += row[c] * f.d1[c];
    f.z2[r] = acc;
    f.d2[r] = std::max(acc, 0.0) * f.mask2[r];
  }
  f.phi.resize(g + h2);
  for (std::size_t k = 0; k < g; ++k) f.phi[k] = gu[k] * gi[k];
  for (std::size_t k = 0; k < h2; ++k) f.phi[g + k] = f.d2[k];
  double z = bo[0];
  for (std::size_t k = 0; k < g + h2; ++k) z += wo[k] * f.phi[k];
  f.z = z;
  return f;
}

double ncf_loss_grad(const ModelState& s, const TrainExample& ex, std::uint64_t noise_key,
                     SparseGrad& out) {
  const auto g = static_cast<std::size_t>(s.dims.gmf_dim);
  const auto m = static_cast<std::size_t>(s.dims.mlp_emb_dim);
  const auto h1 = static_cast<std::size_t>(s.dims.mlp_hidden1);
  const auto h2 = static_cast<std::size_t>(s.dims.mlp_hidden2);
  const NcfForward f = ncf_forward(s, ex.user, ex.item, /*training=*/true, noise_key);
  const double loss = softplus(f.z) - ex.label * f.z;  // stable BCE on the logit
  const double dz = sigmoid(f.z) - ex.label;

  const double* gu = s.params.data() + s.tensor("gmf_user").offset + static_cast<std::size_t>(ex.user) * g;
  const double* gi = s.params.data() + s.tensor("gmf_item").offset + static_cast<std::size_t>(ex.item) * g;
  const auto w1 = s.view("w1");
  const auto w2 = s.view("w2");
  const auto wo = s.view("w_out");

  // embedding rows
  GradSegment sgu{s.tensor("gmf_user").offset + static_cast<std::size_t>(ex.user) * g,
                  std::vector<double>(g)};
  GradSegment sgi{s.tensor("gmf_item").offset + static_cast<std::size_t>(ex.item) * g,
                  std::vector<double>(g)};
  for (std::size_t k = 0; k < g; ++k) {
    const double dp = dz * wo[k];
    sgu.values[k] = dp * gi[k];
    sgi.values[k] = dp * gu[k];
  }

  std::vector<double> dd2(h2);
  for (std::size_t k = 0; k < h2; ++k) dd2[k] = dz * wo[g + k];
  std::vector<double> dz2(h2);
  for (std::size_t k = 0; k < h2; ++k)
    dz2[k] = (f.z2[k] > 0.0 ? dd2[k] * f.mask2[k] : 0.0);
  std::vector<double> dd1(h1, 0.0);
  for (std::size_t r = 0; r < h2; ++r) {
    const double* row = w2.data() + r * h1;
    for (std::size_t c = 0; c < h1; ++c) dd1[c] += row[c] * dz2[r];
  }
  std::vector<double> dz1(h1);
  for (std::size_t k = 0; k < h1; ++k)
    dz1[k] = (f.z1[k] > 0.0 ? dd1[k] * f.mask1[k] : 0.0);
  std::vector<double> da0(2 * m, 0.0);
  for (std::size_t r = 0; r < h1; ++r) {
    const double* row = w1.data() + r * 2 * m;
    for (std::size_t c = 0; c < 2 * m; ++c) da0[c] += row[c] * dz1[r];
  }

  GradSegment smu{s.tensor("mlp_user").offset + static_cast<std::size_t>(ex.user) * m,
                  std::vector<double>(m)};
  GradSegment smi{s.tensor("mlp_item").offset + static_cast<std::size_t>(ex.item) * m,
                  std::vector<double>(m)};
  for (std::size_t k = 0; k < m; ++k) {
    smu.values[k] = da0[k];
    smi.values[k] = da0[m + k];
  }

  // one contiguous segment for all dense blocks (w1..b_out)
  const std::size_t dense_off = s.tensor("w1").offset;
  const std::size_t dense_len = s.params.size() - dense_off;
  GradSegment dense{dense_off, std::vector<double>(dense_len, 0.0)};
  double* dw1 = dense.values.data() + (s.tensor("w1").offset - dense_off);
  double* db1 = dense.values.data() + (s.tensor("b1").offset - dense_off);
  double* dw2 = dense.values.data() + (s.tensor("w2").offset - dense_off);
  double* db2 = dense.values.data() + (s.tensor("b2").offset - dense_off);
  double* dwo = dense.values.data() + (s.tensor("w_out").offset - dense_off);
  double* dbo = dense.values.data() + (s.tensor("b_out").offset - dense_off);
  for (std::size_t r = 0; r < h1; ++r) {
    for (std::size_t c = 0; c < 2 * m; ++c) dw1[r * 2 * m + c] = dz1[r] * f.a0[c];
    db1[r] = dz1[r];
  }
  for (std::size_t r = 0; r < h2; ++r) {
    for (std::size_t c = 0; c < h1; ++c) dw2[r * h1 + c] = dz2[r] * f.d1[c];
    db2[r] = dz2[r];
  }
  for (std::size_t k = 0; k < g + h2; ++k) dwo[k] = dz * f.phi[k];
  dbo[0] = dz;

  out.segments.push_back(std::move(sgu));
  out.segments.push_back(std::move(sgi));
  out.segments.push_back(std::move(smu));
  out.segments.push_back(std::move(smi));
  out.segments.push_back(std::move(dense));
  return loss;
}

// ---- vae ----

struct VaeForward {
  std::vector<double> he, mu, lv, eps, z, hd, logits;
  double log_z = 0.0;  // logsumexp of the logits
};

VaeForward vae_forward(const ModelState& s, std::span<const ItemIndex> row, bool sample,
                       std::uint64_t noise_key) {
  const auto n = static_cast<std::size_t>(s.num_items);
  const auto h = static_cast<std::size_t>(s.dims.vae_hidden);
  const auto l = static_cast<std::size_t>(s.dims.vae_latent);
  const auto enc_w1 = s.view("enc_w1");
  const auto enc_b1 = s.view("enc_b1");
  const auto enc_wmu = s.view("enc_wmu");
  const auto enc_bmu = s.view("enc_bmu");
  const auto enc_wlv = s.view("enc_wlv");
  const auto enc_blv = s.view("enc_blv");
  const auto dec_w1 = s.view("dec_w1");
  const auto dec_b1 = s.view("dec_b1");
  const auto dec_w2 = s.view("dec_w2");
  const auto dec_b2 = s.view("dec_b2");

  VaeForward f;
  f.he.resize(h);
  for (std::size_t r = 0; r < h; ++r) {
    double acc = enc_b1[r];
    const double* wrow = enc_w1.data() + r * n;
    for (ItemIndex i : row) acc += wrow[static_cast<std::size_t>(i)];
    f.he[r] = std::tanh(acc);
  }
  f.mu.resize(l);
  f.lv.resize(l);
  for (std::size_t r = 0; r < l; ++r) {
    double am = enc_bmu[r], av = enc_blv[r];
    const double* wm = enc_wmu.data() + r * h;
    const double* wv = enc_wlv.data() + r * h;
    for (std::size_t c = 0; c < h; ++c) {
      am += wm[c] * f.he[c];
      av += wv[c] * f.he[c];
    }
    f.mu[r] = am;
    f.lv[r] = av;
  }
  f.eps.assign(l, 0.0);
  if (sample) {
    SplitMix64 rng(mix_seed(noise_key, 0xae0ULL));
    std::normal_distribution<double> n01(0.0, 1.0);
    for (double& e : f.eps) e = n01(rng);
  }
  f.z.resize(l);
  for (std::size_t r = 0; r < l; ++r) f.z[r] = f.mu[r] + std::exp(0.5 * f.lv[r]) * f.eps[r];

  f.hd.resize(h);
  for (std::size_t r = 0; r < h; ++r) {
    double acc = dec_b1[r];
    const double* wrow = dec_w1.data() + r * l;
    for (std::size_t c = 0; c < l; ++c) acc += wrow[c] * f.z[c];
    f.hd[r] = std::tanh(acc);
  }
  f.logits.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    double acc = dec_b2[r];
    const double* wrow = dec_w2.data() + r * h;
    for (std::size_t c = 0; c < h; ++c) acc += wrow[c] * f.hd[c];
    f.logits[r] = acc;
  }
  const double hi = *std::max_element(f.logits.begin(), f.logits.end());
  double sum = 0.0;
  for (double v : f.logits) sum += std::exp(v - hi);
  f.log_z = hi + std::log(sum);
  return f;
}

VaeLossParts vae_parts_from(const VaeForward& f, std::span<const ItemIndex> row) {
  VaeLossParts parts;
  const double n_pos = static_cast<double>(row.size());
  double recon = n_pos * f.log_z;
  for (ItemIndex i : row) recon -= f.logits[static_cast<std::size_t>(i)];
  parts.reconstruction = recon;
  double kl = 0.0;
  for (std::size_t r = 0; r < f.mu.size(); ++r)
    kl += 0.5 * (f.mu[r] * f.mu[r] + std::exp(f.lv[r]) - 1.0 - f.lv[r]);
  parts.kl = kl;
  parts.total = recon + kl;
  return parts;
}

double vae_loss_grad(const ModelState& s, std::span<const ItemIndex> row, std::uint64_t noise_key,
                     SparseGrad& out) {
  const auto n = static_cast<std::size_t>(s.num_items);
  const auto h = static_cast<std::size_t>(s.dims.vae_hidden);
  const auto l = static_cast<std::size_t>(s.dims.vae_latent);
  const VaeForward f = vae_forward(s, row, /*sample=*/true, noise_key);
  const VaeLossParts parts = vae_parts_from(f, row);

  GradSegment dense{0, std::vector<double>(s.params.size(), 0.0)};
  auto seg = [&](const char* name) {
    return dense.values.data() + s.tensor(name).offset;
  };
  const auto enc_wmu = s.view("enc_wmu");
  const auto enc_wlv = s.view("enc_wlv");
  const auto dec_w1 = s.view("dec_w1");
  const auto dec_w2 = s.view("dec_w2");

  // d loss / d logits = N * softmax(logits) - x
  const double n_pos = static_cast<double>(row.size());
  std::vector<double> dlogits(n);
  for (std::size_t r = 0; r < n; ++r) dlogits[r] = n_pos * std::exp(f.logits[r] - f.log_z);
  for (ItemIndex i : row) dlogits[static_cast<std::size_t>(i)] -= 1.0;

  double* d_dec_w2 = seg("dec_w2");
  double* d_dec_b2 = seg("dec_b2");
  std::vector<double> dhd(h, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double g = dlogits[r];
    d_dec_b2[r] = g;
    double* wrow = d_dec_w2 + r * h;
    const double* w = dec_w2.data() + r * h;
    for (std::size_t c = 0; c < h; ++c) {
      wrow[c] = g * f.hd[c];
      dhd[c] += g * w[c];
    }
  }
  std::vector<double> dhd_pre(h);
  for (std::size_t r = 0; r < h; ++r) dhd_pre[r] = dhd[r] * (1.0 - f.hd[r] * f.hd[r]);
  double* d_dec_w1 = seg("dec_w1");
  double* d_dec_b1 = seg("dec_b1");
  std::vector<double> dzvec(l, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    const double g = dhd_pre[r];
    d_dec_b1[r] = g;
    double* wrow = d_dec_w1 + r * l;
    const double* w = dec_w1.data() + r * l;
    for (std::size_t c = 0; c < l; ++c) {
      wrow[c] = g * f.z[c];
      dzvec[c] += g * w[c];
    }
  }

  // reparameterization plus the closed-form KL terms
  std::vector<double> dmu(l), dlv(l);
  for (std::size_t r = 0; r < l; ++r) {
    dmu[r] = dzvec[r] + f.mu[r];
    dlv[r] = dzvec[r] * f.eps[r] * 0.5 * std::exp(0.5 * f.lv[r]) + 0.5 * (std::exp(f.lv[r]) - 1.0);
  }

  double* d_enc_wmu = seg("enc_wmu");
  double* d_enc_bmu = seg("enc_bmu");
  double* d_enc_wlv = seg("enc_wlv");
  double* d_enc_blv = seg("enc_blv");
  std::vector<double> dhe(h, 0.0);
  for (std::size_t r = 0; r < l; ++r) {
    d_enc_bmu[r] = dmu[r];
    d_enc_blv[r] = dlv[r];
    double* wm = d_enc_wmu + r * h;
    double* wv = d_enc_wlv + r * h;
    const double* wmu = enc_wmu.data() + r * h;
    const double* wlv = enc_wlv.data() + r * h;
    for (std::size_t c = 0; c < h; ++c) {
      wm[c] = dmu[r] * f.he[c];
      wv[c] = dlv[r] * f.he[c];
      dhe[c] += dmu[r] * wmu[c] + dlv[r] * wlv[c];
    }
  }
  double* d_enc_w1 = seg("enc_w1");
  double* d_enc_b1 = seg("enc_b1");
  for (std::size_t r = 0; r < h; ++r) {
    const double g = dhe[r] * (1.0 - f.he[r] * f.he[r]);
    d_enc_b1[r] = g;
    double* wrow = d_enc_w1 + r * n;
    for (ItemIndex i : row) wrow[static_cast<std::size_t>(i)] = g;  // x_i == 1
  }

  out.segments.push_back(std::move(dense));
  return parts.total;
}

}  // namespace

double loss_and_grad_sparse(const ModelState& state, const TrainExample& ex,
                            std::span<const ItemIndex> vae_row, std::uint64_t noise_key,
                            SparseGrad& out) {
  out.segments.clear();
  check_user(state, ex.user);
  double loss = 0.0;
  switch (state.kind) {
    case ModelKind::svd:
      check_item(state, ex.item);
      loss = svd_loss_grad(state, ex, out);
      break;
    case ModelKind::bpr:
      check_item(state, ex.item);
      loss = bpr_loss_grad(state, ex, out);
      break;
    case ModelKind::ncf:
      check_item(state, ex.item);
      loss = ncf_loss_grad(state, ex, noise_key, out);
      break;
    case ModelKind::vae:
      loss = vae_loss_grad(state, vae_row, noise_key, out);
      break;
  }
  if (!std::isfinite(loss)) throw_nonfinite(state, "loss_and_grad");
  return loss;
}

std::pair<double, std::vector<double>> loss_and_grad(const ModelState& state,
                                                     const TrainExample& ex,
                                                     std::span<const ItemIndex> vae_row,
                                                     std::uint64_t noise_key) {
  SparseGrad sparse;
  const double loss = loss_and_grad_sparse(state, ex, vae_row, noise_key, sparse);
  return {loss, sparse.to_dense(state.param_count())};
}

VaeLossParts vae_loss_parts(const ModelState& state, std::span<const ItemIndex> row,
                            std::uint64_t noise_key) {
  if (state.kind != ModelKind::vae) throw std::invalid_argument("vae_loss_parts: not a vae");
  const VaeForward f = vae_forward(state, row, /*sample=*/true, noise_key);
  return vae_parts_from(f, row);
}

double eval_loss(const ModelState& state, const TrainExample& ex,
                 std::span<const ItemIndex> vae_input_row,
                 std::span<const ItemIndex> vae_targets) {
  check_user(state, ex.user);
  switch (state.kind) {
    case ModelKind::svd: {
      double score = 0.0;
      score_items(state, ex.user, std::span<const ItemIndex>(&ex.item, 1), {},
                  std::span<double>(&score, 1));
      const double r = score - ex.label;
      return r * r;
    }
    case ModelKind::bpr: {
      if (ex.neg_item < 0 || ex.neg_item == ex.item)
        throw std::invalid_argument("eval_loss: bad bpr pair");
      const ItemIndex items[2] = {ex.item, ex.neg_item};
      double scores[2];
      score_items(state, ex.user, items, {}, scores);
      return softplus(-(scores[0] - scores[1]));
    }
    case ModelKind::ncf: {
      const NcfForward f = ncf_forward(state, ex.user, ex.item, /*training=*/false, 0);
      return softplus(f.z) - ex.label * f.z;
    }
    case ModelKind::vae: {
      const VaeForward f = vae_forward(state, vae_input_row, /*sample=*/false, 0);
      const VaeLossParts parts = vae_parts_from(f, vae_targets);
      return parts.total;
    }
  }
  return 0.0;
}

ActivationDiag activation_diagnostics(const ModelState& state, const TrainExample& ex,
                                      std::span<const ItemIndex> vae_row,
                                      std::uint64_t noise_key) {
  ActivationDiag diag;
  if (state.kind == ModelKind::ncf) {
    const NcfForward f = ncf_forward(state, ex.user, ex.item, /*training=*/true, noise_key);
    for (double z : f.z1) diag.min_abs_relu_pre = std::min(diag.min_abs_relu_pre, std::abs(z));
    for (double z : f.z2) diag.min_abs_relu_pre = std::min(diag.min_abs_relu_pre, std::abs(z));
    const double p = sigmoid(f.z);
    diag.sigmoid_slope = p * (1.0 - p);
  } else if (state.kind == ModelKind::vae) {
    const VaeForward f = vae_forward(state, vae_row, /*sample=*/true, noise_key);
    for (double h : f.he) diag.max_abs_tanh = std::max(diag.max_abs_tanh, std::abs(h));
    for (double h : f.hd) diag.max_abs_tanh = std::max(diag.max_abs_tanh, std::abs(h));
  }
  return diag;
}

void score_items(const ModelState& state, UserIndex user, std::span<const ItemIndex> items,
                 std::span<const ItemIndex> user_train_row, std::span<double> out) {
  if (out.size() != items.size()) throw std::invalid_argument("score_items: bad output span");
  check_user(state, user);
  for (ItemIndex i : items) check_item(state, i);
  switch (state.kind) {
    case ModelKind::svd:
    case ModelKind::bpr: {
      const int d = state.dims.latent_dim;
      const double* p =
          state.params.data() + state.tensor("user_emb").offset + static_cast<std::size_t>(user) * d;
      const double* q0 = state.params.data() + state.tensor("item_emb").offset;
      for (std::size_t k = 0; k < items.size(); ++k) {
        const double* q = q0 + static_cast<std::size_t>(items[k]) * d;
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += p[j] * q[j];
        out[k] = s;
      }
      break;
    }
    case ModelKind::ncf: {
      for (std::size_t k = 0; k < items.size(); ++k) {
        const NcfForward f = ncf_forward(state, user, items[k], /*training=*/false, 0);
        out[k] = sigmoid(f.z);
      }
      break;
    }
    case ModelKind::vae: {
      // one encoder/decoder pass gives every item's logit
      const VaeForward f = vae_forward(state, user_train_row, /*sample=*/false, 0);
      for (std::size_t k = 0; k < items.size(); ++k)
        out[k] = f.logits[static_cast<std::size_t>(items[k])];
      break;
    }
  }
}

std::vector<double> score_all_items(const ModelState& state, UserIndex user,
                                    std::span<const ItemIndex> user_train_row) {
  check_user(state, user);
  std::vector<double> scores(static_cast<std::size_t>(state.num_items));
  if (state.kind == ModelKind::vae) {
    const VaeForward f = vae_forward(state, user_train_row, /*sample=*/false, 0);
    return f.logits;
  }
  std::vector<ItemIndex> all(static_cast<std::size_t>(state.num_items));
  std::iota(all.begin(), all.end(), 0);
  score_items(state, user, all, user_train_row, scores);
  return scores;
}

RecommendationList recommend_topk(const ModelState& state, UserIndex user, int k,
                                  std::span<const ItemIndex> exclude_sorted,
                                  std::span<const ItemIndex> user_train_row) {
  if (k < 1) throw std::invalid_argument("recommend_topk: k must be >= 1");
  const std::vector<double> scores = score_all_items(state, user, user_train_row);
  std::vector<ItemIndex> candidates;
  candidates.reserve(scores.size());
  for (ItemIndex i = 0; i < state.num_items; ++i) {
    if (std::binary_search(exclude_sorted.begin(), exclude_sorted.end(), i)) continue;
    candidates.push_back(i);
  }
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + take, candidates.end(),
                    [&](ItemIndex a, ItemIndex b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  RecommendationList rec;
  rec.user = user;
  rec.truncated = take < static_cast<std::size_t>(k);
  rec.items.assign(candidates.begin(), candidates.begin() + take);
  rec.scores.resize(take);
  for (std::size_t j = 0; j < take; ++j) rec.scores[j] = scores[rec.items[j]];
  return rec;
}

void save_checkpoint(const ModelState& state, const std::string& path,
                     const std::string& ledger_json) {
  json doc;
  doc["format"] = "recpriv.checkpoint";
  doc["version"] = kCheckpointVersion;
  doc["kind"] = model_kind_name(state.kind);
  doc["num_users"] = state.num_users;
  doc["num_items"] = state.num_items;
  doc["init_seed"] = state.init_seed;
  doc["dims"] = {{"latent_dim", state.dims.latent_dim},
                 {"gmf_dim", state.dims.gmf_dim},
                 {"mlp_emb_dim", state.dims.mlp_emb_dim},
                 {"mlp_hidden1", state.dims.mlp_hidden1},
                 {"mlp_hidden2", state.dims.mlp_hidden2},
                 {"dropout", state.dims.dropout},
                 {"vae_hidden", state.dims.vae_hidden},
                 {"vae_latent", state.dims.vae_latent}};
  if (!ledger_json.empty()) doc["ledger"] = json::parse(ledger_json);
  json tensors = json::array();
  for (const TensorView& t : state.tensors) {
    json jt;
    jt["name"] = t.name;
    jt["rows"] = t.rows;
    jt["cols"] = t.cols;
    jt["data"] = std::vector<double>(state.params.begin() + t.offset,
                                     state.params.begin() + t.offset + t.size());
    tensors.push_back(std::move(jt));
  }
  doc["tensors"] = std::move(tensors);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + tmp);
    out << doc.dump();
  }
  std::filesystem::rename(tmp, path);
}

ModelState load_checkpoint(const std::string& path, std::string* ledger_json) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  json doc = json::parse(in);
  if (doc.value("format", "") != "recpriv.checkpoint" ||
      doc.value("version", -1) != kCheckpointVersion)
    throw std::runtime_error("checkpoint format/version mismatch: " + path);
  ModelDims dims;
  const json& jd = doc.at("dims");
  dims.latent_dim = jd.at("latent_dim").get<int>();
  dims.gmf_dim = jd.at("gmf_dim").get<int>();
  dims.mlp_emb_dim = jd.at("mlp_emb_dim").get<int>();
  dims.mlp_hidden1 = jd.at("mlp_hidden1").get<int>();
  dims.mlp_hidden2 = jd.at("mlp_hidden2").get<int>();
  dims.dropout = jd.at("dropout").get<double>();
  dims.vae_hidden = jd.at("vae_hidden").get<int>();
  dims.vae_latent = jd.at("vae_latent").get<int>();
  ModelState state = init_model(model_kind_from(doc.at("kind").get<std::string>()), dims,
                                doc.at("num_users").get<std::int32_t>(),
                                doc.at("num_items").get<std::int32_t>(),
                                doc.value("init_seed", std::uint64_t{0}));
  for (const json& jt : doc.at("tensors")) {
    auto dst = state.view(jt.at("name").get<std::string>());
    const auto data = jt.at("data").get<std::vector<double>>();
    if (data.size() != dst.size())
      throw std::runtime_error("checkpoint tensor size mismatch: " + path);
    std::copy(data.begin(), data.end(), dst.begin());
  }
  if (ledger_json) *ledger_json = doc.contains("ledger") ? doc["ledger"].dump() : "";
  return state;
}

}  // namespace recpriv
