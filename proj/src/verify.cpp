#include "recpriv/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "recpriv/fixtures.hpp"
#include "recpriv/ldp.hpp"

namespace recpriv::verify {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

SuiteResult finish(const std::string& name, const Stopwatch& watch, const std::string& failure,
                   const std::string& summary) {
  SuiteResult r;
  r.name = name;
  r.passed = failure.empty();
  r.ms = watch.ms();
  r.detail = failure.empty() ? summary : failure;
  return r;
}

// ---------------------------------------------------------------------------
// brute-force metric reference (independent of metrics.cpp)
// ---------------------------------------------------------------------------

bool in_sorted(const std::vector<ItemIndex>& sorted, ItemIndex x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

double ref_ndcg(const std::vector<ItemIndex>& ranked, const std::vector<ItemIndex>& relevant,
                int k) {
  if (relevant.empty()) return kNaN;
  double dcg = 0.0;
  for (int pos = 0; pos < k && pos < static_cast<int>(ranked.size()); ++pos) {
    const double rel = in_sorted(relevant, ranked[static_cast<std::size_t>(pos)]) ? 1.0 : 0.0;
    dcg += (std::pow(2.0, rel) - 1.0) / std::log2(static_cast<double>(pos + 2));
  }
  double idcg = 0.0;
  const int ideal = std::min<int>(k, static_cast<int>(relevant.size()));
  for (int pos = 0; pos < ideal; ++pos)
    idcg += 1.0 / std::log2(static_cast<double>(pos + 2));
  return dcg / idcg;
}

std::map<int, double> ref_category_dist(const std::vector<ItemIndex>& items,
                                        const InteractionStore& store) {
  std::map<int, double> dist;
  for (ItemIndex i : items) {
    const auto& cats = store.item_categories[static_cast<std::size_t>(i)];
    for (std::int32_t z : cats) dist[z] += 1.0 / static_cast<double>(cats.size());
  }
  for (auto& [z, mass] : dist) mass /= static_cast<double>(items.size());
  return dist;
}

double ref_kld(const std::vector<ItemIndex>& history, const std::vector<ItemIndex>& rec,
               const InteractionStore& store, double alpha) {
  const auto p = ref_category_dist(history, store);
  const auto q = ref_category_dist(rec, store);
  double kl = 0.0;
  for (const auto& [z, pz] : p) {
    const auto it = q.find(z);
    const double qz = it == q.end() ? 0.0 : it->second;
    kl += pz * std::log(pz / ((1.0 - alpha) * qz + alpha * pz));
  }
  return kl;
}

double ref_mean_pi(const std::vector<ItemIndex>& items, const std::vector<double>& pop) {
  double s = 0.0;
  for (ItemIndex i : items) s += pop[static_cast<std::size_t>(i)];
  return s / static_cast<double>(items.size());
}

double ref_novelty(const std::vector<ItemIndex>& items, const std::vector<double>& pop) {
  double s = 0.0;
  for (ItemIndex i : items) s -= std::log(pop[static_cast<std::size_t>(i)]);
  return s / static_cast<double>(items.size());
}

double ref_coverage(const std::vector<ItemIndex>& item_set,
                    const std::vector<std::vector<ItemIndex>>& lists) {
  std::set<ItemIndex> seen;
  for (const auto& list : lists)
    for (ItemIndex i : list) seen.insert(i);
  std::size_t hit = 0;
  for (ItemIndex i : item_set) hit += seen.count(i);
  return static_cast<double>(hit) / static_cast<double>(item_set.size());
}

struct RefMean {
  double sum = 0.0;
  int n = 0;
  void add(double v) {
    if (std::isnan(v)) return;
    sum += v;
    ++n;
  }
  double get() const { return n ? sum / n : kNaN; }
};

}  // namespace

MetricsReport reference_report(const std::vector<RecommendationList>& recs,
                               const InteractionStore& store, const SplitDataset& split,
                               const SegmentMap& segments, int k, double alpha) {
  const int users = store.num_users;
  std::vector<ItemIndex> head_items, tail_items, all_items;
  for (ItemIndex i = 0; i < store.num_items; ++i) {
    all_items.push_back(i);
    if (segments.head_flag[static_cast<std::size_t>(i)])
      head_items.push_back(i);
    else
      tail_items.push_back(i);
  }

  auto filter_group = [&](const std::vector<ItemIndex>& items, bool want_head) {
    std::vector<ItemIndex> out;
    for (ItemIndex i : items)
      if (segments.head_flag[static_cast<std::size_t>(i)] == want_head) out.push_back(i);
    return out;
  };

  auto aggregate_users = [&](const std::vector<int>& members) {
    MetricValues v;
    RefMean ndcg_m, kld_m, nov_m, prof_m, rec_m;
    std::vector<std::vector<ItemIndex>> lists;
    for (int u : members) {
      const auto& rec = recs[static_cast<std::size_t>(u)].items;
      ndcg_m.add(ref_ndcg(rec, split.test[static_cast<std::size_t>(u)], k));
      if (!rec.empty()) {
        kld_m.add(ref_kld(split.train[static_cast<std::size_t>(u)], rec, store, alpha));
        nov_m.add(ref_novelty(rec, segments.popularity));
        rec_m.add(ref_mean_pi(rec, segments.popularity));
      }
      if (!split.train[static_cast<std::size_t>(u)].empty())
        prof_m.add(ref_mean_pi(split.train[static_cast<std::size_t>(u)], segments.popularity));
      lists.push_back(rec);
    }
    v.ndcg = ndcg_m.get();
    v.kld = kld_m.get();
    v.novelty = nov_m.get();
    v.users = ndcg_m.n;
    v.popularity_lift = (prof_m.n && rec_m.n && prof_m.get() > 0.0)
                            ? (rec_m.get() - prof_m.get()) / prof_m.get()
                            : kNaN;
    if (!members.empty()) {
      v.coverage = ref_coverage(all_items, lists);
      v.dpf = (head_items.empty() || tail_items.empty())
                  ? kNaN
                  : ref_coverage(head_items, lists) - ref_coverage(tail_items, lists);
    } else {
      v.coverage = kNaN;
      v.dpf = kNaN;
    }
    return v;
  };

  MetricsReport rep;
  rep.k = k;
  rep.total_users = users;
  rep.num_items = store.num_items;
  std::vector<int> everyone(users);
  std::iota(everyone.begin(), everyone.end(), 0);
  rep.overall = aggregate_users(everyone);
  rep.evaluated_users = rep.overall.users;

  for (UserType t : {UserType::niche, UserType::diverse, UserType::blockbuster}) {
    std::vector<int> members;
    for (int u = 0; u < users; ++u)
      if (segments.user_type[static_cast<std::size_t>(u)] == t) members.push_back(u);
    if (members.empty()) {
      MetricValues v;
      v.ndcg = v.kld = v.popularity_lift = v.novelty = v.coverage = v.dpf = kNaN;
      rep.by_user_type[user_type_name(t)] = v;
    } else {
      rep.by_user_type[user_type_name(t)] = aggregate_users(members);
    }
  }

  for (int gidx = 0; gidx < 2; ++gidx) {
    const bool want_head = gidx == 0;
    MetricValues v;
    RefMean ndcg_m, kld_m, nov_m, prof_m, rec_m;
    for (int u = 0; u < users; ++u) {
      const auto& rec_full = recs[static_cast<std::size_t>(u)].items;
      const auto rec_g = filter_group(rec_full, want_head);
      const auto test_g = filter_group(split.test[static_cast<std::size_t>(u)], want_head);
      const auto train_g = filter_group(split.train[static_cast<std::size_t>(u)], want_head);
      if (!test_g.empty()) ndcg_m.add(ref_ndcg(rec_g, test_g, k));
      if (!rec_g.empty() && !split.train[static_cast<std::size_t>(u)].empty()) {
        kld_m.add(ref_kld(split.train[static_cast<std::size_t>(u)], rec_g, store, alpha));
        nov_m.add(ref_novelty(rec_g, segments.popularity));
        rec_m.add(ref_mean_pi(rec_g, segments.popularity));
      }
      if (!train_g.empty()) prof_m.add(ref_mean_pi(train_g, segments.popularity));
    }
    v.ndcg = ndcg_m.get();
    v.kld = kld_m.get();
    v.novelty = nov_m.get();
    v.users = ndcg_m.n;
    v.popularity_lift = (prof_m.n && rec_m.n && prof_m.get() > 0.0)
                            ? (rec_m.get() - prof_m.get()) / prof_m.get()
                            : kNaN;
    std::vector<std::vector<ItemIndex>> lists;
    for (int u = 0; u < users; ++u) lists.push_back(recs[static_cast<std::size_t>(u)].items);
    const auto& group_items = want_head ? head_items : tail_items;
    v.coverage = group_items.empty() ? kNaN : ref_coverage(group_items, lists);
    v.dpf = kNaN;
    rep.by_item_group[want_head ? "I1" : "I2"] = v;
  }
  return rep;
}

namespace {

double cell_distance(double a, double b) {
  if (std::isnan(a) && std::isnan(b)) return 0.0;
  if (std::isnan(a) || std::isnan(b)) return kInf;
  return std::abs(a - b);
}

double values_distance(const MetricValues& a, const MetricValues& b) {
  double d = 0.0;
  d = std::max(d, cell_distance(a.ndcg, b.ndcg));
  d = std::max(d, cell_distance(a.kld, b.kld));
  d = std::max(d, cell_distance(a.popularity_lift, b.popularity_lift));
  d = std::max(d, cell_distance(a.novelty, b.novelty));
  d = std::max(d, cell_distance(a.coverage, b.coverage));
  d = std::max(d, cell_distance(a.dpf, b.dpf));
  if (a.users != b.users) return kInf;
  return d;
}

}  // namespace

double report_distance(const MetricsReport& a, const MetricsReport& b) {
  double d = values_distance(a.overall, b.overall);
  for (const auto& [name, va] : a.by_user_type) {
    if (!b.by_user_type.count(name)) return kInf;
    d = std::max(d, values_distance(va, b.by_user_type.at(name)));
  }
  for (const auto& [name, va] : a.by_item_group) {
    if (!b.by_item_group.count(name)) return kInf;
    d = std::max(d, values_distance(va, b.by_item_group.at(name)));
  }
  return d;
}

SuiteResult metric_oracle_suite(int instances, std::uint64_t seed) {
  Stopwatch watch;
  std::string failure;
  double worst = 0.0;
  for (int n = 0; n < instances && failure.empty(); ++n) {
    const auto inst = fixtures::random_instance(mix_seed(seed, static_cast<std::uint64_t>(n)));
    const MetricsReport got =
        compute_metrics(inst.recs, inst.store, inst.split, inst.segments, inst.k);
    const MetricsReport want =
        reference_report(inst.recs, inst.store, inst.split, inst.segments, inst.k);
    const double d = report_distance(got, want);
    worst = std::max(worst, d);
    if (!(d <= 1e-12)) {
      std::ostringstream msg;
      msg << "instance " << n << ": production metrics differ from the brute-force reference by "
          << d;
      failure = msg.str();
    }
  }
  std::ostringstream ok;
  ok << instances << " instances, max deviation " << worst;
  return finish("metric-oracles", watch, failure, ok.str());
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

namespace {

struct FdCase {
  ModelKind kind;
  ModelDims dims;
  std::int32_t users = 6, items = 9;
};

std::vector<FdCase> fd_cases() {
  std::vector<FdCase> cases;
  {
    FdCase c;
    c.kind = ModelKind::svd;
    c.dims.latent_dim = 3;
    cases.push_back(c);
  }
  {
    FdCase c;
    c.kind = ModelKind::bpr;
    c.dims.latent_dim = 3;
    cases.push_back(c);
  }
  {
    FdCase c;
    c.kind = ModelKind::ncf;
    c.dims.gmf_dim = 4;
    c.dims.mlp_emb_dim = 4;
    c.dims.mlp_hidden1 = 6;
    c.dims.mlp_hidden2 = 3;
    c.dims.dropout = 0.5;
    cases.push_back(c);
  }
  {
    FdCase c;
    c.kind = ModelKind::vae;
    c.dims.vae_hidden = 12;
    c.dims.vae_latent = 5;
    cases.push_back(c);
  }
  return cases;
}

}  // namespace

SuiteResult gradient_check_suite(int draws_per_model, ClipFn clip_fn) {
  Stopwatch watch;
  if (!clip_fn) clip_fn = [](std::vector<double> g, double c) { return clip(std::move(g), c); };
  std::string failure;
  double worst_rel = 0.0;

  for (const FdCase& fd : fd_cases()) {
    if (!failure.empty()) break;
    int accepted = 0;
    std::uint64_t attempt = 0;
    while (accepted < draws_per_model && failure.empty()) {
      const std::uint64_t draw_seed =
          mix_seed(mix_seed(0xfdc4ec5ULL, static_cast<std::uint64_t>(fd.kind)), attempt);
      ++attempt;
      if (attempt > static_cast<std::uint64_t>(4 * draws_per_model) + 64) {
        failure = "finite differences: too many redraws for " +
                  std::string(model_kind_name(fd.kind));
        break;
      }
      SplitMix64 rng(draw_seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      std::normal_distribution<double> n01(0.0, 1.0);

      ModelState state = init_model(fd.kind, fd.dims, fd.users, fd.items, draw_seed);
      const double scales[3] = {0.05, 0.2, 0.6};
      const double scale = scales[accepted % 3];
      for (double& p : state.params) p = scale * n01(rng);

      TrainExample ex;
      ex.user = static_cast<UserIndex>(unit(rng) * fd.users);
      ex.item = static_cast<ItemIndex>(unit(rng) * fd.items);
      ex.label = unit(rng) < 0.5 ? 0.0 : 1.0;
      if (fd.kind == ModelKind::bpr) {
        do {
          ex.neg_item = static_cast<ItemIndex>(unit(rng) * fd.items);
        } while (ex.neg_item == ex.item);
        ex.label = 1.0;
      }
      std::vector<ItemIndex> row;
      if (fd.kind == ModelKind::vae) {
        for (ItemIndex i = 0; i < fd.items; ++i)
          if (unit(rng) < 0.4) row.push_back(i);
        if (row.empty()) row.push_back(static_cast<ItemIndex>(unit(rng) * fd.items));
      }
      const std::uint64_t noise_key = mix_seed(0xfdULL, draw_seed);

      const ActivationDiag diag = activation_diagnostics(state, ex, row, noise_key);
      if (fd.kind == ModelKind::ncf && diag.min_abs_relu_pre < 1e-4) continue;  // relu kink
      double tol = 1e-4;
      if (fd.kind == ModelKind::ncf && diag.sigmoid_slope < 1e-3) tol = 1e-3;
      if (fd.kind == ModelKind::vae && diag.max_abs_tanh > 0.995) tol = 1e-3;

      const auto [loss, grad] = loss_and_grad(state, ex, row, noise_key);
      (void)loss;

      std::vector<std::size_t> support;
      for (std::size_t kx = 0; kx < grad.size(); ++kx)
        if (grad[kx] != 0.0) support.push_back(kx);
      std::vector<std::size_t> coords;
      for (int c = 0; c < 6 && !support.empty(); ++c)
        coords.push_back(support[static_cast<std::size_t>(unit(rng) * support.size())]);
      for (int c = 0; c < 2; ++c)
        coords.push_back(static_cast<std::size_t>(unit(rng) * grad.size()));

      for (std::size_t kx : coords) {
        const double h = 1e-5 * std::max(1.0, std::abs(state.params[kx]));
        ModelState bumped = state;
        bumped.params[kx] += h;
        const double lp = loss_and_grad(bumped, ex, row, noise_key).first;
        bumped.params[kx] = state.params[kx] - h;
        const double lm = loss_and_grad(bumped, ex, row, noise_key).first;
        const double fdval = (lp - lm) / (2.0 * h);
        const double rel =
            std::abs(fdval - grad[kx]) / std::max({std::abs(fdval), std::abs(grad[kx]), 1e-6});
        worst_rel = std::max(worst_rel, rel);
        if (!(rel <= tol)) {
          std::ostringstream msg;
          msg << model_kind_name(fd.kind) << " gradient mismatch at coord " << kx << ": analytic "
              << grad[kx] << " vs fd " << fdval << " (rel " << rel << ", tol " << tol << ")";
          failure = msg.str();
          break;
        }
      }
      ++accepted;
    }
  }

  // clip contract: the mutation fixture must trip these
  if (failure.empty()) {
    SplitMix64 rng(0xc11bULL);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int t = 0; t < 100 && failure.empty(); ++t) {
      std::vector<double> g(40);
      for (double& x : g) x = n01(rng);
      const double norm = l2_norm(g);
      const double c_small = norm * (0.2 + 0.6 * unit(rng));
      const std::vector<double> clipped = clip_fn(g, c_small);
      const double out_norm = l2_norm(clipped);
      if (!(out_norm <= c_small * (1.0 + 1e-9)) || !(out_norm >= c_small * (1.0 - 1e-9))) {
        failure = "clip: output norm " + std::to_string(out_norm) + " not at the bound " +
                  std::to_string(c_small);
        break;
      }
      for (std::size_t kx = 0; kx < g.size(); ++kx) {
        if (std::abs(clipped[kx] - g[kx] * (c_small / norm)) > 1e-9 * std::max(1.0, norm)) {
          failure = "clip: direction not preserved";
          break;
        }
      }
      const double c_big = norm * (1.0 + unit(rng));
      const std::vector<double> untouched = clip_fn(g, c_big);
      if (untouched != g) {
        failure = "clip: in-bound gradient was modified";
        break;
      }
      const std::vector<double> zeros = clip_fn(std::vector<double>(40, 0.0), 1.0);
      if (l2_norm(zeros) != 0.0) {
        failure = "clip: zero vector not preserved";
        break;
      }
    }
  }

  std::ostringstream ok;
  ok << draws_per_model << " draws per model, worst relative error " << worst_rel;
  return finish("gradient-checks", watch, failure, ok.str());
}

// ---------------------------------------------------------------------------
// accountant
// ---------------------------------------------------------------------------

namespace {

// numerical Renyi divergence between N(1,sigma^2) and N(0,sigma^2)
double renyi_gaussian_quadrature(double sigma, double alpha) {
  const double lo = alpha - 14.0 * sigma - 2.0;
  const double hi = alpha + 14.0 * sigma + 2.0;
  const int n = 40000;  // Simpson on a smooth unimodal integrand
  const double step = (hi - lo) / n;
  auto integrand = [&](double x) {
    const double e = -(alpha * (x - 1.0) * (x - 1.0) + (1.0 - alpha) * x * x) /
                     (2.0 * sigma * sigma);
    return std::exp(e);
  };
  double sum = integrand(lo) + integrand(hi);
  for (int i = 1; i < n; ++i) sum += integrand(lo + i * step) * (i % 2 ? 4.0 : 2.0);
  const double integral = sum * step / 3.0 / (sigma * std::sqrt(2.0 * M_PI));
  return std::log(integral) / (alpha - 1.0);
}

}  // namespace

SuiteResult accountant_suite() {
  Stopwatch watch;
  std::string failure;
  std::ostringstream detail;

  // q = 1 closed form against quadrature of the divergence itself
  for (const auto& [sigma, alpha] : std::vector<std::pair<double, double>>{
           {2.0, 8.0}, {1.0, 2.0}, {0.7, 5.0}, {3.0, 32.0}, {1.5, 1.25}}) {
    const double got = rdp_subsampled_gaussian(1.0, sigma, alpha);
    const double closed = alpha / (2.0 * sigma * sigma);
    const double quad = renyi_gaussian_quadrature(sigma, alpha);
    if (std::abs(got - closed) > 1e-9) {
      failure = "rdp(q=1) deviates from alpha/(2 sigma^2)";
      break;
    }
    if (std::abs(got - quad) > 1e-7 * std::max(1.0, std::abs(quad))) {
      std::ostringstream msg;
      msg << "rdp(q=1, sigma=" << sigma << ", alpha=" << alpha << ") = " << got
          << " vs quadrature " << quad;
      failure = msg.str();
      break;
    }
  }

  // alpha = 2 subsampled closed form: log(1 + q^2 (e^{1/sigma^2} - 1))
  if (failure.empty()) {
    for (const auto& [q, sigma] : std::vector<std::pair<double, double>>{
             {0.01, 1.0}, {0.1, 2.0}, {0.5, 0.8}, {0.9, 4.0}}) {
      const double got = rdp_subsampled_gaussian(q, sigma, 2.0);
      const double want = std::log(1.0 + q * q * (std::exp(1.0 / (sigma * sigma)) - 1.0));
      if (std::abs(got - want) > 1e-10 * std::max(1.0, std::abs(want))) {
        std::ostringstream msg;
        msg << "subsampled rdp(alpha=2, q=" << q << ", sigma=" << sigma << ") = " << got
            << ", closed form " << want;
        failure = msg.str();
        break;
      }
    }
  }

  // sigma calibration
  if (failure.empty()) {
    const double sigma = noise_multiplier_for(1.0, 1e-5);
    const long double exact = std::sqrt(2.0L * std::log(1.25e5L));
    if (std::abs(sigma - static_cast<double>(exact)) > 1e-12 * static_cast<double>(exact))
      failure = "noise_multiplier_for(1, 1e-5) deviates from the closed form";
    else if (std::abs(sigma / 4.84 - 1.0) > 0.005)
      failure = "noise_multiplier_for(1, 1e-5) = " + std::to_string(sigma) +
                " outside 4.84 +- 0.5%";
    else
      detail << "sigma(1,1e-5)=" << sigma << "; ";
    // inverse proportionality and the delta -> 1.25 limit
    if (failure.empty() &&
        std::abs(noise_multiplier_for(2.0, 1e-5) - sigma / 2.0) > 1e-12 * sigma)
      failure = "noise_multiplier_for: doubling epsilon must halve sigma";
    if (failure.empty() && noise_multiplier_for(1.0, 1.249999999) > 1e-4)
      failure = "noise_multiplier_for: sigma must vanish as delta -> 1.25";
  }

  // ledger: T=0, the q=1 grid example, monotonicity on a random grid
  if (failure.empty()) {
    PrivacyLedger zero;
    zero.sample_rate = 0.5;
    zero.noise_multiplier = 2.0;
    if (ledger_epsilon(zero, 1e-5) != 0.0) failure = "ledger with T=0 must give epsilon 0";
  }
  if (failure.empty()) {
    PrivacyLedger one;
    one.sample_rate = 1.0;
    one.noise_multiplier = 4.0;
    one.record_step();
    const double got = ledger_epsilon(one, 1e-5);
    double want = kInf;
    for (double alpha : default_rdp_orders())
      want = std::min(want, alpha / 32.0 + std::log(1e5) / (alpha - 1.0));
    if (std::abs(got - want) > 1e-12 * want) {
      std::ostringstream msg;
      msg << "ledger example: got " << got << ", grid oracle " << want;
      failure = msg.str();
    } else {
      detail << "eps(q=1,s=4,T=1)=" << got << "; ";
    }
    // a dense grid can only do better (the grid answer is an upper bound)
    double dense = kInf;
    for (double alpha = 1.05; alpha < 400.0; alpha += 0.01)
      dense = std::min(dense, alpha / 32.0 + std::log(1e5) / (alpha - 1.0));
    if (failure.empty() && (got < dense - 1e-9 || got > dense * 1.02))
      failure = "ledger example too far from the dense-grid optimum";
  }
  if (failure.empty()) {
    SplitMix64 rng(0xacc7ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int t = 0; t < 100 && failure.empty(); ++t) {
      PrivacyLedger ledger;
      ledger.sample_rate = 0.01 + 0.99 * unit(rng);
      ledger.noise_multiplier = 0.3 + 4.7 * unit(rng);
      ledger.steps = 1 + static_cast<std::uint64_t>(unit(rng) * 10000);
      const double delta = 1e-6 + unit(rng) * 1e-4;
      const double base = ledger_epsilon(ledger, delta);

      PrivacyLedger more_steps = ledger;
      more_steps.steps *= 2;
      if (ledger_epsilon(more_steps, delta) < base * (1.0 - 1e-12)) {
        failure = "ledger epsilon decreased when doubling T";
        break;
      }
      PrivacyLedger more_noise = ledger;
      more_noise.noise_multiplier *= 1.5;
      if (ledger_epsilon(more_noise, delta) > base * (1.0 + 1e-12)) {
        failure = "ledger epsilon increased with more noise";
        break;
      }
      PrivacyLedger more_data = ledger;
      more_data.sample_rate = std::min(1.0, ledger.sample_rate * 1.5);
      if (ledger_epsilon(more_data, delta) < base * (1.0 - 1e-12)) {
        failure = "ledger epsilon decreased with a larger sample rate";
        break;
      }
    }
  }
  if (failure.empty()) {
    if (rdp_subsampled_gaussian(1e-9, 1.0, 8.0) > 1e-6)
      failure = "rdp must vanish as q -> 0";
    else if (rdp_subsampled_gaussian(0.5, 1e6, 8.0) > 1e-6)
      failure = "rdp must vanish as sigma -> infinity";
  }

  return finish("accountant", watch, failure, detail.str());
}

// ---------------------------------------------------------------------------
// ldp rates
// ---------------------------------------------------------------------------

SuiteResult ldp_rate_suite() {
  Stopwatch watch;
  std::string failure;
  std::ostringstream detail;

  {
    const auto p = flip_probabilities(std::log(3.0));
    if (std::abs(p.p_pos - 0.75) > 1e-15 || std::abs(p.p_neg - 0.25) > 1e-15)
      failure = "flip_probabilities(ln 3) must be exactly (0.75, 0.25)";
  }
  if (failure.empty()) {
    const auto p = flip_probabilities(1e-12);
    if (std::abs(p.p_pos - 0.5) > 1e-12 || std::abs(p.p_neg - 0.5) > 1e-12)
      failure = "flip_probabilities must approach the fair coin as eps -> 0";
  }
  if (failure.empty()) {
    const auto p = flip_probabilities(1.0);
    if (std::abs(p.p_pos - 0.7310585786300049) > 1e-15 ||
        std::abs(p.p_neg - 0.2689414213699951) > 1e-15)
      failure = "flip_probabilities(1) deviates from e/(e+1), 1/(e+1)";
    if (failure.empty() && std::abs(p.p_pos + p.p_neg - 1.0) > 1e-15)
      failure = "flip probabilities must sum to 1";
    if (failure.empty() && std::abs(p.p_pos / p.p_neg - std::exp(1.0)) > 1e-12)
      failure = "flip probability ratio must equal e^eps";
  }
  if (failure.empty()) {
    double prev_pos = 0.0, prev_neg = 1.0;
    for (double eps : {0.1, 0.5, 1.0, 2.0, 5.0, 10.0}) {
      const auto p = flip_probabilities(eps);
      if (p.p_pos <= prev_pos || p.p_neg >= prev_neg) {
        failure = "flip probabilities must be strictly monotone in eps";
        break;
      }
      prev_pos = p.p_pos;
      prev_neg = p.p_neg;
    }
  }

  if (failure.empty()) {
    // empirical retention/addition rates over >= 1e5 Bernoulli events each
    constexpr std::int32_t kItems = 200;
    std::vector<ItemIndex> positives(100);
    std::iota(positives.begin(), positives.end(), 0);
    constexpr int kTrials = 1000;  // 1000 x 100 = 1e5 events per side
    for (double eps : {0.5, 1.0, 2.0}) {
      const auto p = flip_probabilities(eps);
      std::int64_t kept = 0, added = 0;
      for (int t = 0; t < kTrials; ++t) {
        SplitMix64 rng(mix_seed(0x10a7e5ULL, mix_seed(static_cast<std::uint64_t>(eps * 1000), t)));
        const auto out = perturb_user_binomial(positives, kItems, p, rng);
        for (ItemIndex i : out) (i < 100 ? kept : added) += 1;
      }
      const double n = 100.0 * kTrials;
      const double kept_rate = kept / n;
      const double added_rate = added / n;
      const double pos_band = 4.0 * std::sqrt(p.p_pos * (1.0 - p.p_pos) / n);
      const double neg_band = 4.0 * std::sqrt(p.p_neg * (1.0 - p.p_neg) / n);
      if (std::abs(kept_rate - p.p_pos) > pos_band) {
        std::ostringstream msg;
        msg << "retention rate " << kept_rate << " outside " << p.p_pos << " +- " << pos_band
            << " at eps " << eps;
        failure = msg.str();
        break;
      }
      if (std::abs(added_rate - p.p_neg) > neg_band) {
        std::ostringstream msg;
        msg << "addition rate " << added_rate << " outside " << p.p_neg << " +- " << neg_band
            << " at eps " << eps;
        failure = msg.str();
        break;
      }
      detail << "eps=" << eps << " kept=" << kept_rate << " added=" << added_rate << "; ";
    }
  }
  return finish("ldp-rates", watch, failure, detail.str());
}

// ---------------------------------------------------------------------------
// gaussian noise distribution
// ---------------------------------------------------------------------------

SuiteResult noise_distribution_suite() {
  Stopwatch watch;
  std::string failure;
  std::ostringstream detail;

  const auto run_case = [&](double sigma, double clip_norm, int batch, std::uint64_t seed) {
    constexpr std::size_t kSamples = 100000;
    ClipNoiseSpec spec;
    spec.clip_norm = clip_norm;
    spec.noise_multiplier = sigma;
    spec.batch_size = batch;
    spec.sample_rate = 0.5;
    std::vector<std::vector<double>> zeros(static_cast<std::size_t>(batch),
                                           std::vector<double>(kSamples, 0.0));
    SplitMix64 rng(seed);
    std::vector<double> samples = aggregate_and_noise(zeros, spec, rng);
    const double sd = sigma * clip_norm / batch;

    double mean = 0.0, var = 0.0;
    for (double x : samples) mean += x;
    mean /= kSamples;
    for (double x : samples) var += (x - mean) * (x - mean);
    var /= (kSamples - 1);
    if (std::abs(var / (sd * sd) - 1.0) > 0.02) {
      std::ostringstream msg;
      msg << "noise variance " << var << " deviates from " << sd * sd << " by more than 2%";
      failure = msg.str();
      return;
    }
    if (std::abs(mean) > 4.0 * sd / std::sqrt(static_cast<double>(kSamples))) {
      failure = "noise mean too far from zero";
      return;
    }
    std::sort(samples.begin(), samples.end());
    double d_stat = 0.0;
    for (std::size_t i = 0; i < kSamples; ++i) {
      const double cdf = 0.5 * std::erfc(-samples[i] / (sd * std::sqrt(2.0)));
      const double lo = static_cast<double>(i) / kSamples;
      const double hi = static_cast<double>(i + 1) / kSamples;
      d_stat = std::max({d_stat, std::abs(cdf - lo), std::abs(cdf - hi)});
    }
    // asymptotic KS critical value at significance 0.01
    const double d_crit = 1.6276 / std::sqrt(static_cast<double>(kSamples));
    if (d_stat > d_crit) {
      std::ostringstream msg;
      msg << "KS statistic " << d_stat << " above the 0.01 critical value " << d_crit
          << " (sigma=" << sigma << ", C=" << clip_norm << ", B=" << batch << ")";
      failure = msg.str();
      return;
    }
    detail << "KS(s=" << sigma << ",C=" << clip_norm << ",B=" << batch << ")=" << d_stat << "; ";
  };

  run_case(1.0, 1.0, 1, 0x90151ULL);
  if (failure.empty()) run_case(2.0, 3.0, 4, 0x90152ULL);
  return finish("noise-distribution", watch, failure, detail.str());
}

std::vector<SuiteResult> run_all() {
  return {metric_oracle_suite(), gradient_check_suite(), accountant_suite(), ldp_rate_suite(),
          noise_distribution_suite()};
}

}  // namespace recpriv::verify
