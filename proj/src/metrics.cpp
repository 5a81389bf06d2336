#include "recpriv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "recpriv/parallel.hpp"

namespace recpriv {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ideal_dcg(int ones) {
  double s = 0.0;
  for (int i = 1; i <= ones; ++i) s += 1.0 / std::log2(static_cast<double>(i) + 1.0);
  return s;
}

bool contains(std::span<const ItemIndex> sorted, ItemIndex i) {
  return std::binary_search(sorted.begin(), sorted.end(), i);
}

// category distribution of an item list: each item spreads 1/|cats| mass
std::vector<double> category_distribution(std::span<const ItemIndex> items,
                                          const InteractionStore& store) {
  std::vector<double> dist(store.category_names.size(), 0.0);
  for (ItemIndex i : items) {
    const auto& cats = store.item_categories[static_cast<std::size_t>(i)];
    const double w = 1.0 / static_cast<double>(cats.size());
    for (std::int32_t z : cats) dist[static_cast<std::size_t>(z)] += w;
  }
  const double total = static_cast<double>(items.size());
  for (double& v : dist) v /= total;
  return dist;
}

double mean_popularity(std::span<const ItemIndex> items, std::span<const double> pop) {
  double s = 0.0;
  for (ItemIndex i : items) s += pop[static_cast<std::size_t>(i)];
  return s / static_cast<double>(items.size());
}

json values_to_json(const MetricValues& v) {
  return {{"ndcg", v.ndcg},       {"kld", v.kld},         {"popularity_lift", v.popularity_lift},
          {"novelty", v.novelty}, {"coverage", v.coverage}, {"dpf", v.dpf},
          {"users", v.users}};
}

// NaN round-trips as JSON null
double num_or_nan(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return kNaN;
  return j[key].get<double>();
}

MetricValues values_from_json(const json& j) {
  MetricValues v;
  v.ndcg = num_or_nan(j, "ndcg");
  v.kld = num_or_nan(j, "kld");
  v.popularity_lift = num_or_nan(j, "popularity_lift");
  v.novelty = num_or_nan(j, "novelty");
  v.coverage = num_or_nan(j, "coverage");
  v.dpf = num_or_nan(j, "dpf");
  v.users = j.value("users", 0);
  return v;
}

}  // namespace

double ndcg_at_k(const RecommendationList& rec, std::span<const ItemIndex> relevant_sorted,
                 int k) {
  if (relevant_sorted.empty()) return kNaN;
  const int len = std::min<int>(k, static_cast<int>(rec.items.size()));
  double dcg = 0.0;
  for (int pos = 0; pos < len; ++pos) {
    if (contains(relevant_sorted, rec.items[static_cast<std::size_t>(pos)]))
      dcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
  }
  const double idcg = ideal_dcg(std::min<int>(k, static_cast<int>(relevant_sorted.size())));
  return dcg / idcg;
}

double kld_miscalibration(std::span<const ItemIndex> history, std::span<const ItemIndex> rec_items,
                          const InteractionStore& store, double alpha) {
  if (history.empty() || rec_items.empty())
    throw std::invalid_argument("kld_miscalibration: empty history or recommendation list");
  if (!(alpha > 0.0) || alpha > 1.0)
    throw std::invalid_argument("kld_miscalibration: alpha must be in (0,1]");
  const std::vector<double> p = category_distribution(history, store);
  const std::vector<double> q = category_distribution(rec_items, store);
  double kl = 0.0;
  for (std::size_t z = 0; z < p.size(); ++z) {
    if (p[z] <= 0.0) continue;
    const double q_smooth = (1.0 - alpha) * q[z] + alpha * p[z];
    kl += p[z] * std::log(p[z] / q_smooth);
  }
  return kl;
}

double gap(const std::vector<std::vector<ItemIndex>>& user_lists,
           std::span<const double> popularity) {
  if (user_lists.empty()) throw std::invalid_argument("gap: empty group");
  double s = 0.0;
  for (const auto& list : user_lists) {
    if (list.empty()) throw std::invalid_argument("gap: user with empty item list");
    s += mean_popularity(list, popularity);
  }
  return s / static_cast<double>(user_lists.size());
}

double popularity_lift(double gap_recommendations, double gap_profiles) {
  if (!(gap_profiles > 0.0))
    throw std::runtime_error("popularity_lift: profile GAP must be positive");
  return (gap_recommendations - gap_profiles) / gap_profiles;
}

double novelty(std::span<const ItemIndex> rec_items, std::span<const double> popularity) {
  if (rec_items.empty()) throw std::invalid_argument("novelty: empty recommendation list");
  double s = 0.0;
  for (ItemIndex i : rec_items) s += -std::log(popularity[static_cast<std::size_t>(i)]);
  return s / static_cast<double>(rec_items.size());
}

double coverage(std::span<const ItemIndex> item_set, const std::vector<RecommendationList>& recs) {
  if (item_set.empty()) throw std::invalid_argument("coverage: empty item set");
  ItemIndex max_item = 0;
  for (ItemIndex i : item_set) max_item = std::max(max_item, i);
  for (const auto& r : recs)
    for (ItemIndex i : r.items) max_item = std::max(max_item, i);
  std::vector<char> seen(static_cast<std::size_t>(max_item) + 1, 0);
  for (const auto& r : recs)
    for (ItemIndex i : r.items) seen[static_cast<std::size_t>(i)] = 1;
  std::size_t hit = 0;
  for (ItemIndex i : item_set) hit += seen[static_cast<std::size_t>(i)];
  return static_cast<double>(hit) / static_cast<double>(item_set.size());
}

double dpf(std::span<const ItemIndex> head_items, std::span<const ItemIndex> tail_items,
           const std::vector<RecommendationList>& recs) {
  return coverage(head_items, recs) - coverage(tail_items, recs);
}

std::vector<RecommendationList> recommend_all(const ModelState& state, const SplitDataset& split,
                                              const std::vector<std::vector<ItemIndex>>& train_rows,
                                              int k, bool serial) {
  const std::size_t users = split.train.size();
  std::vector<RecommendationList> recs(users);
  par::for_each_index(
      users,
      [&](std::size_t u) {
        recs[u] = recommend_topk(state, static_cast<UserIndex>(u), k, split.train[u],
                                 train_rows[u]);
      },
      serial);
  return recs;
}

namespace {

struct PerUser {
  double ndcg = kNaN;
  double kld = kNaN;
  double nov = kNaN;
  double profile_pi = kNaN;  // user-mean popularity of the training profile
  double rec_pi = kNaN;      // user-mean popularity of the list
  // item-group cells (index 0 = I1, 1 = I2)
  double g_ndcg[2] = {kNaN, kNaN};
  double g_kld[2] = {kNaN, kNaN};
  double g_nov[2] = {kNaN, kNaN};
  double g_profile_pi[2] = {kNaN, kNaN};
  double g_rec_pi[2] = {kNaN, kNaN};
};

struct Mean {
  double sum = 0.0;
  int n = 0;
  void add(double v) {
    if (std::isnan(v)) return;
    sum += v;
    ++n;
  }
  double value() const { return n == 0 ? kNaN : sum / static_cast<double>(n); }
};

}  // namespace

MetricsReport compute_metrics(const std::vector<RecommendationList>& recs,
                              const InteractionStore& store, const SplitDataset& split,
                              const SegmentMap& segments, int k, double alpha) {
  const std::size_t users = split.train.size();
  if (recs.size() != users) throw std::invalid_argument("compute_metrics: recs/users mismatch");

  std::vector<ItemIndex> head, tail;
  for (ItemIndex i = 0; i < store.num_items; ++i)
    (segments.head_flag[static_cast<std::size_t>(i)] ? head : tail).push_back(i);

  std::vector<PerUser> per(users);
  for (std::size_t u = 0; u < users; ++u) {
    const auto& rec = recs[u];
    PerUser& pu = per[u];
    pu.ndcg = ndcg_at_k(rec, split.test[u], k);
    if (!rec.items.empty()) {
      pu.kld = kld_miscalibration(split.train[u], rec.items, store, alpha);
      pu.nov = novelty(rec.items, segments.popularity);
      pu.rec_pi = mean_popularity(rec.items, segments.popularity);
    }
    if (!split.train[u].empty())
      pu.profile_pi = mean_popularity(split.train[u], segments.popularity);

    for (int gidx = 0; gidx < 2; ++gidx) {
      const bool want_head = gidx == 0;
      std::vector<ItemIndex> list_g, test_g, train_g;
      for (ItemIndex i : rec.items)
        if (segments.head_flag[static_cast<std::size_t>(i)] == want_head) list_g.push_back(i);
      for (ItemIndex i : split.test[u])
        if (segments.head_flag[static_cast<std::size_t>(i)] == want_head) test_g.push_back(i);
      for (ItemIndex i : split.train[u])
        if (segments.head_flag[static_cast<std::size_t>(i)] == want_head) train_g.push_back(i);
      if (!test_g.empty()) {
        RecommendationList sub;
        sub.user = rec.user;
        sub.items = list_g;
        pu.g_ndcg[gidx] = ndcg_at_k(sub, test_g, k);
      }
      if (!list_g.empty() && !split.train[u].empty()) {
        pu.g_kld[gidx] = kld_miscalibration(split.train[u], list_g, store, alpha);
        pu.g_nov[gidx] = novelty(list_g, segments.popularity);
        pu.g_rec_pi[gidx] = mean_popularity(list_g, segments.popularity);
      }
      if (!train_g.empty()) pu.g_profile_pi[gidx] = mean_popularity(train_g, segments.popularity);
    }
  }

  // aggregation: serial, in user order, so results are bitwise stable
  auto aggregate = [&](const std::vector<std::size_t>& members) {
    MetricValues v;
    Mean ndcg_m, kld_m, nov_m, prof_m, rec_m;
    std::vector<RecommendationList> group_recs;
    group_recs.reserve(members.size());
    for (std::size_t u : members) {
      ndcg_m.add(per[u].ndcg);
      kld_m.add(per[u].kld);
      nov_m.add(per[u].nov);
      prof_m.add(per[u].profile_pi);
      rec_m.add(per[u].rec_pi);
      group_recs.push_back(recs[u]);
    }
    v.ndcg = ndcg_m.value();
    v.kld = kld_m.value();
    v.novelty = nov_m.value();
    v.users = ndcg_m.n;
    if (prof_m.n > 0 && rec_m.n > 0 && prof_m.value() > 0.0)
      v.popularity_lift = popularity_lift(rec_m.value(), prof_m.value());
    else
      v.popularity_lift = kNaN;
    if (!members.empty() && !group_recs.empty()) {
      std::vector<ItemIndex> all_items(static_cast<std::size_t>(store.num_items));
      for (ItemIndex i = 0; i < store.num_items; ++i) all_items[static_cast<std::size_t>(i)] = i;
      v.coverage = coverage(all_items, group_recs);
      v.dpf = head.empty() || tail.empty() ? kNaN : dpf(head, tail, group_recs);
    } else {
      v.coverage = kNaN;
      v.dpf = kNaN;
    }
    return v;
  };

  MetricsReport report;
  report.k = k;
  report.total_users = static_cast<int>(users);
  report.num_items = store.num_items;

  std::vector<std::size_t> everyone(users);
  for (std::size_t u = 0; u < users; ++u) everyone[u] = u;
  report.overall = aggregate(everyone);
  report.evaluated_users = report.overall.users;

  for (UserType t : {UserType::niche, UserType::diverse, UserType::blockbuster}) {
    std::vector<std::size_t> members;
    for (std::size_t u = 0; u < users; ++u)
      if (segments.user_type[u] == t) members.push_back(u);
    if (members.empty()) {
      MetricValues v;
      v.ndcg = v.kld = v.popularity_lift = v.novelty = v.coverage = v.dpf = kNaN;
      v.users = 0;
      report.by_user_type[user_type_name(t)] = v;
      continue;
    }
    report.by_user_type[user_type_name(t)] = aggregate(members);
  }

  for (int gidx = 0; gidx < 2; ++gidx) {
    MetricValues v;
    Mean ndcg_m, kld_m, nov_m, prof_m, rec_m;
    for (std::size_t u = 0; u < users; ++u) {
      ndcg_m.add(per[u].g_ndcg[gidx]);
      kld_m.add(per[u].g_kld[gidx]);
      nov_m.add(per[u].g_nov[gidx]);
      prof_m.add(per[u].g_profile_pi[gidx]);
      rec_m.add(per[u].g_rec_pi[gidx]);
    }
    v.ndcg = ndcg_m.value();
    v.kld = kld_m.value();
    v.novelty = nov_m.value();
    v.users = ndcg_m.n;
    v.popularity_lift = (prof_m.n > 0 && rec_m.n > 0 && prof_m.value() > 0.0)
                            ? popularity_lift(rec_m.value(), prof_m.value())
                            : kNaN;
    const auto& group_items = gidx == 0 ? head : tail;
    v.coverage = group_items.empty() ? kNaN : coverage(group_items, recs);
    v.dpf = kNaN;  // head-vs-tail comparison does not decompose per group
    report.by_item_group[gidx == 0 ? "I1" : "I2"] = v;
  }
  return report;
}

MetricsReport evaluate(const ModelState& state, const InteractionStore& store,
                       const SplitDataset& split, const SegmentMap& segments, int k,
                       const std::vector<std::vector<ItemIndex>>& train_rows, bool serial) {
  const auto recs = recommend_all(state, split, train_rows, k, serial);
  return compute_metrics(recs, store, split, segments, k);
}

std::string MetricsReport::to_json() const {
  json doc;
  doc["k"] = k;
  doc["evaluated_users"] = evaluated_users;
  doc["total_users"] = total_users;
  doc["num_items"] = num_items;
  doc["overall"] = values_to_json(overall);
  json types = json::object(), groups = json::object();
  for (const auto& [name, v] : by_user_type) types[name] = values_to_json(v);
  for (const auto& [name, v] : by_item_group) groups[name] = values_to_json(v);
  doc["by_user_type"] = std::move(types);
  doc["by_item_group"] = std::move(groups);
  return doc.dump();
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  json doc = json::parse(text);
  MetricsReport r;
  r.k = doc.value("k", 10);
  r.evaluated_users = doc.value("evaluated_users", 0);
  r.total_users = doc.value("total_users", 0);
  r.num_items = doc.value("num_items", 0);
  r.overall = values_from_json(doc.at("overall"));
  for (auto& [name, v] : doc.at("by_user_type").items())
    r.by_user_type[name] = values_from_json(v);
  for (auto& [name, v] : doc.at("by_item_group").items())
    r.by_item_group[name] = values_from_json(v);
  return r;
}

}  // namespace recpriv
