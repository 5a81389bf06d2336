#include "recpriv/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "recpriv/common.hpp"

namespace recpriv::fixtures {

namespace {

constexpr int kTasteDim = 4;

std::vector<double> gaussian_vector(std::size_t n, SplitMix64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = n01(rng);
  return v;
}

}  // namespace

ParsedRatings synthetic_ratings(int num_users, int num_items, std::uint64_t seed) {
  SplitMix64 rng(mix_seed(seed, 0x5f1eULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::vector<double>> user_taste(num_users), item_vec(num_items);
  for (auto& t : user_taste) t = gaussian_vector(kTasteDim, rng);
  for (auto& v : item_vec) v = gaussian_vector(kTasteDim, rng);

  // Zipf-ish popularity over a random item permutation
  std::vector<int> pop_rank(num_items);
  std::iota(pop_rank.begin(), pop_rank.end(), 0);
  std::shuffle(pop_rank.begin(), pop_rank.end(), rng);
  std::vector<double> log_pop(num_items);
  for (int i = 0; i < num_items; ++i)
    log_pop[i] = -0.8 * std::log(1.0 + static_cast<double>(pop_rank[i]));

  ParsedRatings out;
  for (int i = 0; i < num_items; ++i) {
    std::vector<std::string> cats;
    int pattern = 0;
    for (int d = 0; d < 3; ++d) pattern |= (item_vec[i][d] > 0.0) << d;
    cats.push_back("c" + std::to_string(pattern));
    if (unit(rng) < 0.5) {
      const int major = static_cast<int>(
          std::max_element(item_vec[i].begin(), item_vec[i].end()) - item_vec[i].begin());
      const std::string extra = "m" + std::to_string(major);
      if (std::find(cats.begin(), cats.end(), extra) == cats.end()) cats.push_back(extra);
    }
    out.item_categories["i" + std::to_string(i)] = std::move(cats);
  }

  std::int64_t stamp = 1'000'000;
  std::uniform_int_distribution<int> basket(15, 30);
  for (int u = 0; u < num_users; ++u) {
    // Gumbel top-k: popular and taste-matching items surface most often
    std::vector<std::pair<double, int>> keys(num_items);
    for (int i = 0; i < num_items; ++i) {
      double affinity = 0.0;
      for (int d = 0; d < kTasteDim; ++d) affinity += user_taste[u][d] * item_vec[i][d];
      const double gumbel = -std::log(-std::log(std::max(unit(rng), 1e-12)));
      keys[i] = {1.2 * affinity + 1.6 * log_pop[i] + gumbel, i};
    }
    const int m = std::min(basket(rng), num_items);
    std::partial_sort(keys.begin(), keys.begin() + m, keys.end(),
                      [](auto& a, auto& b) { return a.first > b.first; });
    for (int j = 0; j < m; ++j) {
      RawRating r;
      r.user_id = "u" + std::to_string(u);
      r.item_id = "i" + std::to_string(keys[j].second);
      r.rating = unit(rng) < 0.7 ? 5 : 4;
      r.timestamp = stamp++;
      out.ratings.push_back(std::move(r));
    }
    // low ratings and the occasional duplicate to exercise preprocessing
    if (m >= 2) {
      RawRating low;
      low.user_id = "u" + std::to_string(u);
      low.item_id = "i" + std::to_string(keys[m - 1].second + 1 < num_items
                                             ? keys[m - 1].second + 1
                                             : 0);
      low.rating = 1 + static_cast<int>(unit(rng) * 2.0);
      low.timestamp = stamp++;
      out.ratings.push_back(low);
      if (unit(rng) < 0.3) {
        RawRating dup;
        dup.user_id = "u" + std::to_string(u);
        dup.item_id = "i" + std::to_string(keys[0].second);
        dup.rating = 4;
        dup.timestamp = stamp++;
        out.ratings.push_back(dup);
      }
    }
  }
  out.report.total_records = out.ratings.size();
  out.report.emitted = out.ratings.size();
  return out;
}

InteractionStore synthetic_store(int num_users, int num_items, std::uint64_t seed) {
  return preprocess(synthetic_ratings(num_users, num_items, seed));
}

RandomInstance random_instance(std::uint64_t seed) {
  SplitMix64 rng(mix_seed(seed, 0x9a11ULL));
  std::uniform_int_distribution<int> users_d(3, 10), items_d(4, 10), cats_d(2, 5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  RandomInstance inst;
  InteractionStore& store = inst.store;
  store.num_users = users_d(rng);
  store.num_items = items_d(rng);
  const int num_cats = cats_d(rng);
  for (int c = 0; c < num_cats; ++c) store.category_names.push_back("g" + std::to_string(c));
  for (ItemIndex i = 0; i < store.num_items; ++i) {
    std::vector<std::int32_t> cats;
    for (int c = 0; c < num_cats; ++c)
      if (unit(rng) < 0.5) cats.push_back(c);
    if (cats.empty()) cats.push_back(static_cast<std::int32_t>(i % num_cats));
    store.item_categories.push_back(std::move(cats));
    store.item_external_ids.push_back("i" + std::to_string(i));
    store.item_index.emplace(store.item_external_ids.back(), i);
  }
  inst.split.seed = seed;
  inst.split.train.resize(store.num_users);
  inst.split.valid.resize(store.num_users);
  inst.split.test.resize(store.num_users);
  for (UserIndex u = 0; u < store.num_users; ++u) {
    store.user_external_ids.push_back("u" + std::to_string(u));
    store.user_index.emplace(store.user_external_ids.back(), u);
    std::vector<ItemIndex> pool(store.num_items);
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    const int n = 2 + static_cast<int>(unit(rng) * (store.num_items - 2));
    std::vector<ItemIndex> pos(pool.begin(), pool.begin() + n);
    // 1+ train items, the rest split between valid/test (either may be empty)
    const int n_train = 1 + static_cast<int>(unit(rng) * n * 0.6);
    std::vector<ItemIndex> train(pos.begin(), pos.begin() + std::min(n_train, n));
    std::vector<ItemIndex> valid, test;
    for (int j = std::min(n_train, n); j < n; ++j)
      (unit(rng) < 0.5 ? valid : test).push_back(pos[j]);
    std::sort(pos.begin(), pos.end());
    std::sort(train.begin(), train.end());
    std::sort(valid.begin(), valid.end());
    std::sort(test.begin(), test.end());
    store.positives.push_back(std::move(pos));
    inst.split.train[u] = std::move(train);
    inst.split.valid[u] = std::move(valid);
    inst.split.test[u] = std::move(test);
  }
  store.validate();
  inst.segments = segment(store, inst.split);

  inst.k = 1 + static_cast<int>(unit(rng) * 5.0);
  inst.recs.resize(store.num_users);
  for (UserIndex u = 0; u < store.num_users; ++u) {
    std::vector<std::pair<double, ItemIndex>> scored;
    for (ItemIndex i = 0; i < store.num_items; ++i) {
      if (std::binary_search(inst.split.train[u].begin(), inst.split.train[u].end(), i)) continue;
      scored.push_back({unit(rng), i});
    }
    std::sort(scored.begin(), scored.end(), [](auto& a, auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    RecommendationList rec;
    rec.user = u;
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(inst.k), scored.size());
    for (std::size_t j = 0; j < take; ++j) {
      rec.items.push_back(scored[j].second);
      rec.scores.push_back(scored[j].first);
    }
    rec.truncated = take < static_cast<std::size_t>(inst.k);
    inst.recs[u] = std::move(rec);
  }
  return inst;
}

std::pair<std::string, std::string> write_movielens_files(const std::string& dir, int num_users,
                                                          int num_items, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const ParsedRatings data = synthetic_ratings(num_users, num_items, seed);
  const std::string ratings_path = dir + "/ratings.dat";
  const std::string movies_path = dir + "/movies.dat";
  {
    std::ofstream out(ratings_path);
    for (const RawRating& r : data.ratings)
      out << r.user_id.substr(1) << "::" << r.item_id.substr(1) << "::" << r.rating
          << "::" << r.timestamp.value_or(0) << '\n';
  }
  {
    std::ofstream out(movies_path);
    for (const auto& [item, cats] : data.item_categories) {
      out << item.substr(1) << "::Title " << item << " (2001)::";
      for (std::size_t c = 0; c < cats.size(); ++c) out << (c ? "|" : "") << cats[c];
      out << '\n';
    }
  }
  return {ratings_path, movies_path};
}

std::pair<std::string, std::string> write_yelp_files(const std::string& dir, int num_users,
                                                     int num_items, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const ParsedRatings data = synthetic_ratings(num_users, num_items, seed);
  const std::string review_path = dir + "/review.json";
  const std::string business_path = dir + "/business.json";
  {
    std::ofstream out(business_path);
    for (const auto& [item, cats] : data.item_categories) {
      out << "{\"business_id\":\"" << item << "\",\"state\":\"AZ\",\"categories\":\"";
      for (std::size_t c = 0; c < cats.size(); ++c) out << (c ? ", " : "") << cats[c];
      out << "\"}\n";
    }
    out << "{\"business_id\":\"elsewhere\",\"state\":\"CA\",\"categories\":\"Cafes\"}\n";
  }
  {
    std::ofstream out(review_path);
    for (const RawRating& r : data.ratings)
      out << "{\"user_id\":\"" << r.user_id << "\",\"business_id\":\"" << r.item_id
          << "\",\"stars\":" << r.rating << ".0,\"date\":\"2020-01-01\"}\n";
    out << "{\"user_id\":\"u0\",\"business_id\":\"elsewhere\",\"stars\":5.0}\n";
  }
  return {review_path, business_path};
}

}  // namespace recpriv::fixtures
