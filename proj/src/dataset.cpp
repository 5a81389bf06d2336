#include "recpriv/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "recpriv/common.hpp"

namespace recpriv {

namespace {

using nlohmann::json;

constexpr double kMaxMalformedFraction = 0.01;
constexpr int kMinCount = 5;          // min ratings per item / per user
constexpr int kPositiveThreshold = 3; // rating >= 3 is positive feedback
constexpr int kStoreFormatVersion = 1;

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return in;
}

bool parse_int(std::string_view s, long long& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

std::vector<std::string_view> split_on(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + sep.size();
  }
  return out;
}

std::string strip(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

void check_error_budget(const ParseReport& report, const std::string& what) {
  if (report.total_records > 0 && report.error_fraction() > kMaxMalformedFraction) {
    throw std::runtime_error(what + ": " + std::to_string(report.errors.size()) + " of " +
                             std::to_string(report.total_records) +
                             " records malformed (>1%), first error at line " +
                             std::to_string(report.errors.front().line) + ": " +
                             report.errors.front().message);
  }
}

}  // namespace

ParsedRatings parse_movielens(const std::string& ratings_path, const std::string& movies_path) {
  ParsedRatings out;

  {
    std::ifstream movies = open_or_throw(movies_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(movies, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto fields = split_on(line, "::");
      if (fields.size() != 3) {
        out.report.errors.push_back({line_no, "movies: expected MovieID::Title::Genres"});
        continue;
      }
      std::vector<std::string> cats;
      for (auto g : split_on(fields[2], "|")) {
        std::string label = strip(g);
        if (!label.empty() && std::find(cats.begin(), cats.end(), label) == cats.end())
          cats.push_back(std::move(label));
      }
      if (cats.empty()) {
        out.report.errors.push_back({line_no, "movies: empty genre list"});
        continue;
      }
      out.item_categories[std::string(fields[0])] = std::move(cats);
    }
  }

  std::ifstream ratings = open_or_throw(ratings_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ratings, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++out.report.total_records;
    const auto fields = split_on(line, "::");
    if (fields.size() != 4) {
      out.report.errors.push_back({line_no, "expected UserID::MovieID::Rating::Timestamp"});
      continue;
    }
    long long rating = 0, ts = 0;
    if (!parse_int(fields[2], rating) || rating < 1 || rating > 5) {
      out.report.errors.push_back({line_no, "rating not in {1..5}: " + std::string(fields[2])});
      continue;
    }
    RawRating r;
    r.user_id = std::string(fields[0]);
    r.item_id = std::string(fields[1]);
    r.rating = static_cast<int>(rating);
    if (parse_int(fields[3], ts)) r.timestamp = ts;
    if (r.user_id.empty() || r.item_id.empty()) {
      out.report.errors.push_back({line_no, "empty user or item id"});
      continue;
    }
    out.ratings.push_back(std::move(r));
    ++out.report.emitted;
  }
  check_error_budget(out.report, "parse_movielens(" + ratings_path + ")");
  return out;
}

ParsedRatings parse_yelp(const std::string& review_path, const std::string& business_path,
                         const std::string& state_filter) {
  ParsedRatings out;

  // Businesses first: the state filter decides which reviews survive.
  std::set<std::string> kept_business;
  {
    std::ifstream businesses = open_or_throw(business_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(businesses, line)) {
      ++line_no;
      if (strip(line).empty()) continue;
      json rec = json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.is_object()) {
        out.report.errors.push_back({line_no, "business: invalid JSON"});
        continue;
      }
      if (!rec.contains("business_id") || !rec["business_id"].is_string()) {
        out.report.errors.push_back({line_no, "business: missing business_id"});
        continue;
      }
      const std::string id = rec["business_id"].get<std::string>();
      if (!rec.contains("state") || !rec["state"].is_string()) {
        out.report.errors.push_back({line_no, "business: missing state"});
        continue;
      }
      if (rec["state"].get<std::string>() != state_filter) continue;
      if (!rec.contains("categories") || !rec["categories"].is_string() ||
          strip(rec["categories"].get<std::string>()).empty()) {
        out.report.errors.push_back({line_no, "business: missing categories"});
        continue;
      }
      std::vector<std::string> cats;
      for (auto c : split_on(rec["categories"].get<std::string>(), ",")) {
        std::string label = strip(c);
        if (!label.empty() && std::find(cats.begin(), cats.end(), label) == cats.end())
          cats.push_back(std::move(label));
      }
      if (cats.empty()) {
        out.report.errors.push_back({line_no, "business: empty category list"});
        continue;
      }
      kept_business.insert(id);
      out.item_categories[id] = std::move(cats);
    }
  }

  std::ifstream reviews = open_or_throw(review_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(reviews, line)) {
    ++line_no;
    if (strip(line).empty()) continue;
    ++out.report.total_records;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) {
      out.report.errors.push_back({line_no, "review: invalid JSON"});
      continue;
    }
    if (!rec.contains("user_id") || !rec["user_id"].is_string() || !rec.contains("business_id") ||
        !rec["business_id"].is_string() || !rec.contains("stars") || !rec["stars"].is_number()) {
      out.report.errors.push_back({line_no, "review: missing user_id/business_id/stars"});
      continue;
    }
    const std::string business = rec["business_id"].get<std::string>();
    if (!kept_business.count(business)) {
      ++out.report.filtered_out;
      continue;
    }
    const double stars = rec["stars"].get<double>();
    const long long rating = std::llround(stars);
    if (rating < 1 || rating > 5) {
      out.report.errors.push_back({line_no, "review: stars outside 1..5"});
      continue;
    }
    RawRating r;
    r.user_id = rec["user_id"].get<std::string>();
    r.item_id = business;
    r.rating = static_cast<int>(rating);
    if (rec.contains("date") && rec["date"].is_string()) {
      // lexically sortable date string; keep a coarse ordinal so dedup can
      // still prefer the latest review
      r.timestamp = static_cast<std::int64_t>(fnv1a64(rec["date"].get<std::string>()) & 0x7fffffff);
    }
    out.ratings.push_back(std::move(r));
    ++out.report.emitted;
  }
  check_error_budget(out.report, "parse_yelp(" + review_path + ")");
  return out;
}

void InteractionStore::validate() const {
  if (static_cast<std::size_t>(num_users) != positives.size())
    throw std::runtime_error("store: positives size mismatch");
  if (static_cast<std::size_t>(num_items) != item_categories.size())
    throw std::runtime_error("store: item_categories size mismatch");
  for (std::int32_t u = 0; u < num_users; ++u) {
    const auto& p = positives[u];
    if (!std::is_sorted(p.begin(), p.end()) || std::adjacent_find(p.begin(), p.end()) != p.end())
      throw std::runtime_error("store: positives not sorted/unique for user " + std::to_string(u));
    for (ItemIndex i : p)
      if (i < 0 || i >= num_items) throw std::runtime_error("store: item index out of range");
  }
  for (std::int32_t i = 0; i < num_items; ++i) {
    if (item_categories[i].empty())
      throw std::runtime_error("store: item " + std::to_string(i) + " has no category");
  }
}

InteractionStore preprocess(const ParsedRatings& raw, PreprocessStats* stats_out) {
  PreprocessStats stats;
  stats.input_ratings = raw.ratings.size();
  if (raw.ratings.empty()) throw std::runtime_error("preprocess: empty rating list");

  // intern external ids so the fixpoint runs on integers
  std::unordered_map<std::string, std::int32_t> uid, iid;
  std::vector<std::string> user_names, item_names;
  std::unordered_map<std::uint64_t, std::int64_t> latest;  // (u,i) -> latest timestamp
  latest.reserve(raw.ratings.size());
  for (const RawRating& r : raw.ratings) {
    if (r.rating < kPositiveThreshold) {
      ++stats.below_threshold;
      continue;
    }
    // rating >= 3 and a known category set are both required to keep a pair
    if (!raw.item_categories.count(r.item_id)) {
      ++stats.items_without_categories;
      continue;
    }
    auto [uit, unew] = uid.emplace(r.user_id, static_cast<std::int32_t>(user_names.size()));
    if (unew) user_names.push_back(r.user_id);
    auto [iit, inew] = iid.emplace(r.item_id, static_cast<std::int32_t>(item_names.size()));
    if (inew) item_names.push_back(r.item_id);
    const std::uint64_t key =
        (static_cast<std::uint64_t>(uit->second) << 32) | static_cast<std::uint32_t>(iit->second);
    const std::int64_t ts = r.timestamp.value_or(0);
    auto [it, inserted] = latest.emplace(key, ts);
    if (!inserted) {
      ++stats.duplicates_collapsed;
      it->second = std::max(it->second, ts);
    }
  }

  const std::size_t nu = user_names.size(), ni = item_names.size();
  std::vector<std::uint64_t> pairs;
  pairs.reserve(latest.size());
  for (const auto& [key, ts] : latest) pairs.push_back(key);
  std::sort(pairs.begin(), pairs.end());

  // fixpoint of (item >= 5, user >= 5) over the surviving pairs
  std::vector<bool> user_dead(nu, false), item_dead(ni, false);
  bool changed = true;
  while (changed) {
    changed = false;
    ++stats.filter_rounds;
    std::vector<std::int32_t> ucount(nu, 0), icount(ni, 0);
    for (std::uint64_t key : pairs) {
      const auto u = static_cast<std::int32_t>(key >> 32);
      const auto i = static_cast<std::int32_t>(key & 0xffffffffu);
      if (user_dead[u] || item_dead[i]) continue;
      ++ucount[u];
      ++icount[i];
    }
    for (std::size_t i = 0; i < ni; ++i)
      if (!item_dead[i] && icount[i] > 0 && icount[i] < kMinCount) {
        item_dead[i] = true;
        changed = true;
      }
    for (std::size_t u = 0; u < nu; ++u)
      if (!user_dead[u] && ucount[u] > 0 && ucount[u] < kMinCount) {
        user_dead[u] = true;
        changed = true;
      }
  }

  // keep a user/item only if it still has a live pair
  std::vector<std::int32_t> live_u(nu, 0), live_i(ni, 0);
  for (std::uint64_t key : pairs) {
    const auto u = static_cast<std::int32_t>(key >> 32);
    const auto i = static_cast<std::int32_t>(key & 0xffffffffu);
    if (user_dead[u] || item_dead[i]) continue;
    ++live_u[u];
    ++live_i[i];
  }
  for (std::size_t u = 0; u < nu; ++u)
    if (live_u[u] == 0 && !user_dead[u]) user_dead[u] = true;
  for (std::size_t i = 0; i < ni; ++i)
    if (live_i[i] == 0 && !item_dead[i]) item_dead[i] = true;
  stats.removed_users = static_cast<std::size_t>(std::count(user_dead.begin(), user_dead.end(), true));
  stats.removed_items = static_cast<std::size_t>(std::count(item_dead.begin(), item_dead.end(), true));

  // contiguous reindexing, ordered by external id for reproducibility
  std::vector<std::int32_t> user_order, item_order;
  for (std::size_t u = 0; u < nu; ++u)
    if (!user_dead[u]) user_order.push_back(static_cast<std::int32_t>(u));
  for (std::size_t i = 0; i < ni; ++i)
    if (!item_dead[i]) item_order.push_back(static_cast<std::int32_t>(i));
  if (user_order.empty() || item_order.empty()) {
    std::ostringstream msg;
    msg << "preprocess: no interactions survived (input=" << stats.input_ratings
        << ", below_threshold=" << stats.below_threshold
        << ", removed_users=" << stats.removed_users << ", removed_items=" << stats.removed_items
        << ")";
    throw std::runtime_error(msg.str());
  }
  std::sort(user_order.begin(), user_order.end(),
            [&](std::int32_t a, std::int32_t b) { return user_names[a] < user_names[b]; });
  std::sort(item_order.begin(), item_order.end(),
            [&](std::int32_t a, std::int32_t b) { return item_names[a] < item_names[b]; });

  InteractionStore store;
  std::vector<ItemIndex> item_map(ni, -1);
  std::map<std::string, std::int32_t> category_id;
  for (std::int32_t i : item_order) {
    const ItemIndex idx = static_cast<ItemIndex>(store.item_external_ids.size());
    item_map[i] = idx;
    store.item_external_ids.push_back(item_names[i]);
    store.item_index.emplace(item_names[i], idx);
    std::vector<std::int32_t> cats;
    for (const std::string& label : raw.item_categories.at(item_names[i])) {
      auto it = category_id.emplace(label, static_cast<std::int32_t>(category_id.size())).first;
      cats.push_back(it->second);
    }
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    store.item_categories.push_back(std::move(cats));
  }
  store.category_names.resize(category_id.size());
  for (const auto& [label, id] : category_id) store.category_names[id] = label;

  std::vector<UserIndex> user_map(nu, -1);
  for (std::int32_t u : user_order) {
    user_map[u] = static_cast<UserIndex>(store.user_external_ids.size());
    store.user_external_ids.push_back(user_names[u]);
    store.user_index.emplace(user_names[u], user_map[u]);
  }
  store.positives.assign(user_order.size(), {});
  for (std::uint64_t key : pairs) {
    const auto u = static_cast<std::int32_t>(key >> 32);
    const auto i = static_cast<std::int32_t>(key & 0xffffffffu);
    if (user_dead[u] || item_dead[i]) continue;
    store.positives[user_map[u]].push_back(item_map[i]);
  }
  for (auto& p : store.positives) std::sort(p.begin(), p.end());
  store.num_users = static_cast<std::int32_t>(store.positives.size());
  store.num_items = static_cast<std::int32_t>(store.item_external_ids.size());
  store.validate();
  if (stats_out) *stats_out = stats;
  return store;
}

SplitCounts split_counts(int n) {
  SplitCounts c;
  const int tenth = n / 10;
  c.valid = std::max(1, tenth);
  c.test = tenth;
  c.train = n - c.valid - c.test;
  return c;
}

SplitDataset split_per_user(const InteractionStore& store, std::uint64_t seed) {
  SplitDataset split;
  split.seed = seed;
  split.train.resize(store.num_users);
  split.valid.resize(store.num_users);
  split.test.resize(store.num_users);
  for (UserIndex u = 0; u < store.num_users; ++u) {
    std::vector<ItemIndex> items = store.positives[u];
    const int n = static_cast<int>(items.size());
    if (n < kMinCount)
      throw std::invalid_argument("split_per_user: user " + std::to_string(u) +
                                  " has fewer than 5 positives");
    SplitMix64 rng(mix_seed(seed, static_cast<std::uint64_t>(u)));
    std::shuffle(items.begin(), items.end(), rng);
    const SplitCounts c = split_counts(n);
    split.valid[u].assign(items.begin(), items.begin() + c.valid);
    split.test[u].assign(items.begin() + c.valid, items.begin() + c.valid + c.test);
    split.train[u].assign(items.begin() + c.valid + c.test, items.end());
    std::sort(split.train[u].begin(), split.train[u].end());
    std::sort(split.valid[u].begin(), split.valid[u].end());
    std::sort(split.test[u].begin(), split.test[u].end());
  }
  return split;
}

const char* user_type_name(UserType t) {
  switch (t) {
    case UserType::niche: return "niche";
    case UserType::diverse: return "diverse";
    case UserType::blockbuster: return "blockbuster";
  }
  return "?";
}

SegmentMap segment(const InteractionStore& store, const SplitDataset& split) {
  SegmentMap seg;
  seg.popularity.assign(store.num_items, 0.0);
  std::vector<std::int32_t> counts(store.num_items, 0);
  for (UserIndex u = 0; u < store.num_users; ++u)
    for (ItemIndex i : split.train[u]) ++counts[i];
  const double floor_pi = 1.0 / (static_cast<double>(store.num_users) + 1.0);
  for (ItemIndex i = 0; i < store.num_items; ++i) {
    seg.popularity[i] = counts[i] == 0
                            ? floor_pi
                            : static_cast<double>(counts[i]) / static_cast<double>(store.num_users);
  }

  std::vector<ItemIndex> order(store.num_items);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](ItemIndex a, ItemIndex b) {
    if (seg.popularity[a] != seg.popularity[b]) return seg.popularity[a] > seg.popularity[b];
    return a < b;  // deterministic cutoff under ties
  });
  seg.head_count = static_cast<std::int32_t>(
      std::ceil(0.2 * static_cast<double>(store.num_items)));
  seg.head_flag.assign(store.num_items, false);
  for (std::int32_t r = 0; r < seg.head_count && r < store.num_items; ++r)
    seg.head_flag[order[r]] = true;

  seg.user_type.resize(store.num_users);
  for (UserIndex u = 0; u < store.num_users; ++u) {
    const auto& profile = store.positives[u];  // full profile: everything rated
    std::size_t head = 0;
    for (ItemIndex i : profile) head += seg.head_flag[i] ? 1 : 0;
    const double frac = profile.empty() ? 0.0
                                        : static_cast<double>(head) /
                                              static_cast<double>(profile.size());
    // boundary-exclusive: exactly 0.5 and exactly 0.85 are both "diverse"
    if (frac < 0.5) seg.user_type[u] = UserType::niche;
    else if (frac > 0.85) seg.user_type[u] = UserType::blockbuster;
    else seg.user_type[u] = UserType::diverse;
  }
  return seg;
}

void save_store(const InteractionStore& store, const std::string& path) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write store cache: " + tmp);
    json header = {{"format", "recpriv.store"},
                   {"version", kStoreFormatVersion},
                   {"num_users", store.num_users},
                   {"num_items", store.num_items},
                   {"num_categories", store.category_names.size()}};
    out << header.dump() << '\n';
    for (std::size_t c = 0; c < store.category_names.size(); ++c)
      out << json{{"t", "cat"}, {"id", c}, {"name", store.category_names[c]}}.dump() << '\n';
    for (ItemIndex i = 0; i < store.num_items; ++i)
      out << json{{"t", "item"},
                  {"idx", i},
                  {"ext", store.item_external_ids[i]},
                  {"cats", store.item_categories[i]}}
                 .dump()
          << '\n';
    for (UserIndex u = 0; u < store.num_users; ++u)
      out << json{{"t", "user"},
                  {"idx", u},
                  {"ext", store.user_external_ids[u]},
                  {"items", store.positives[u]}}
                 .dump()
          << '\n';
  }
  std::filesystem::rename(tmp, path);
}

InteractionStore load_store(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("store cache empty: " + path);
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "recpriv.store")
    throw std::runtime_error("not a recpriv store cache: " + path);
  if (header.value("version", -1) != kStoreFormatVersion)
    throw std::runtime_error("store cache version mismatch (" +
                             std::to_string(header.value("version", -1)) + " != " +
                             std::to_string(kStoreFormatVersion) + "), re-run ingest: " + path);
  InteractionStore store;
  store.num_users = header.at("num_users").get<std::int32_t>();
  store.num_items = header.at("num_items").get<std::int32_t>();
  store.category_names.resize(header.at("num_categories").get<std::size_t>());
  store.positives.resize(store.num_users);
  store.user_external_ids.resize(store.num_users);
  store.item_categories.resize(store.num_items);
  store.item_external_ids.resize(store.num_items);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    const std::string t = rec.at("t").get<std::string>();
    if (t == "cat") {
      store.category_names.at(rec.at("id").get<std::size_t>()) = rec.at("name").get<std::string>();
    } else if (t == "item") {
      const ItemIndex i = rec.at("idx").get<ItemIndex>();
      store.item_external_ids.at(i) = rec.at("ext").get<std::string>();
      store.item_categories.at(i) = rec.at("cats").get<std::vector<std::int32_t>>();
    } else if (t == "user") {
      const UserIndex u = rec.at("idx").get<UserIndex>();
      store.user_external_ids.at(u) = rec.at("ext").get<std::string>();
      store.positives.at(u) = rec.at("items").get<std::vector<ItemIndex>>();
    } else {
      throw std::runtime_error("store cache: unknown record type '" + t + "'");
    }
  }
  for (UserIndex u = 0; u < store.num_users; ++u)
    store.user_index.emplace(store.user_external_ids[u], u);
  for (ItemIndex i = 0; i < store.num_items; ++i)
    store.item_index.emplace(store.item_external_ids[i], i);
  store.validate();
  return store;
}

InteractionStore subsample_users(const InteractionStore& store, std::size_t max_users,
                                 std::uint64_t seed) {
  if (max_users == 0 || max_users >= static_cast<std::size_t>(store.num_users)) return store;

  std::vector<UserIndex> order(store.num_users);
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(mix_seed(seed, 0x5ab5aULL));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(max_users);
  std::sort(order.begin(), order.end());

  // restriction may push items/users below the minimum again
  std::vector<std::vector<ItemIndex>> pos;
  pos.reserve(order.size());
  for (UserIndex u : order) pos.push_back(store.positives[u]);
  std::vector<bool> user_dead(pos.size(), false), item_dead(store.num_items, false);
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<std::int32_t> item_count(store.num_items, 0);
    for (std::size_t u = 0; u < pos.size(); ++u) {
      if (user_dead[u]) continue;
      for (ItemIndex i : pos[u])
        if (!item_dead[i]) ++item_count[i];
    }
    for (ItemIndex i = 0; i < store.num_items; ++i)
      if (!item_dead[i] && item_count[i] > 0 && item_count[i] < kMinCount) {
        item_dead[i] = true;
        changed = true;
      }
    for (std::size_t u = 0; u < pos.size(); ++u) {
      if (user_dead[u]) continue;
      int live = 0;
      for (ItemIndex i : pos[u])
        if (!item_dead[i]) ++live;
      if (live < kMinCount) {
        user_dead[u] = true;
        changed = true;
      }
    }
  }

  InteractionStore out;
  std::vector<ItemIndex> item_map(store.num_items, -1);
  for (std::size_t u = 0; u < pos.size(); ++u) {
    if (user_dead[u]) continue;
    const UserIndex src = order[u];
    std::vector<ItemIndex> kept;
    for (ItemIndex i : pos[u]) {
      if (item_dead[i]) continue;
      if (item_map[i] < 0) {
        item_map[i] = static_cast<ItemIndex>(out.item_external_ids.size());
        out.item_external_ids.push_back(store.item_external_ids[i]);
        out.item_categories.push_back(store.item_categories[i]);
      }
      kept.push_back(item_map[i]);
    }
    if (kept.empty()) continue;
    std::sort(kept.begin(), kept.end());
    out.positives.push_back(std::move(kept));
    out.user_external_ids.push_back(store.user_external_ids[src]);
  }
  if (out.positives.empty())
    throw std::runtime_error("subsample_users: nothing survived the restriction");
  out.num_users = static_cast<std::int32_t>(out.positives.size());
  out.num_items = static_cast<std::int32_t>(out.item_external_ids.size());
  out.category_names = store.category_names;
  for (UserIndex u = 0; u < out.num_users; ++u) out.user_index.emplace(out.user_external_ids[u], u);
  for (ItemIndex i = 0; i < out.num_items; ++i) out.item_index.emplace(out.item_external_ids[i], i);
  out.validate();
  return out;
}

}  // namespace recpriv
