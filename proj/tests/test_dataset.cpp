#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "recpriv/dataset.hpp"
#include "recpriv/fixtures.hpp"

using namespace recpriv;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("recpriv_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

// re-expand a store into ratings to check preprocessing idempotence
ParsedRatings expand(const InteractionStore& store) {
  ParsedRatings raw;
  for (UserIndex u = 0; u < store.num_users; ++u) {
    for (ItemIndex i : store.positives[u]) {
      RawRating r;
      r.user_id = store.user_external_ids[u];
      r.item_id = store.item_external_ids[i];
      r.rating = 5;
      raw.ratings.push_back(std::move(r));
    }
  }
  for (ItemIndex i = 0; i < store.num_items; ++i) {
    std::vector<std::string> cats;
    for (std::int32_t c : store.item_categories[i]) cats.push_back(store.category_names[c]);
    raw.item_categories[store.item_external_ids[i]] = std::move(cats);
  }
  return raw;
}

}  // namespace

TEST_CASE("movielens parser maps fields and reports bad lines") {
  const auto dir = temp_dir("ml_parse");
  write_file(dir / "movies.dat",
             "1193::One Flew Over the Cuckoo's Nest (1975)::Drama\n"
             "661::James and the Giant Peach (1996)::Animation|Children's|Musical\n");
  write_file(dir / "ratings.dat",
             "1::1193::5::978300760\n"
             "1::661::3::978302109\n"
             "2::1193::6::978300000\n"   // rating out of range
             "2::661::4\n");             // missing field
  const ParsedRatings parsed =
      parse_movielens((dir / "ratings.dat").string(), (dir / "movies.dat").string());
  REQUIRE(parsed.ratings.size() == 2);
  CHECK(parsed.ratings[0].user_id == "1");
  CHECK(parsed.ratings[0].item_id == "1193");
  CHECK(parsed.ratings[0].rating == 5);
  CHECK(parsed.ratings[0].timestamp == 978300760);
  CHECK(parsed.item_categories.at("661") ==
        std::vector<std::string>{"Animation", "Children's", "Musical"});
  REQUIRE(parsed.report.errors.size() == 2);
  CHECK(parsed.report.errors[0].line == 3);
  CHECK(parsed.report.total_records == 4);
}

TEST_CASE("movielens parser enforces the malformed-line budget") {
  const auto dir = temp_dir("ml_budget");
  write_file(dir / "movies.dat", "1::T::Drama\n");
  std::string ratings;
  for (int i = 0; i < 50; ++i) ratings += "1::1::5::0\n";
  ratings += "garbage\n";  // 1 of 51 lines ~ 2% malformed
  write_file(dir / "ratings.dat", ratings);
  CHECK_THROWS_AS(parse_movielens((dir / "ratings.dat").string(), (dir / "movies.dat").string()),
                  std::runtime_error);
}

TEST_CASE("movielens parser needs both files") {
  const auto dir = temp_dir("ml_missing");
  write_file(dir / "ratings.dat", "1::1::5::0\n");
  CHECK_THROWS_AS(parse_movielens((dir / "ratings.dat").string(), (dir / "nope.dat").string()),
                  std::runtime_error);
}

TEST_CASE("yelp parser filters by state and rounds stars") {
  const auto dir = temp_dir("yelp_parse");
  write_file(dir / "business.json",
             R"({"business_id":"a","state":"AZ","categories":"Cafes, Food"})" "\n"
             R"({"business_id":"b","state":"CA","categories":"Bars"})" "\n"
             R"({"business_id":"c","state":"AZ"})" "\n");  // missing categories
  write_file(dir / "review.json",
             R"({"user_id":"u1","business_id":"a","stars":4.0})" "\n"
             R"({"user_id":"u2","business_id":"b","stars":5.0})" "\n"
             R"({"user_id":"u3","business_id":"a"})" "\n"      // missing stars
             R"({"user_id":"u4","business_id":"c","stars":3.0})" "\n");
  const ParsedRatings parsed =
      parse_yelp((dir / "review.json").string(), (dir / "business.json").string(), "AZ");
  REQUIRE(parsed.ratings.size() == 1);
  CHECK(parsed.ratings[0].user_id == "u1");
  CHECK(parsed.ratings[0].rating == 4);
  CHECK(parsed.item_categories.at("a") == std::vector<std::string>{"Cafes", "Food"});
  // "b" and its review are excluded by the filter; "c" is a parse error
  CHECK(parsed.report.filtered_out >= 1);
  bool missing_categories_reported = false, missing_stars_reported = false;
  for (const ParseError& e : parsed.report.errors) {
    missing_categories_reported |= e.message.find("categories") != std::string::npos;
    missing_stars_reported |= e.message.find("stars") != std::string::npos;
  }
  CHECK(missing_categories_reported);
  CHECK(missing_stars_reported);
  CHECK_THROWS_AS(parse_yelp((dir / "review.json").string(), (dir / "nope.json").string(), "AZ"),
                  std::runtime_error);
}

TEST_CASE("preprocess drops low ratings, dedups on latest timestamp and reaches a fixpoint") {
  ParsedRatings raw;
  auto add = [&raw](const std::string& u, const std::string& i, int rating, std::int64_t ts) {
    RawRating r;
    r.user_id = u;
    r.item_id = i;
    r.rating = rating;
    r.timestamp = ts;
    raw.ratings.push_back(std::move(r));
  };
  // six users sharing six items keeps everything above the min-5 bar;
  // u9/i9 ride in below it and must be filtered out
  for (int u = 0; u < 6; ++u)
    for (int i = 0; i < 6; ++i) add("u" + std::to_string(u), "i" + std::to_string(i), 5, u * 10 + i);
  add("u9", "i0", 5, 100);
  add("u9", "i9", 5, 101);
  add("u0", "i0", 2, 999);   // duplicate pair, latest is below threshold but arrives post-filter
  add("u0", "i9", 1, 5);     // below threshold
  for (int i = 0; i < 10; ++i) raw.item_categories["i" + std::to_string(i)] = {"g"};

  PreprocessStats stats;
  const InteractionStore store = preprocess(raw, &stats);
  CHECK(store.num_users == 6);   // u9 has only 2 items
  CHECK(store.num_items == 6);   // i9 has too few ratings
  CHECK(stats.below_threshold == 1);
  CHECK(stats.duplicates_collapsed == 1);
  CHECK(store.num_interactions() == 36);
  for (UserIndex u = 0; u < store.num_users; ++u) CHECK(store.positives[u].size() >= 5);

  // idempotence: re-expanding the survivors and preprocessing again is a no-op
  const InteractionStore again = preprocess(expand(store));
  REQUIRE(again.num_users == store.num_users);
  REQUIRE(again.num_items == store.num_items);
  CHECK(again.positives == store.positives);
  CHECK(again.user_external_ids == store.user_external_ids);
  CHECK(again.item_external_ids == store.item_external_ids);
}

TEST_CASE("preprocess fails loudly when nothing survives") {
  ParsedRatings raw;
  for (int u = 0; u < 8; ++u)
    for (int i = 0; i < 4; ++i) {  // every user has exactly 4 items
      RawRating r;
      r.user_id = "u" + std::to_string(u);
      r.item_id = "i" + std::to_string(u * 4 + i);
      r.rating = 5;
      raw.ratings.push_back(std::move(r));
      raw.item_categories[r.item_id] = {"g"};
    }
  CHECK_THROWS_WITH_AS(preprocess(raw), doctest::Contains("no interactions survived"),
                       std::runtime_error);
  CHECK_THROWS_AS(preprocess(ParsedRatings{}), std::runtime_error);
}

TEST_CASE("split counts follow the floor rule with the n=5 valid preference") {
  // oracle: enumerate the stated count formula for n = 5..20
  for (int n = 5; n <= 20; ++n) {
    const SplitCounts c = split_counts(n);
    const int tenth = n / 10;
    CHECK(c.test == tenth);
    CHECK(c.valid == std::max(1, tenth));
    CHECK(c.train == n - c.valid - c.test);
    CHECK(c.train >= 1);
    CHECK(c.valid >= 1);
  }
  CHECK(split_counts(10).train == 8);
  CHECK(split_counts(10).valid == 1);
  CHECK(split_counts(10).test == 1);
  CHECK(split_counts(5).train == 4);
  CHECK(split_counts(5).valid == 1);
  CHECK(split_counts(5).test == 0);
  CHECK(split_counts(20).train == 16);
}

TEST_CASE("per-user split is a disjoint partition and deterministic") {
  const InteractionStore store = fixtures::synthetic_store(60, 40, 3);
  const SplitDataset a = split_per_user(store, 42);
  const SplitDataset b = split_per_user(store, 42);
  CHECK(a.train == b.train);
  CHECK(a.valid == b.valid);
  CHECK(a.test == b.test);
  const SplitDataset c = split_per_user(store, 43);
  CHECK(a.train != c.train);

  for (UserIndex u = 0; u < store.num_users; ++u) {
    std::set<ItemIndex> joined;
    for (ItemIndex i : a.train[u]) joined.insert(i);
    for (ItemIndex i : a.valid[u]) joined.insert(i);
    for (ItemIndex i : a.test[u]) joined.insert(i);
    CHECK(joined.size() == a.train[u].size() + a.valid[u].size() + a.test[u].size());
    CHECK(joined == std::set<ItemIndex>(store.positives[u].begin(), store.positives[u].end()));
    CHECK(a.train[u].size() >= 1);
    const SplitCounts want = split_counts(static_cast<int>(store.positives[u].size()));
    CHECK(static_cast<int>(a.train[u].size()) == want.train);
    CHECK(static_cast<int>(a.valid[u].size()) == want.valid);
    CHECK(static_cast<int>(a.test[u].size()) == want.test);
  }
}

TEST_CASE("segmentation: head flags, popularity floor and user types") {
  // hand-built store: item 0 rated by everyone, items 1..4 by one user each
  InteractionStore store;
  store.num_users = 5;
  store.num_items = 5;
  store.category_names = {"g"};
  for (ItemIndex i = 0; i < 5; ++i) {
    store.item_categories.push_back({0});
    store.item_external_ids.push_back("i" + std::to_string(i));
    store.item_index.emplace(store.item_external_ids.back(), i);
  }
  SplitDataset split;
  split.train.resize(5);
  split.valid.resize(5);
  split.test.resize(5);
  for (UserIndex u = 0; u < 5; ++u) {
    store.user_external_ids.push_back("u" + std::to_string(u));
    store.user_index.emplace(store.user_external_ids.back(), u);
    std::vector<ItemIndex> pos = {0, static_cast<ItemIndex>(u == 0 ? 1 : u)};
    std::sort(pos.begin(), pos.end());
    store.positives.push_back(pos);
    split.train[u] = pos;
  }
  const SegmentMap seg = segment(store, split);
  CHECK(seg.head_count == 1);  // ceil(0.2 * 5)
  CHECK(seg.popularity[0] == doctest::Approx(1.0));
  CHECK(seg.head_flag[0]);
  int head_total = 0;
  for (bool h : seg.head_flag) head_total += h ? 1 : 0;
  CHECK(head_total == seg.head_count);
  // every profile here is 50% head items: boundary-exclusive means diverse
  for (UserIndex u = 0; u < 5; ++u) CHECK(seg.user_type[u] == UserType::diverse);
}

TEST_CASE("segmentation thresholds are boundary-exclusive") {
  InteractionStore store;
  store.num_users = 3;
  store.num_items = 20;
  store.category_names = {"g"};
  for (ItemIndex i = 0; i < 20; ++i) {
    store.item_categories.push_back({0});
    store.item_external_ids.push_back("i" + std::to_string(i));
    store.item_index.emplace(store.item_external_ids.back(), i);
  }
  SplitDataset split;
  split.train.resize(3);
  split.valid.resize(3);
  split.test.resize(3);
  // every user trains on items 0..3 so those four are the head (|I1| = 4)
  const std::vector<ItemIndex> head = {0, 1, 2, 3};
  auto profile = [&](UserIndex u, int head_items, int tail_items) {
    std::vector<ItemIndex> pos;
    for (int h = 0; h < head_items; ++h) pos.push_back(head[static_cast<std::size_t>(h % 4)]);
    for (int t = 0; t < tail_items; ++t) pos.push_back(static_cast<ItemIndex>(4 + t));
    std::sort(pos.begin(), pos.end());
    pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
    store.positives[u] = pos;
  };
  store.positives.resize(3);
  store.user_external_ids = {"a", "b", "c"};
  for (UserIndex u = 0; u < 3; ++u) {
    store.user_index.emplace(store.user_external_ids[u], u);
    split.train[u] = head;
  }
  profile(0, 4, 6);   // 40% head -> niche
  profile(1, 2, 2);   // exactly 50% -> diverse
  profile(2, 4, 0);   // 100% head -> blockbuster
  const SegmentMap seg = segment(store, split);
  CHECK(seg.head_count == 4);
  CHECK(seg.user_type[0] == UserType::niche);
  CHECK(seg.user_type[1] == UserType::diverse);
  CHECK(seg.user_type[2] == UserType::blockbuster);
  // unrated items sit at the popularity floor, never at zero
  for (ItemIndex i = 10; i < 20; ++i)
    CHECK(seg.popularity[i] == doctest::Approx(1.0 / 4.0).epsilon(1e-12));
}

TEST_CASE("head cutoff ties break by ascending item index") {
  const InteractionStore store = fixtures::synthetic_store(40, 30, 9);
  const SplitDataset split = split_per_user(store, 1);
  const SegmentMap a = segment(store, split);
  const SegmentMap b = segment(store, split);
  CHECK(a.head_flag == b.head_flag);
  int head_total = 0;
  for (bool h : a.head_flag) head_total += h ? 1 : 0;
  CHECK(head_total == a.head_count);
  CHECK(a.head_count == static_cast<std::int32_t>(std::ceil(0.2 * store.num_items)));
}

TEST_CASE("store cache round-trips and rejects version mismatches") {
  const auto dir = temp_dir("cache");
  const InteractionStore store = fixtures::synthetic_store(30, 25, 5);
  const std::string path = (dir / "store.jsonl").string();
  save_store(store, path);
  const InteractionStore loaded = load_store(path);
  CHECK(loaded.num_users == store.num_users);
  CHECK(loaded.num_items == store.num_items);
  CHECK(loaded.positives == store.positives);
  CHECK(loaded.item_categories == store.item_categories);
  CHECK(loaded.category_names == store.category_names);
  CHECK(loaded.user_external_ids == store.user_external_ids);

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string other = (dir / "bad.jsonl").string();
  write_file(other, "{\"format\":\"recpriv.store\",\"version\":999}\n" + rest);
  CHECK_THROWS_WITH_AS(load_store(other), doctest::Contains("version mismatch"),
                       std::runtime_error);
}

TEST_CASE("user subsampling keeps the minimum-count invariants") {
  const InteractionStore store = fixtures::synthetic_store(100, 60, 8);
  const InteractionStore mini = subsample_users(store, 30, 1);
  CHECK(mini.num_users <= 30);
  CHECK(mini.num_users > 0);
  for (UserIndex u = 0; u < mini.num_users; ++u) CHECK(mini.positives[u].size() >= 5);
  // untouched when the cap is not binding
  const InteractionStore same = subsample_users(store, 0, 1);
  CHECK(same.num_users == store.num_users);
}
