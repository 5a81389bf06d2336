#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace recpriv {

using UserIndex = std::int32_t;
using ItemIndex = std::int32_t;

/// One raw rating event as found in the input files; ids are still the
/// external (file-level) ids at this stage.
struct RawRating {
  std::string user_id;
  std::string item_id;
  int rating = 0;  // 1..5
  std::optional<std::int64_t> timestamp;
};

struct ParseError {
  std::size_t line = 0;
  std::string message;
};

struct ParseReport {
  std::vector<ParseError> errors;
  std::size_t total_records = 0;   // lines / records inspected
  std::size_t emitted = 0;         // well-formed ratings produced
  std::size_t filtered_out = 0;    // valid records excluded by a filter (e.g. state)
  double error_fraction() const {
    return total_records == 0 ? 0.0
                              : static_cast<double>(errors.size()) / static_cast<double>(total_records);
  }
};

struct ParsedRatings {
  std::vector<RawRating> ratings;
  // external item id -> category labels (order preserved from the file, deduplicated)
  std::map<std::string, std::vector<std::string>> item_categories;
  ParseReport report;
};

/// MovieLens layout: ratings `UserID::MovieID::Rating::Timestamp`,
/// movies `MovieID::Title::Genre|Genre|...`.
/// Throws std::runtime_error if a file is missing/unreadable or if more than
/// 1% of rating lines are malformed.
ParsedRatings parse_movielens(const std::string& ratings_path, const std::string& movies_path);

/// Yelp layout: newline-delimited JSON. Review records need user_id,
/// business_id, stars; business records need business_id, state, categories.
/// Only reviews of businesses whose state equals `state_filter` are emitted.
ParsedRatings parse_yelp(const std::string& review_path, const std::string& business_path,
                         const std::string& state_filter);

/// Deduplicated positive feedback with contiguous internal indices.
struct InteractionStore {
  std::int32_t num_users = 0;
  std::int32_t num_items = 0;
  std::vector<std::vector<ItemIndex>> positives;        // per user, sorted ascending
  std::vector<std::vector<std::int32_t>> item_categories;  // per item, sorted category ids
  std::vector<std::string> category_names;
  std::vector<std::string> user_external_ids;
  std::vector<std::string> item_external_ids;
  std::unordered_map<std::string, UserIndex> user_index;
  std::unordered_map<std::string, ItemIndex> item_index;

  std::size_t num_interactions() const {
    std::size_t n = 0;
    for (const auto& p : positives) n += p.size();
    return n;
  }
  double density() const {
    return num_users == 0 || num_items == 0
               ? 0.0
               : static_cast<double>(num_interactions()) /
                     (static_cast<double>(num_users) * static_cast<double>(num_items));
  }
  /// Structural checks (contiguity, sortedness, nonempty categories).
  void validate() const;
};

struct PreprocessStats {
  std::size_t input_ratings = 0;
  std::size_t below_threshold = 0;   // rating < 3
  std::size_t duplicates_collapsed = 0;
  std::size_t items_without_categories = 0;
  std::size_t filter_rounds = 0;     // fixpoint iterations
  std::size_t removed_users = 0;
  std::size_t removed_items = 0;
};

/// Applies the cleaning pipeline: drop ratings < 3, collapse duplicate
/// (user,item) pairs keeping the latest timestamp, then iterate the
/// item-min-5 / user-min-5 filters to a fixpoint, and reindex contiguously.
/// Throws std::runtime_error (with the diagnostic counts) if nothing survives.
InteractionStore preprocess(const ParsedRatings& raw, PreprocessStats* stats = nullptr);

/// Per-user train/valid/test partition of the positives.
struct SplitDataset {
  std::vector<std::vector<ItemIndex>> train;  // sorted
  std::vector<std::vector<ItemIndex>> valid;  // sorted
  std::vector<std::vector<ItemIndex>> test;   // sorted
  std::uint64_t seed = 0;
};

/// Per-user holdout counts for n positives: valid gets max(1, floor(0.1 n)),
/// test gets floor(0.1 n), train the rest (so n=5 gives 4/1/0).
struct SplitCounts {
  int train = 0, valid = 0, test = 0;
};
SplitCounts split_counts(int n);

/// 80/10/10 per-user split; the shuffle for user u is seeded by (seed, u).
SplitDataset split_per_user(const InteractionStore& store, std::uint64_t seed);

enum class UserType { niche, diverse, blockbuster };

const char* user_type_name(UserType t);

/// Item popularity, head/tail flags and user-type labels.
struct SegmentMap {
  std::vector<double> popularity;   // pi_i in (0,1], floored at 1/(num_users+1)
  std::vector<bool> head_flag;      // true = I1
  std::vector<UserType> user_type;  // from the user's full positive profile
  std::int32_t head_count = 0;      // |I1| = ceil(0.2 * num_items)
};

SegmentMap segment(const InteractionStore& store, const SplitDataset& split);

/// JSON-lines cache with a version header; load throws on version mismatch.
void save_store(const InteractionStore& store, const std::string& path);
InteractionStore load_store(const std::string& path);

/// Keeps at most max_users users (uniform, seeded), re-runs the min-5
/// fixpoint on the restriction and reindexes. max_users == 0 keeps everything.
InteractionStore subsample_users(const InteractionStore& store, std::size_t max_users,
                                 std::uint64_t seed);

}  // namespace recpriv
