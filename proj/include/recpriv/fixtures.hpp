#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recpriv/dataset.hpp"
#include "recpriv/models.hpp"

namespace recpriv::fixtures {

/// Implicit-feedback data with planted taste structure and a popularity
/// skew, so trained models have real signal to find and popularity metrics
/// have a nonzero baseline. Includes a sprinkle of sub-threshold ratings and
/// duplicates for the preprocessing path to chew on.
ParsedRatings synthetic_ratings(int num_users, int num_items, std::uint64_t seed);

/// preprocess(synthetic_ratings(...)).
InteractionStore synthetic_store(int num_users, int num_items, std::uint64_t seed);

/// Tiny instance (<= 10 users/items) with hand-rollable shapes plus random
/// recommendation lists; what the metric oracle comparisons run on.
struct RandomInstance {
  InteractionStore store;
  SplitDataset split;
  SegmentMap segments;
  std::vector<RecommendationList> recs;
  int k = 0;
};
RandomInstance random_instance(std::uint64_t seed);

/// Writes MovieLens-format ratings.dat / movies.dat derived from
/// synthetic_ratings under `dir`; returns the two paths.
std::pair<std::string, std::string> write_movielens_files(const std::string& dir, int num_users,
                                                          int num_items, std::uint64_t seed);

/// Writes Yelp-format review/business JSON-lines files under `dir`; one
/// extra out-of-state business (plus its reviews) exercises the state filter.
std::pair<std::string, std::string> write_yelp_files(const std::string& dir, int num_users,
                                                     int num_items, std::uint64_t seed);

}  // namespace recpriv::fixtures
