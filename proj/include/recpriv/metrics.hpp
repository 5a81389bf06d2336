#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "recpriv/dataset.hpp"
#include "recpriv/models.hpp"

namespace recpriv {

/// One metric bundle; `users` counts the users that contributed to the NDCG
/// cell (0 flags an empty group, whose values are NaN).
struct MetricValues {
  double ndcg = 0.0;
  double kld = 0.0;
  double popularity_lift = 0.0;
  double novelty = 0.0;
  double coverage = 0.0;
  double dpf = 0.0;
  int users = 0;
};

struct MetricsReport {
  int k = 10;
  MetricValues overall;
  std::map<std::string, MetricValues> by_user_type;   // niche / diverse / blockbuster
  std::map<std::string, MetricValues> by_item_group;  // I1 / I2 (dpf undefined there)
  int evaluated_users = 0;  // users with a nonempty test set
  int total_users = 0;
  std::int32_t num_items = 0;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

/// Binary-relevance NDCG with the (2^rel - 1)/log2(pos+1) gain; the ideal
/// list packs min(k, |relevant|) relevant items up front. Returns NaN when
/// `relevant` is empty (such users are excluded from aggregation).
double ndcg_at_k(const RecommendationList& rec, std::span<const ItemIndex> relevant_sorted, int k);

/// KL(p || (1-alpha) q + alpha p) over category distributions, natural log;
/// p comes from `history`, q from `rec_items`, each item spreading mass
/// 1/|categories(i)| over its categories with uniform weights.
double kld_miscalibration(std::span<const ItemIndex> history, std::span<const ItemIndex> rec_items,
                          const InteractionStore& store, double alpha = 0.01);

/// Group average popularity: user-mean of item popularity, then group-mean.
/// Throws when the group is empty or a user's list is empty.
double gap(const std::vector<std::vector<ItemIndex>>& user_lists,
           std::span<const double> popularity);

/// (GAP_q - GAP_p) / GAP_p; throws if GAP_p is not positive.
double popularity_lift(double gap_recommendations, double gap_profiles);

/// Mean of -log(popularity) over the list (natural log).
double novelty(std::span<const ItemIndex> rec_items, std::span<const double> popularity);

/// Fraction of `item_set` that appears in at least one recommendation list.
double coverage(std::span<const ItemIndex> item_set, const std::vector<RecommendationList>& recs);

/// coverage(I1) - coverage(I2).
double dpf(std::span<const ItemIndex> head_items, std::span<const ItemIndex> tail_items,
           const std::vector<RecommendationList>& recs);

/// Top-k lists for every user; exclusion is always the user's true training
/// positives, the scoring row is whatever the model was trained on
/// (perturbed under LDP). Parallel over users with a serial reduction.
std::vector<RecommendationList> recommend_all(const ModelState& state,
                                              const SplitDataset& split,
                                              const std::vector<std::vector<ItemIndex>>& train_rows,
                                              int k, bool serial = false);

/// All metrics overall, per user type, and per item group, from materialized
/// recommendation lists. Deterministic: a pure function of its inputs.
MetricsReport compute_metrics(const std::vector<RecommendationList>& recs,
                              const InteractionStore& store, const SplitDataset& split,
                              const SegmentMap& segments, int k, double alpha = 0.01);

/// recommend_all + compute_metrics.
MetricsReport evaluate(const ModelState& state, const InteractionStore& store,
                       const SplitDataset& split, const SegmentMap& segments, int k,
                       const std::vector<std::vector<ItemIndex>>& train_rows, bool serial = false);

}  // namespace recpriv
