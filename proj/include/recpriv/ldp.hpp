#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "recpriv/common.hpp"
#include "recpriv/dataset.hpp"

namespace recpriv {

/// Randomized-response budget for the binary feedback mechanism.
struct LdpSpec {
  double epsilon = 1.0;
  std::uint64_t seed = 0;
};

struct FlipProbabilities {
  double p_pos = 0.5;  // keep a true positive
  double p_neg = 0.5;  // promote a non-positive
};

/// p_pos = e^eps/(e^eps+1), p_neg = 1/(e^eps+1); p_pos + p_neg = 1 and
/// p_pos/p_neg = e^eps. Throws std::invalid_argument for eps <= 0 or non-finite.
FlipProbabilities flip_probabilities(double epsilon);

/// Reference path: one Bernoulli coin per item (kept for testing; the
/// production path must match it in distribution).
std::vector<ItemIndex> perturb_user_bernoulli(std::span<const ItemIndex> train_positives,
                                              std::int32_t num_items, FlipProbabilities p,
                                              SplitMix64& rng);

/// Production path: keeps each training positive with probability p_pos, then
/// draws k ~ Binomial(#candidates, p_neg) and adds k distinct non-positive
/// items. Candidates are all items outside the user's training positives,
/// held-out items included.
std::vector<ItemIndex> perturb_user_binomial(std::span<const ItemIndex> train_positives,
                                             std::int32_t num_items, FlipProbabilities p,
                                             SplitMix64& rng);

/// Perturbs every user's training set; user u draws from a stream seeded by
/// (spec.seed, u), so the result is independent of thread count. Validation
/// and test sets are not touched by design.
std::vector<std::vector<ItemIndex>> perturb_training_set(const SplitDataset& split,
                                                         const InteractionStore& store,
                                                         const LdpSpec& spec,
                                                         bool serial = false);

}  // namespace recpriv
