#include "recpriv/ldp.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "recpriv/parallel.hpp"

namespace recpriv {

FlipProbabilities flip_probabilities(double epsilon) {
  if (!std::isfinite(epsilon) || epsilon <= 0.0)
    throw std::invalid_argument("flip_probabilities: epsilon must be positive and finite");
  // computed via exp(-eps) so large budgets cannot overflow e^eps
  const double e = std::exp(-epsilon);
  FlipProbabilities p;
  p.p_pos = 1.0 / (1.0 + e);
  p.p_neg = e / (1.0 + e);
  return p;
}

std::vector<ItemIndex> perturb_user_bernoulli(std::span<const ItemIndex> train_positives,
                                              std::int32_t num_items, FlipProbabilities p,
                                              SplitMix64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ItemIndex> out;
  std::size_t pos_at = 0;
  for (ItemIndex i = 0; i < num_items; ++i) {
    const bool is_positive = pos_at < train_positives.size() && train_positives[pos_at] == i;
    if (is_positive) ++pos_at;
    const double keep_prob = is_positive ? p.p_pos : p.p_neg;
    if (unit(rng) < keep_prob) out.push_back(i);
  }
  return out;
}

std::vector<ItemIndex> perturb_user_binomial(std::span<const ItemIndex> train_positives,
                                             std::int32_t num_items, FlipProbabilities p,
                                             SplitMix64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ItemIndex> out;
  for (ItemIndex i : train_positives)
    if (unit(rng) < p.p_pos) out.push_back(i);

  // complement of the (sorted) positives
  std::vector<ItemIndex> candidates;
  candidates.reserve(static_cast<std::size_t>(num_items) - train_positives.size());
  std::size_t pos_at = 0;
  for (ItemIndex i = 0; i < num_items; ++i) {
    if (pos_at < train_positives.size() && train_positives[pos_at] == i) {
      ++pos_at;
      continue;
    }
    candidates.push_back(i);
  }
  if (!candidates.empty() && p.p_neg > 0.0) {
    std::binomial_distribution<std::int64_t> count(static_cast<std::int64_t>(candidates.size()),
                                                   p.p_neg);
    const std::int64_t k = count(rng);
    // partial Fisher-Yates: the first k entries become the sample
    for (std::int64_t j = 0; j < k; ++j) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(j),
                                                      candidates.size() - 1);
      std::swap(candidates[static_cast<std::size_t>(j)], candidates[pick(rng)]);
      out.push_back(candidates[static_cast<std::size_t>(j)]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::vector<ItemIndex>> perturb_training_set(const SplitDataset& split,
                                                         const InteractionStore& store,
                                                         const LdpSpec& spec, bool serial) {
  const FlipProbabilities p = flip_probabilities(spec.epsilon);
  std::vector<std::vector<ItemIndex>> perturbed(split.train.size());
  par::for_each_index(
      split.train.size(),
      [&](std::size_t u) {
        SplitMix64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(u)));
        perturbed[u] = perturb_user_binomial(split.train[u], store.num_items, p, rng);
      },
      serial);
  return perturbed;
}

}  // namespace recpriv
