#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "recpriv/common.hpp"

namespace recpriv {

/// Per-step privatization parameters. clip_norm may be +inf as the "no
/// clipping" sentinel, but only with noise_multiplier == 0.
struct ClipNoiseSpec {
  double clip_norm = 1.0;        // C
  double noise_multiplier = 0.0; // sigma
  int batch_size = 256;          // B
  double sample_rate = 1.0;      // q = B / N

  void validate() const;
};

/// Rescales g so its l2 norm is at most C: g / max(1, |g|/C). Inputs already
/// within the bound come back bitwise unchanged.
std::vector<double> clip(std::vector<double> g, double clip_norm);

/// mean of the clipped gradients plus N(0, (sigma*C/B)^2) per coordinate.
/// Norms are re-checked here, not assumed. Throws on an empty batch.
std::vector<double> aggregate_and_noise(const std::vector<std::vector<double>>& clipped,
                                        const ClipNoiseSpec& spec, SplitMix64& rng);

/// theta <- theta - lr * (grad + weight_decay * theta)
void sgd_update(std::span<double> params, std::span<const double> grad, double lr,
                double weight_decay);

/// Renyi DP of one subsampled-Gaussian step at order alpha. Exact analytic
/// value alpha/(2 sigma^2) for q == 1; for q < 1 the standard binomial
/// expansion at integer alpha and the two-series evaluation of the moment
/// integral at fractional alpha, both in log space.
double rdp_subsampled_gaussian(double q, double sigma, double alpha);

/// The default order grid: {1.25, 1.5, 1.75, 2..64, 128, 256}.
std::vector<double> default_rdp_orders();

struct PrivacyLedger {
  std::uint64_t steps = 0;  // T
  double sample_rate = 1.0;
  double noise_multiplier = 0.0;
  std::vector<double> orders = default_rdp_orders();

  void record_step() { ++steps; }
};

/// Converts the accumulated RDP to (epsilon, delta):
/// eps = min_alpha [ T * rdp(q, sigma, alpha) + log(1/delta)/(alpha-1) ].
/// T == 0 gives 0; sigma == 0 gives +inf.
double ledger_epsilon(const PrivacyLedger& ledger, double delta);

/// Single-step Gaussian-mechanism calibration sqrt(2 ln(1.25/delta))/eps;
/// an initial guess only -- reported budgets always come from the ledger.
double noise_multiplier_for(double epsilon, double delta);

}  // namespace recpriv
