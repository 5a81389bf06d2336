#pragma once

#include <functional>
#include <string>
#include <vector>

#include "recpriv/dpsgd.hpp"
#include "recpriv/metrics.hpp"

namespace recpriv::verify {

struct SuiteResult {
  std::string name;
  bool passed = false;
  double ms = 0.0;
  std::string detail;  // failure reason, or a short summary when green
};

/// Straight-line reimplementation of the full metric report, written from
/// the formulas with no code shared with metrics.cpp. The oracle the
/// production path is compared against.
MetricsReport reference_report(const std::vector<RecommendationList>& recs,
                               const InteractionStore& store, const SplitDataset& split,
                               const SegmentMap& segments, int k, double alpha = 0.01);

/// Max absolute difference over every defined cell of two reports; NaN cells
/// must agree on NaN-ness (mismatch returns +inf).
double report_distance(const MetricsReport& a, const MetricsReport& b);

using ClipFn = std::function<std::vector<double>(std::vector<double>, double)>;

/// Production metrics vs the brute-force reference on random tiny instances.
SuiteResult metric_oracle_suite(int instances = 10, std::uint64_t seed = 2024);

/// Central finite differences against the exact gradients of all four model
/// kinds, plus the clip contract. `clip_fn` is injectable so a broken clip
/// (mutation fixture) must turn the suite red; empty means recpriv::clip.
SuiteResult gradient_check_suite(int draws_per_model = 100, ClipFn clip_fn = {});

/// Closed forms, a quadrature oracle for the q=1 Renyi divergence, the
/// sigma calibration value, and ledger monotonicity.
SuiteResult accountant_suite();

/// Randomized-response exact probabilities and empirical flip rates.
SuiteResult ldp_rate_suite();

/// Kolmogorov-Smirnov and variance checks of the injected Gaussian noise.
SuiteResult noise_distribution_suite();

std::vector<SuiteResult> run_all();

}  // namespace recpriv::verify
