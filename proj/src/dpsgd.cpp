#include "recpriv/dpsgd.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace recpriv {

void ClipNoiseSpec::validate() const {
  if (!(clip_norm > 0.0)) throw std::invalid_argument("ClipNoiseSpec: clip_norm must be > 0");
  if (!(noise_multiplier >= 0.0) || !std::isfinite(noise_multiplier))
    throw std::invalid_argument("ClipNoiseSpec: noise_multiplier must be finite and >= 0");
  if (noise_multiplier > 0.0 && !std::isfinite(clip_norm))
    throw std::invalid_argument("ClipNoiseSpec: infinite clip_norm requires sigma == 0");
  if (batch_size <= 0) throw std::invalid_argument("ClipNoiseSpec: batch_size must be positive");
  if (!(sample_rate > 0.0) || sample_rate > 1.0)
    throw std::invalid_argument("ClipNoiseSpec: sample_rate must be in (0,1]");
}

std::vector<double> clip(std::vector<double> g, double clip_norm) {
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip: clip_norm must be > 0");
  if (!all_finite(g)) throw std::runtime_error("clip: non-finite gradient entry");
  const double norm = l2_norm(g);
  const double ratio = norm / clip_norm;  // 0 for the inf sentinel
  if (ratio > 1.0) {
    const double scale = clip_norm / norm;
    for (double& x : g) x *= scale;
  }
  return g;
}

std::vector<double> aggregate_and_noise(const std::vector<std::vector<double>>& clipped,
                                        const ClipNoiseSpec& spec, SplitMix64& rng) {
  spec.validate();
  if (clipped.empty()) throw std::invalid_argument("aggregate_and_noise: empty batch");
  const std::size_t dim = clipped.front().size();
  const double bound = spec.clip_norm * (1.0 + 1e-9);  // tolerate clip's own rounding
  std::vector<double> sum(dim, 0.0);
  for (const auto& g : clipped) {
    if (g.size() != dim) throw std::invalid_argument("aggregate_and_noise: shape mismatch");
    if (l2_norm(g) > bound)
      throw std::invalid_argument("aggregate_and_noise: input exceeds the clip norm");
    for (std::size_t k = 0; k < dim; ++k) sum[k] += g[k];
  }
  const double inv_b = 1.0 / static_cast<double>(spec.batch_size);
  for (double& x : sum) x *= inv_b;
  if (spec.noise_multiplier > 0.0) {
    const double sd = spec.noise_multiplier * spec.clip_norm * inv_b;
    std::normal_distribution<double> n01(0.0, 1.0);
    for (double& x : sum) x += sd * n01(rng);
  }
  return sum;
}

void sgd_update(std::span<double> params, std::span<const double> grad, double lr,
                double weight_decay) {
  if (params.size() != grad.size()) throw std::invalid_argument("sgd_update: shape mismatch");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0))
    throw std::invalid_argument("sgd_update: lr and weight_decay must be >= 0");
  for (std::size_t k = 0; k < params.size(); ++k)
    params[k] -= lr * (grad[k] + weight_decay * params[k]);
}

namespace {

double log_choose(double n, double k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

double log_sum_exp(std::span<const double> v) {
  const double hi = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

// binomial-expansion evaluation at integer order a:
// rdp = log( sum_k C(a,k) (1-q)^(a-k) q^k exp(k(k-1)/(2 sigma^2)) ) / (a-1)
double rdp_integer_order(double q, double sigma, std::int64_t a) {
  std::vector<double> terms(static_cast<std::size_t>(a) + 1);
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  for (std::int64_t k = 0; k <= a; ++k) {
    double t = log_choose(static_cast<double>(a), static_cast<double>(k));
    if (k < a) t += static_cast<double>(a - k) * log_1mq;
    if (k > 0) t += static_cast<double>(k) * log_q;
    t += static_cast<double>(k) * static_cast<double>(k - 1) / (2.0 * sigma * sigma);
    terms[static_cast<std::size_t>(k)] = t;
  }
  return log_sum_exp(terms) / (static_cast<double>(a) - 1.0);
}

double log_erfc(double x) {
  if (x < 25.0) {
    const double v = std::erfc(x);
    if (v > 0.0) return std::log(v);
  }
  const double x2 = x * x;
  return -x2 - std::log(x) - 0.5 * std::log(M_PI) + std::log1p(-0.5 / x2 + 0.75 / (x2 * x2));
}

// running signed sum held as (sign, log|value|)
struct SignedLog {
  int sign = 1;
  double log_abs = -std::numeric_limits<double>::infinity();

  void add(int term_sign, double term_log) {
    if (std::isinf(term_log) && term_log < 0) return;
    if (std::isinf(log_abs) && log_abs < 0) {
      sign = term_sign;
      log_abs = term_log;
      return;
    }
    if (sign == term_sign) {
      log_abs = std::max(log_abs, term_log) +
                std::log1p(std::exp(-std::abs(log_abs - term_log)));
      return;
    }
    if (term_log == log_abs) {
      log_abs = -std::numeric_limits<double>::infinity();
      sign = 1;
      return;
    }
    if (term_log > log_abs) {
      log_abs = term_log + std::log1p(-std::exp(log_abs - term_log));
      sign = term_sign;
    } else {
      log_abs = log_abs + std::log1p(-std::exp(term_log - log_abs));
    }
  }
};

// fractional orders: exact two-series evaluation of the sampled-Gaussian
// moment integral split at z0 (Mironov-Talwar-Zhang); continuous in q up to
// the pure-Gaussian value at q = 1
double rdp_fractional_order(double q, double sigma, double alpha) {
  const double sigma_sq = sigma * sigma;
  const double z0 = sigma_sq * std::log(1.0 / q - 1.0) + 0.5;
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const double sqrt2_sigma = std::sqrt(2.0) * sigma;

  SignedLog a0, a1;
  int coef_sign = 1;
  double log_coef = 0.0;  // log |C(alpha, i)|, updated incrementally
  double peak = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < 10000; ++i) {
    const double di = static_cast<double>(i);
    const double j = alpha - di;
    const double log_t0 = log_coef + di * log_q + j * log_1mq;
    const double log_t1 = log_coef + j * log_q + di * log_1mq;
    const double log_e0 = std::log(0.5) + log_erfc((di - z0) / sqrt2_sigma);
    const double log_e1 = std::log(0.5) + log_erfc((z0 - j) / sqrt2_sigma);
    const double log_s0 = log_t0 + (di * di - di) / (2.0 * sigma_sq) + log_e0;
    const double log_s1 = log_t1 + (j * j - j) / (2.0 * sigma_sq) + log_e1;
    a0.add(coef_sign, log_s0);
    a1.add(coef_sign, log_s1);
    peak = std::max({peak, log_s0, log_s1});
    if (di > alpha && std::max(log_s0, log_s1) < peak - 50.0) break;

    const double ratio = (alpha - di) / (di + 1.0);
    if (ratio < 0.0) coef_sign = -coef_sign;
    log_coef += std::log(std::abs(ratio));
  }
  SignedLog total = a0;
  total.add(a1.sign, a1.log_abs);
  if (total.sign < 0 || std::isinf(total.log_abs))
    throw std::runtime_error("rdp: fractional-order series failed to converge");
  return std::max(0.0, total.log_abs / (alpha - 1.0));
}

}  // namespace

double rdp_subsampled_gaussian(double q, double sigma, double alpha) {
  if (!(q > 0.0) || q > 1.0) throw std::invalid_argument("rdp: q must be in (0,1]");
  if (!(sigma > 0.0)) throw std::invalid_argument("rdp: sigma must be > 0");
  if (!(alpha > 1.0)) throw std::invalid_argument("rdp: alpha must be > 1");
  if (q == 1.0) return alpha / (2.0 * sigma * sigma);
  if (alpha == std::floor(alpha))
    return rdp_integer_order(q, sigma, static_cast<std::int64_t>(alpha));
  return rdp_fractional_order(q, sigma, alpha);
}

std::vector<double> default_rdp_orders() {
  std::vector<double> orders = {1.25, 1.5, 1.75};
  for (int a = 2; a <= 64; ++a) orders.push_back(static_cast<double>(a));
  orders.push_back(128.0);
  orders.push_back(256.0);
  return orders;
}

double ledger_epsilon(const PrivacyLedger& ledger, double delta) {
  if (!(delta > 0.0) || delta >= 1.0)
    throw std::invalid_argument("ledger_epsilon: delta must be in (0,1)");
  if (ledger.steps == 0) return 0.0;
  if (ledger.noise_multiplier == 0.0) return kInf;
  if (ledger.orders.empty()) throw std::invalid_argument("ledger_epsilon: empty order grid");
  const double log_inv_delta = std::log(1.0 / delta);
  double best = kInf;
  for (double alpha : ledger.orders) {
    const double rdp = rdp_subsampled_gaussian(ledger.sample_rate, ledger.noise_multiplier, alpha);
    const double eps = static_cast<double>(ledger.steps) * rdp + log_inv_delta / (alpha - 1.0);
    best = std::min(best, eps);
  }
  return best;
}

double noise_multiplier_for(double epsilon, double delta) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("noise_multiplier_for: epsilon must be > 0");
  if (!(delta > 0.0) || delta >= 1.25)
    throw std::invalid_argument("noise_multiplier_for: need 0 < delta < 1.25");
  return std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon;
}

}  // namespace recpriv
