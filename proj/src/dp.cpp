// SPDX-License-Identifier: MIT

#include "fedban/dp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace fedban {

namespace {

#ifdef FEDBAN_TEST_HOOKS
thread_local int g_zero_noise_depth = 0;
bool zero_noise() { return g_zero_noise_depth > 0; }
#else
constexpr bool zero_noise() { return false; }
#endif

void validate_range_params(double eps, double r, double B) {
  if (!(eps > 0.0) || !std::isfinite(eps)) fail("OutOfDomain", "eps must be positive");
  if (!(r > 0.0) || !std::isfinite(r)) fail("OutOfDomain", "r must be positive");
  if (!(B > 0.0) || !std::isfinite(B)) fail("OutOfDomain", "B must be positive");
}

}  // namespace

#ifdef FEDBAN_TEST_HOOKS
namespace dp_testing {
ZeroNoiseGuard::ZeroNoiseGuard() { ++g_zero_noise_depth; }
ZeroNoiseGuard::~ZeroNoiseGuard() { --g_zero_noise_depth; }
bool zero_noise_enabled() { return zero_noise(); }
}  // namespace dp_testing
#endif

RangeInterval private_range(std::span<const double> xs, double eps, double r,
                            double B, RngStream& rng) {
  validate_range_params(eps, r, B);
  for (double x : xs) {
    if (!std::isfinite(x)) fail("NonFiniteInput", "private_range input");
    if (std::abs(x) > B * (1.0 + 1e-12) + 1e-12)
      fail("OutOfDomain", "private_range input outside [-B, B]");
  }

  // Bins of length 2r from -B; the last may overhang B. Midpoint of bin j is
  // -B + (2j+1) r; snapping to the nearest midpoint is bin assignment.
  const auto n_bins = static_cast<std::int64_t>(std::ceil(B / r));
  auto bin_of = [&](double x) {
    const auto j = static_cast<std::int64_t>(std::floor((x + B) / (2.0 * r)));
    return std::clamp<std::int64_t>(j, 0, n_bins - 1);
  };

  std::vector<std::int64_t> count(static_cast<size_t>(n_bins), 0);
  for (double x : xs) ++count[static_cast<size_t>(bin_of(x))];

  // Cost of midpoint j: max(#snapped strictly below, #snapped strictly above).
  const auto total = static_cast<std::int64_t>(xs.size());
  std::vector<double> cost(static_cast<size_t>(n_bins), 0.0);
  std::int64_t below = 0;
  for (std::int64_t j = 0; j < n_bins; ++j) {
    const std::int64_t above = total - below - count[static_cast<size_t>(j)];
    cost[static_cast<size_t>(j)] = static_cast<double>(std::max(below, above));
    below += count[static_cast<size_t>(j)];
  }

  std::int64_t chosen;
  if (zero_noise()) {
    chosen = static_cast<std::int64_t>(
        std::min_element(cost.begin(), cost.end()) - cost.begin());
  } else {
    Eigen::VectorXd logw(n_bins);
    for (std::int64_t j = 0; j < n_bins; ++j)
      logw[j] = -eps * cost[static_cast<size_t>(j)] / 2.0;
    chosen = sample_categorical_logweights(rng, logw);
  }
  const double mid = -B + (2.0 * static_cast<double>(chosen) + 1.0) * r;
  return RangeInterval{mid - 2.0 * r, mid + 2.0 * r};
}

double winsorized_mean_1d(std::span<const double> xs, double r, double eps,
                          double B, RngStream& rng) {
  validate_range_params(eps, r, B);
  if (xs.empty()) fail("OutOfDomain", "winsorized_mean_1d requires at least one input");
  const RangeInterval range = private_range(xs, eps / 2.0, r, B, rng);
  double sum = 0.0;
  for (double x : xs) sum += std::clamp(x, range.lo, range.hi);
  const double mean = sum / static_cast<double>(xs.size());
  if (zero_noise()) return mean;
  // The clamped mean has sensitivity (hi - lo)/M = 4r/M, so scale 8r/(M eps)
  // is the Laplace mechanism at budget eps/2; combined with the eps/2 range
  // step the total budget is eps.
  const double scale = 8.0 * r / (static_cast<double>(xs.size()) * eps);
  return mean + sample_laplace(rng, scale);
}

VecD winsorized_mean_highd(const Eigen::Ref<const Eigen::MatrixXd>& xs, double r,
                           double beta, double eps, double delta, RngStream& rng) {
  const Eigen::Index d = xs.rows();
  const Eigen::Index M = xs.cols();
  if (!is_pow2(d)) fail("BadDimension", "winsorized_mean_highd requires power-of-two d");
  if (M < 1) fail("OutOfDomain", "winsorized_mean_highd requires at least one input");
  validate_range_params(eps, r, 1.0);
  if (!(beta > 0.0 && beta < 1.0)) fail("OutOfDomain", "beta must be in (0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) fail("OutOfDomain", "delta must be in (0, 1)");
  for (Eigen::Index i = 0; i < M; ++i) {
    if (xs.col(i).norm() > 1.0 + 1e-9)
      fail("OutOfDomain", "winsorized_mean_highd inputs must lie in the unit ball");
  }

  VecD signs(d);
  for (Eigen::Index s = 0; s < d; ++s) signs[s] = (rng.uniform01() < 0.5) ? 1.0 : -1.0;

  const double dd = static_cast<double>(d);
  const double eps1 = eps / std::sqrt(6.0 * dd * std::log(1.0 / delta));
  const double r1 =
      10.0 * r * std::sqrt(std::log(dd * static_cast<double>(M) / beta) / dd);
  const double bound = std::sqrt(dd);  // domain bound B sqrt(d) with B = 1

  Eigen::MatrixXd rotated(d, M);
  for (Eigen::Index i = 0; i < M; ++i)
    rotated.col(i) = hadamard_rotate(xs.col(i), signs, /*inverse=*/false);

  VecD mean_rot(d);
  std::vector<double> coord(static_cast<size_t>(M));
  for (Eigen::Index s = 0; s < d; ++s) {
    for (Eigen::Index i = 0; i < M; ++i) coord[static_cast<size_t>(i)] = rotated(s, i);
    mean_rot[s] = winsorized_mean_1d(coord, r1, eps1, bound, rng);
  }
  return hadamard_rotate(mean_rot, signs, /*inverse=*/true);
}

PrivacyParams compose_advanced(double eps, double delta, int k, double delta_prime) {
  if (k < 1) fail("OutOfDomain", "compose_advanced requires k >= 1");
  if (!(eps > 0.0) || !std::isfinite(eps)) fail("OutOfDomain", "eps must be positive");
  if (!(delta >= 0.0 && delta < 1.0)) fail("OutOfDomain", "delta must be in [0, 1)");
  if (!(delta_prime > 0.0 && delta_prime < 1.0))
    fail("OutOfDomain", "delta_prime must be in (0, 1)");
  const double kk = static_cast<double>(k);
  const double eps_c = eps * std::sqrt(2.0 * kk * std::log(1.0 / delta_prime)) +
                       kk * eps * (std::exp(eps) - 1.0);
  return PrivacyParams{eps_c, kk * delta + delta_prime};
}

double compose_corollary_eps(double eps, int k, double delta_prime) {
  if (k < 1) fail("OutOfDomain", "compose_corollary_eps requires k >= 1");
  if (!(eps > 0.0)) fail("OutOfDomain", "eps must be positive");
  if (!(delta_prime > 0.0 && delta_prime < 1.0))
    fail("OutOfDomain", "delta_prime must be in (0, 1)");
  return eps * std::sqrt(6.0 * static_cast<double>(k) * std::log(1.0 / delta_prime));
}

BudgetSplit robin_budget(PrivacyParams pp, int P) {
  if (P < 1) fail("OutOfDomain", "robin_budget requires P >= 1");
  if (!(pp.epsilon > 0.0) || !std::isfinite(pp.epsilon))
    fail("OutOfDomain", "epsilon must be positive and finite");
  if (!(pp.delta > 0.0 && pp.delta < 1.0))
    fail("OutOfDomain", "delta must be in (0, 1) for the phased split");
  BudgetSplit split;
  split.P = P;
  split.target = pp;
  split.eps0 =
      pp.epsilon / std::sqrt(6.0 * static_cast<double>(P) * std::log(2.0 / pp.delta));
  split.delta0 = pp.delta / (2.0 * static_cast<double>(P));
  return split;
}

BudgetCheck verify_robin_budget(const BudgetSplit& split) {
  BudgetCheck check;
  if (split.P < 1 || !(split.eps0 > 0.0)) return check;  // ok = false
  const double delta_prime = split.target.delta / 2.0;
  check.composed.epsilon = compose_corollary_eps(split.eps0, split.P, delta_prime);
  check.composed.delta = static_cast<double>(split.P) * split.delta0 + delta_prime;
  check.corollary_precondition_ok =
      split.eps0 < 1.0 / std::sqrt(static_cast<double>(split.P)) &&
      split.eps0 < std::log(2.0);
  const bool within =
      check.composed.epsilon <= split.target.epsilon * (1.0 + 1e-9) &&
      check.composed.delta <= split.target.delta * (1.0 + 1e-9);
  check.ok = check.corollary_precondition_ok && within;
  return check;
}

PrivacyParams spent_budget(const BudgetSplit& split, int k) {
  if (k < 0) fail("OutOfDomain", "spent_budget requires k >= 0");
  if (k == 0) return PrivacyParams{0.0, 0.0};
  if (k > split.P) fail("OutOfDomain", "more aggregations than phases");
  const double delta_prime = split.target.delta / 2.0;
  return PrivacyParams{compose_corollary_eps(split.eps0, k, delta_prime),
                       static_cast<double>(k) * split.delta0 + delta_prime};
}

namespace {

// Shared audit harness: draws n samples of `mech` on two neighboring datasets
// (M = 8; one entry +B vs -B, the maximal single-entry change), bins the
// pooled outputs, and compares per-bin log-frequency ratios against
// eps + 3 binomial standard errors (add-one smoothing).
template <typename Mech>
DpAuditResult run_audit(double eps, int n_samples, int n_bins, RngStream& rng,
                        Mech&& mech) {
  if (n_samples < 1000) fail("OutOfDomain", "audit requires n_samples >= 1000");
  if (n_bins < 2) fail("OutOfDomain", "audit requires at least 2 bins");
  constexpr int kM = 8;
  constexpr double kB = 1.0;
  std::vector<double> d0(kM, 0.0), d1(kM, 0.0);
  d0[kM - 1] = kB;
  d1[kM - 1] = -kB;

  std::vector<double> s0(static_cast<size_t>(n_samples));
  std::vector<double> s1(static_cast<size_t>(n_samples));
  RngStream r0 = rng.child("side", 0);
  RngStream r1 = rng.child("side", 1);
  for (int i = 0; i < n_samples; ++i) s0[static_cast<size_t>(i)] = mech(d0, r0);
  for (int i = 0; i < n_samples; ++i) s1[static_cast<size_t>(i)] = mech(d1, r1);

  // Bin edges span the pooled [0.1%, 99.9%] quantile range; outliers are
  // clamped into the edge bins so every sample is counted.
  std::vector<double> pooled;
  pooled.reserve(s0.size() + s1.size());
  pooled.insert(pooled.end(), s0.begin(), s0.end());
  pooled.insert(pooled.end(), s1.begin(), s1.end());
  std::sort(pooled.begin(), pooled.end());
  const auto quantile = [&](double q) {
    const auto idx = static_cast<size_t>(q * static_cast<double>(pooled.size() - 1));
    return pooled[idx];
  };
  double lo = quantile(0.001), hi = quantile(0.999);
  if (!(hi > lo)) {  // degenerate spread (e.g. a noiseless mechanism)
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / n_bins;
  const auto bin_of = [&](double x) {
    const auto j = static_cast<std::int64_t>(std::floor((x - lo) / width));
    return static_cast<size_t>(std::clamp<std::int64_t>(j, 0, n_bins - 1));
  };
  std::vector<double> c0(static_cast<size_t>(n_bins), 0.0);
  std::vector<double> c1(static_cast<size_t>(n_bins), 0.0);
  for (double x : s0) c0[bin_of(x)] += 1.0;
  for (double x : s1) c1[bin_of(x)] += 1.0;

  DpAuditResult res;
  res.bins = n_bins;
  res.max_excess = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < n_bins; ++j) {
    const double a = c0[static_cast<size_t>(j)] + 1.0;
    const double b = c1[static_cast<size_t>(j)] + 1.0;
    const double log_ratio = std::abs(std::log(a) - std::log(b));
    const double slack = 3.0 * std::sqrt(1.0 / a + 1.0 / b);
    res.max_log_ratio = std::max(res.max_log_ratio, log_ratio);
    res.max_excess = std::max(res.max_excess, log_ratio - slack - eps);
  }
  res.pass = res.max_excess <= 0.0;
  return res;
}

}  // namespace

DpAuditResult audit_winsorized_mean_1d(double eps, int n_samples, int n_bins,
                                       RngStream& rng) {
  constexpr double kR = 0.25;
  constexpr double kB = 1.0;
  return run_audit(eps, n_samples, n_bins, rng,
                   [&](const std::vector<double>& xs, RngStream& r) {
                     return winsorized_mean_1d(xs, kR, eps, kB, r);
                   });
}

DpAuditResult audit_exact_mean(double eps, int n_samples, int n_bins,
                               RngStream& rng) {
  return run_audit(eps, n_samples, n_bins, rng,
                   [](const std::vector<double>& xs, RngStream&) {
                     double s = 0.0;
                     for (double x : xs) s += x;
                     return s / static_cast<double>(xs.size());
                   });
}

}  // namespace fedban
