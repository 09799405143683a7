// SPDX-License-Identifier: MIT
//
// User-level differential-privacy aggregation stack and the composition
// accountant: private range estimation (exponential mechanism over bin
// midpoints), winsorized means in 1D and high dimension, advanced
// composition, and the phased budget split used by the federated learner.

#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedban/linalg.hpp"
#include "fedban/rng.hpp"

namespace fedban {

/// A central-DP privacy target. epsilon > 0 (finite), delta in [0, 1).
struct PrivacyParams {
  double epsilon = 0.0;
  double delta = 0.0;
};

/// Per-phase budget split for a P-phase run:
///   eps0 = epsilon / sqrt(6 P log(2/delta)),  delta0 = delta / (2 P).
/// Carries the originating target so the split is self-describing.
struct BudgetSplit {
  double eps0 = 0.0;
  double delta0 = 0.0;
  int P = 0;
  PrivacyParams target;
};

/// Output interval of private_range. Invariant: hi - lo = 4 r exactly.
struct RangeInterval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Privately selects a plausible data range inside [-B, B]:
/// ceil(B/r) bins of length 2r starting at -B (the last may overhang B),
/// inputs snapped to the nearest bin midpoint, a midpoint sampled with
/// probability proportional to exp(-eps * c / 2) where
/// c(x) = max(#snapped below, #snapped above), and the window
/// [midpoint - 2r, midpoint + 2r] returned. Empty input -> uniform midpoint.
/// Requires |x_i| <= B for all i; r, eps, B > 0.
RangeInterval private_range(std::span<const double> xs, double eps, double r,
                            double B, RngStream& rng);

/// One-dimensional winsorized mean: spends eps/2 on private_range, clamps
/// each input to the returned window, and adds Laplace noise of scale
/// 8 r / (M eps) to the clamped mean (the clamped mean has sensitivity
/// 4 r / M, so the noise is exactly the eps/2-budget Laplace mechanism;
/// total budget eps). Requires at least one input.
double winsorized_mean_1d(std::span<const double> xs, double r, double eps,
                          double B, RngStream& rng);

/// High-dimensional winsorized mean: rotates inputs by U = H diag(signs)/sqrt(d)
/// with uniformly random signs, runs winsorized_mean_1d per rotated coordinate
/// with radius r' = 10 r sqrt(log(d M / beta) / d), per-coordinate budget
/// eps' = eps / sqrt(6 d log(1/delta)), and domain bound sqrt(d), then rotates
/// the coordinate means back. Inputs are the columns of xs; every column must
/// have norm <= 1 and d must be a power of two (callers pad).
VecD winsorized_mean_highd(const Eigen::Ref<const Eigen::MatrixXd>& xs, double r,
                           double beta, double eps, double delta, RngStream& rng);

/// Advanced composition: k-fold composition of an (eps, delta)-DP mechanism is
/// (eps sqrt(2 k log(1/delta')) + k eps (e^eps - 1), k delta + delta')-DP.
PrivacyParams compose_advanced(double eps, double delta, int k, double delta_prime);

/// High-privacy corollary branch of advanced composition: for
/// eps < 1/sqrt(k) (and eps < log 2), the composed epsilon is at most
/// eps * sqrt(6 k log(1/delta')). The caller is responsible for the
/// precondition; see verify_robin_budget.
double compose_corollary_eps(double eps, int k, double delta_prime);

/// Budget split for a P-phase private run against target pp.
BudgetSplit robin_budget(PrivacyParams pp, int P);

/// Result of recomposing a BudgetSplit against its target.
struct BudgetCheck {
  /// True iff the corollary precondition held AND the recomposition is within
  /// the target (componentwise).
  bool ok = false;
  /// eps0 < 1/sqrt(P); when false, the corollary bound does not apply and ok
  /// is false (a warning, never a silent pass).
  bool corollary_precondition_ok = false;
  /// The recomposed (epsilon, delta) from P copies of (eps0, delta0) with
  /// delta' = target.delta / 2.
  PrivacyParams composed;

  explicit operator bool() const { return ok; }
};

/// Recomposes P copies of (eps0, delta0) with delta' = target.delta/2 through
/// the corollary branch and checks the result against the split's target.
BudgetCheck verify_robin_budget(const BudgetSplit& split);

/// Budget consumed after k aggregation events under `split`, composed through
/// the same accountant branch as verify_robin_budget. k = 0 -> (0, 0).
PrivacyParams spent_budget(const BudgetSplit& split, int k);

/// Result of an empirical DP audit (binned neighboring-dataset ratio test).
struct DpAuditResult {
  double max_log_ratio = 0.0;  ///< max over bins of |log(p_hat/q_hat)|
  double max_excess = 0.0;     ///< max over bins of |log ratio| - slack - eps
  bool pass = false;           ///< true iff max_excess <= 0
  int bins = 0;
};

/// Audits winsorized_mean_1d at privacy level eps: M = 8 inputs, neighboring
/// datasets differing maximally in one entry (+B vs -B), n_samples draws per
/// side, `n_bins` histogram bins spanning the pooled sample range, add-one
/// smoothing, and per-bin slack of 3 binomial standard errors.
DpAuditResult audit_winsorized_mean_1d(double eps, int n_samples, int n_bins,
                                       RngStream& rng);

/// Negative control for the audit: the exact (noiseless) sample mean, which
/// must fail the same test.
DpAuditResult audit_exact_mean(double eps, int n_samples, int n_bins,
                               RngStream& rng);

#ifdef FEDBAN_TEST_HOOKS
namespace dp_testing {

/// Test-only: while any guard is alive on this thread, private_range picks
/// the minimum-cost midpoint deterministically and the winsorized means add
/// no Laplace noise (the eps -> infinity limit). Compiled only into test
/// builds; the shipped library and CLI have no such switch.
class ZeroNoiseGuard {
 public:
  ZeroNoiseGuard();
  ~ZeroNoiseGuard();
  ZeroNoiseGuard(const ZeroNoiseGuard&) = delete;
  ZeroNoiseGuard& operator=(const ZeroNoiseGuard&) = delete;
};

bool zero_noise_enabled();

}  // namespace dp_testing
#endif  // FEDBAN_TEST_HOOKS

}  // namespace fedban
