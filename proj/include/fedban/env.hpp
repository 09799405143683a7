// SPDX-License-Identifier: MIT
//
// Bandit environments: contexts, rewards, instance generators, and the
// Monte-Carlo estimators for the diversity (lambda0) and margin (C0)
// constants.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fedban/linalg.hpp"
#include "fedban/rng.hpp"

#include <json.hpp>

namespace fedban {

/// The realized decision set of one (client, round): one feature vector per
/// available arm. Invariant: every arm has ||x|| <= 1 + 1e-9.
struct DecisionSet {
  std::vector<VecD> arms;

  int num_arms() const { return static_cast<int>(arms.size()); }
  const VecD& arm(int a) const { return arms[static_cast<size_t>(a)]; }
};

/// Families of problem instances.
enum class InstanceKind {
  /// K arms drawn uniformly from the unit ball, with a fixed per-client
  /// rotation so context laws differ across clients. Satisfies the diversity
  /// and margin conditions with estimated constants.
  DiverseMargin,
  /// Two arms: a random single-block feature vs. the zero arm, with theta*
  /// assembled from per-block circle draws of radius r. Hard instance whose
  /// margin constant scales like 1/r.
  SphereHard,
  /// Fixed axis-aligned features: the first client sees +-e1/2, everyone
  /// else +-e2/2. The optimal-arm Gram matrix of every single client is
  /// rank-1, so the diversity condition fails (lambda0 = 0).
  AxisNecessity,
};

const char* to_string(InstanceKind kind);
InstanceKind instance_kind_from_string(const std::string& s);

/// Optional instance metadata: Monte-Carlo estimates recorded by the
/// generators plus generator bookkeeping.
struct InstanceMeta {
  std::optional<double> lambda0;        ///< diversity-constant estimate
  std::optional<double> C0;             ///< margin-constant estimate
  std::optional<double> sphere_radius;  ///< SphereHard only: block radius r
  std::optional<std::uint64_t> rotation_seed;  ///< DiverseMargin only
};

/// An immutable problem instance shared by all clients of a run.
struct Instance {
  int d = 0;
  int num_arms = 0;
  int num_clients = 0;
  VecD theta_star;
  InstanceKind kind = InstanceKind::DiverseMargin;
  InstanceMeta meta;

  /// Per-client context rotations (DiverseMargin; identity otherwise).
  /// Derived deterministically from meta.rotation_seed; identity when the
  /// seed is absent. Precomputed so concurrent reads are safe.
  std::vector<Eigen::MatrixXd> rotations;

  /// Rebuilds `rotations` from meta.rotation_seed (called by generators and
  /// by deserialization).
  void build_rotations();

  /// Validates the structural invariants; throws Error on violation.
  void validate() const;
};

/// A single reward observation: value = x^T theta* + N(0, 1).
struct RewardSample {
  double value = 0.0;
};

/// Draws the decision set of one round for `client` under the instance's
/// context law. `client` must be in [0, num_clients).
DecisionSet sample_context(const Instance& inst, int client, RngStream& rng);

/// Draws a reward for playing feature vector x (||x|| <= 1).
RewardSample reward(const Instance& inst, const VecD& x, RngStream& rng);

/// Expected-reward gap of the chosen arm against the best arm of `ds`
/// (always >= 0; 0 iff the chosen arm attains the maximum mean).
double instantaneous_regret(const Instance& inst, const DecisionSet& ds, int chosen);

/// Index of the arm with maximal mean reward under theta*; ties -> lowest.
int optimal_arm(const Instance& inst, const DecisionSet& ds);

/// Builds a SphereHard instance: d even, 0 < r <= 1/sqrt(d). Each 2-block of
/// theta* is an independent uniform draw on the radius-r circle. Records
/// Monte-Carlo lambda0/C0 estimates in meta.
Instance make_sphere_hard_instance(int d, int M, double r, RngStream& rng);

/// Builds a DiverseMargin instance: theta* uniform on the unit sphere; the
/// generator retries context-law rotations until the estimated optimal-arm
/// Gram min-eigenvalue reaches gap_floor (callers typically pass 0.02/d).
/// Records achieved lambda0 and a C0 estimate in meta.
Instance make_diverse_margin_instance(int d, int K, int M, double gap_floor,
                                      RngStream& rng);

/// Builds the fixed axis instance. theta* is pinned to (1,1)/sqrt(2), a
/// representative of the {+-1}^2/sqrt(2) family used by the lower-bound
/// construction (the generator takes no RNG, so the choice is deterministic).
Instance make_axis_instance(int M);

/// lambda_min of (1/n) sum phi(c, a*) phi(c, a*)^T over n context draws for
/// `client`, with the optimal arm a* computed from the true theta*.
/// Requires n_samples >= 1000.
double estimate_min_eig_optimal(const Instance& inst, int client, int n_samples,
                                RngStream& rng);

/// Margin-constant estimate: max over the grid of
/// P_hat[min sub-optimal gap <= eps] / eps. Grid must be positive and sorted
/// ascending.
double estimate_margin_constant(const Instance& inst, int client,
                                std::span<const double> eps_grid, int n_samples,
                                RngStream& rng);

/// JSON serialization with pinned field names:
/// d, num_arms, num_clients, kind, theta_star, meta.
nlohmann::json instance_to_json(const Instance& inst);
Instance instance_from_json(const nlohmann::json& j);
void save_instance(const Instance& inst, const std::string& path);
Instance load_instance(const std::string& path);

}  // namespace fedban
