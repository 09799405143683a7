// SPDX-License-Identifier: MIT
//
// Round-synchronized simulation of M clients against an Instance: phase
// schedule, regret accounting, per-phase diagnostics, deterministic seeding,
// sweeps, and result serialization.

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fedban/bandit.hpp"
#include "fedban/env.hpp"

#include <json.hpp>

namespace fedban {

enum class Algorithm { Robin, LocalOnly, NonPrivateAvg };

const char* to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

/// Optional config overrides for quantities the run would otherwise derive.
struct Overrides {
  std::optional<int> U;
  std::optional<double> alpha;
};

/// Full description of one episode.
struct RunConfig {
  Instance instance;
  Algorithm algorithm = Algorithm::Robin;
  int M = 0;  ///< must equal instance.num_clients
  int d = 0;  ///< must equal instance.d
  std::int64_t T = 0;
  PrivacyParams privacy{1.0, 1e-5};
  double beta = 0.05;
  std::uint64_t seed = 0;
  Overrides overrides;
  int jobs = 1;  ///< client-level parallelism within a round (determinism-safe)
};

/// Convenience constructor that fills M and d from the instance.
RunConfig make_run_config(Instance inst, Algorithm alg, std::int64_t T,
                          PrivacyParams privacy, double beta, std::uint64_t seed);

/// Number of phases covering T rounds under the doubling schedule
/// |T_p| = 2^p, p = 0..P-1 (equivalently P = ceil(log2(T+1))).
int phases_for_horizon(std::int64_t T);

/// First global round (1-based) of phase p.
std::int64_t phase_start_round(int p);

/// Per-phase diagnostics, recorded at the end of each phase (including a
/// truncated final phase).
struct PhaseDiag {
  int phase = 0;
  std::int64_t len = 0;  ///< rounds actually executed in this phase
  /// lambda_min of each client's accumulator Gram at phase end (cumulative
  /// during Init phases, phase-local during Greedy phases).
  VecD min_eig_per_client;
  /// ||theta_hat - theta*|| for the estimate produced by this phase's
  /// end-of-phase aggregation; NaN when no aggregation happened here.
  double global_est_error = std::numeric_limits<double>::quiet_NaN();
  /// Privacy budget consumed so far (after this phase's aggregation, if any).
  PrivacyParams budget_spent{0.0, 0.0};
};

/// Everything an episode produces.
struct RunResult {
  /// cumulative_regret[t] = sum over rounds 1..t+1 and all clients of the
  /// expected-reward gap (regret uses true means, not realized rewards).
  std::vector<double> cumulative_regret;
  std::vector<PhaseDiag> phase_diag;
  double wallclock_sec = 0.0;
  PrivacyParams budget_spent{0.0, 0.0};
  int P = 0;
  int U_used = 0;
  bool U_capped = false;
  double alpha_used = 0.0;
  double lambda0_used = 0.0;  ///< diversity constant used for c1 (after floor)
  /// All inter-entity traffic, in order (the privacy surface: the only data
  /// that ever crosses the client/server boundary).
  std::vector<UploadMsg> uploads;
  std::vector<BroadcastMsg> broadcasts;
};

/// Runs one episode. Deterministic given cfg (including cfg.jobs).
/// Configuration inconsistencies raise a descriptive error before any round
/// executes.
RunResult run_episode(const RunConfig& cfg);

/// Baseline entry points: force the algorithm and delegate to run_episode.
/// LocalOnly runs M independent LinUCB learners forever (no communication);
/// NonPrivateAvg follows the phased protocol with the private aggregation
/// replaced by the exact mean of the uploads.
RunResult baseline_local_only(RunConfig cfg);
RunResult baseline_nonprivate_avg(RunConfig cfg);

/// Diagnostic runner for reference policies (oracle, uniform-random, ...):
/// the policy picks the arm each round; no learning state, uploads, or
/// diagnostics. Shares the context/reward streams with run_episode so
/// results are comparable. Test/diagnostic use only; not CLI-reachable.
using ReferencePolicy = std::function<int(int client, const DecisionSet& ds, RngStream& rng)>;
RunResult run_episode_with_policy(const RunConfig& cfg, const ReferencePolicy& policy);

/// Sweep axis: which RunConfig field the values override.
enum class SweepAxis { Epsilon, M, T };

const char* to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& s);

struct SweepSpec {
  SweepAxis axis = SweepAxis::Epsilon;
  std::vector<double> values;  ///< integral for M/T axes
  std::vector<std::uint64_t> seeds;
};

struct SweepCell {
  double value = 0.0;
  std::uint64_t seed = 0;
  RunResult result;
};

/// Full factorial over values x seeds; cells are independent episodes
/// (cell seed = the listed seed; all intra-run streams derive from it by
/// path). `jobs` parallelizes across cells; results are ordered value-major
/// then seed regardless of execution order.
std::vector<SweepCell> sweep(const RunConfig& base, const SweepSpec& spec, int jobs);

/// The per-cell config transformation used by sweep(): applies one axis value
/// and a seed to a copy of `base` (jobs reset to 1). Exposed so output tooling
/// can reproduce a cell's exact effective config.
RunConfig apply_sweep_value(RunConfig base, SweepAxis axis, double value,
                            std::uint64_t seed);

/// Rebuilds a config's instance for a different client count (same theta*,
/// same context-law seed). Used by the M-axis sweep.
Instance resize_instance_clients(Instance inst, int M);

/// Canonical JSON of a config (embeds the instance); basis of the config
/// hash stamped into every output file.
nlohmann::json run_config_to_json(const RunConfig& cfg);
std::string run_config_hash(const RunConfig& cfg);

/// Output serialization. Column names are fixed:
///   rounds: `round,cum_regret`
///   phases: `phase,len,min_eig_min,min_eig_med,est_error,eps_spent,delta_spent`
/// Both start with a `# config_hash=... seed=...` comment line. Deterministic
/// byte-for-byte given (cfg, result).
std::string rounds_csv(const RunResult& result, const std::string& config_hash,
                       std::uint64_t seed);
std::string phases_csv(const RunResult& result, const std::string& config_hash,
                       std::uint64_t seed);

/// Run summary (final regret, fitted regret-per-log2(T) slope over the last
/// four phases, achieved and instance-level diversity/margin estimates,
/// budget spent). Contains the config hash and seed as fields; excludes
/// wallclock so reruns are byte-identical.
nlohmann::json summary_json(const RunConfig& cfg, const RunResult& result,
                            const std::string& config_hash);

}  // namespace fedban
