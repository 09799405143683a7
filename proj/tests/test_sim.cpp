// SPDX-License-Identifier: MIT

#include "fedban/sim.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

using namespace fedban;

namespace {

testing::AssertionResult throws_code(const std::function<void()>& fn,
                                     const std::string& code) {
  try {
    fn();
  } catch (const Error& e) {
    if (std::string(e.what()).rfind(code, 0) == 0) return testing::AssertionSuccess();
    return testing::AssertionFailure() << "threw '" << e.what() << "', wanted " << code;
  }
  return testing::AssertionFailure() << "did not throw (wanted " << code << ")";
}

Instance small_instance(int M, std::uint64_t gen_seed = 1001) {
  RngStream gen(gen_seed);
  return make_diverse_margin_instance(2, 4, M, 0.002, gen);
}

RunConfig small_config(Algorithm alg, int M = 4, std::int64_t T = 256,
                       std::uint64_t seed = 7) {
  RunConfig cfg = make_run_config(small_instance(M), alg, T, {1.0, 1e-5}, 0.05, seed);
  cfg.overrides.U = 3;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// Phase schedule

TEST(PhaseSchedule, CoversHorizonWithDoublingPhases) {
  EXPECT_EQ(phases_for_horizon(1), 1);
  EXPECT_EQ(phases_for_horizon(2), 2);
  EXPECT_EQ(phases_for_horizon(3), 2);
  EXPECT_EQ(phases_for_horizon(4), 3);
  EXPECT_EQ(phases_for_horizon(8191), 13);
  EXPECT_EQ(phases_for_horizon(8192), 14);
  EXPECT_EQ(phase_start_round(0), 1);
  EXPECT_EQ(phase_start_round(3), 8);
  EXPECT_TRUE(throws_code([] { phases_for_horizon(0); }, "OutOfDomain"));
}

TEST(PhaseSchedule, RunRecordsTruncatedFinalPhase) {
  const RunConfig cfg = small_config(Algorithm::LocalOnly, 2, 10);
  const RunResult res = run_episode(cfg);
  ASSERT_EQ(res.phase_diag.size(), 4u);  // lens 1, 2, 4, 3
  EXPECT_EQ(res.phase_diag[3].len, 3);
  EXPECT_EQ(res.cumulative_regret.size(), 10u);
  EXPECT_EQ(res.P, 4);
}

// ---------------------------------------------------------------------------
// Determinism and parallel merge

TEST(Determinism, IdenticalConfigsProduceIdenticalResults) {
  const RunConfig cfg = small_config(Algorithm::Robin);
  const RunResult a = run_episode(cfg);
  const RunResult b = run_episode(cfg);
  EXPECT_EQ(a.cumulative_regret, b.cumulative_regret);
  const std::string hash = run_config_hash(cfg);
  EXPECT_EQ(rounds_csv(a, hash, cfg.seed), rounds_csv(b, hash, cfg.seed));
  EXPECT_EQ(phases_csv(a, hash, cfg.seed), phases_csv(b, hash, cfg.seed));
  EXPECT_EQ(summary_json(cfg, a, hash).dump(2), summary_json(cfg, b, hash).dump(2));
}

TEST(Determinism, JobCountDoesNotChangeResults) {
  RunConfig cfg = small_config(Algorithm::Robin, 6, 300);
  const RunResult serial = run_episode(cfg);
  cfg.jobs = 4;
  const RunResult parallel = run_episode(cfg);
  EXPECT_EQ(serial.cumulative_regret, parallel.cumulative_regret);
  const std::string hash = run_config_hash(cfg);
  EXPECT_EQ(phases_csv(serial, hash, cfg.seed), phases_csv(parallel, hash, cfg.seed));
}

TEST(Determinism, SeedChangesResults) {
  RunConfig cfg = small_config(Algorithm::Robin);
  const RunResult a = run_episode(cfg);
  cfg.seed = 8;
  const RunResult b = run_episode(cfg);
  EXPECT_NE(a.cumulative_regret, b.cumulative_regret);
}

// ---------------------------------------------------------------------------
// Regret accounting

TEST(Regret, CumulativeIsNondecreasingAndStartsNonnegative) {
  const RunResult res = run_episode(small_config(Algorithm::Robin));
  ASSERT_FALSE(res.cumulative_regret.empty());
  EXPECT_GE(res.cumulative_regret.front(), 0.0);
  for (size_t t = 1; t < res.cumulative_regret.size(); ++t)
    EXPECT_GE(res.cumulative_regret[t], res.cumulative_regret[t - 1]);
}

TEST(Regret, OracleReferencePolicyHasZeroRegret) {
  RunConfig cfg = small_config(Algorithm::LocalOnly, 3, 64);
  const Instance inst = cfg.instance;
  const ReferencePolicy oracle = [&inst](int, const DecisionSet& ds, RngStream&) {
    return optimal_arm(inst, ds);
  };
  const RunResult res = run_episode_with_policy(cfg, oracle);
  EXPECT_EQ(res.cumulative_regret.back(), 0.0);
  EXPECT_TRUE(res.uploads.empty());
  EXPECT_TRUE(res.phase_diag.empty());
}

TEST(Regret, UniformRandomPolicyAccruesLinearRegret) {
  RunConfig cfg = small_config(Algorithm::LocalOnly, 3, 512);
  const ReferencePolicy uniform = [](int, const DecisionSet& ds, RngStream& rng) {
    return static_cast<int>(rng.uniform_int(ds.num_arms()));
  };
  const RunResult res = run_episode_with_policy(cfg, uniform);
  const double half = res.cumulative_regret[255];
  const double full = res.cumulative_regret[511];
  EXPECT_GT(full, 0.0);
  // Linear growth: the second half contributes about as much as the first.
  EXPECT_NEAR(half / full, 0.5, 0.1);
}

// ---------------------------------------------------------------------------
// Communication pattern (the privacy surface)

TEST(Traffic, LocalOnlyNeverCommunicates) {
  const RunResult res = run_episode(small_config(Algorithm::LocalOnly));
  EXPECT_TRUE(res.uploads.empty());
  EXPECT_TRUE(res.broadcasts.empty());
  EXPECT_EQ(res.budget_spent.epsilon, 0.0);
  EXPECT_EQ(res.budget_spent.delta, 0.0);
  EXPECT_EQ(res.U_used, 0);
}

TEST(Traffic, RobinUploadsExactlyOncePerClientPerCompletePhaseFromU) {
  // T = 300: phases 0..8 with lens 1,2,...,128,45.  Phase 8 is truncated, so
  // with U=3 the aggregating phases are the complete ones 3..7.
  RunConfig cfg = small_config(Algorithm::Robin, 5, 300);
  const RunResult res = run_episode(cfg);
  const int aggregating_phases = 5;
  EXPECT_EQ(res.uploads.size(), static_cast<size_t>(5 * aggregating_phases));
  EXPECT_EQ(res.broadcasts.size(), static_cast<size_t>(aggregating_phases));
  for (const UploadMsg& u : res.uploads) {
    EXPECT_GE(u.phase, 3);
    EXPECT_LE(u.phase, 7);
    EXPECT_LE(u.theta_tilde.norm(), 1.0 + 1e-9);
  }
  // Each aggregating phase sees each client exactly once.
  for (int p = 3; p <= 7; ++p) {
    std::vector<int> count(5, 0);
    for (const UploadMsg& u : res.uploads)
      if (u.phase == p) ++count[static_cast<size_t>(u.client)];
    for (int c = 0; c < 5; ++c) EXPECT_EQ(count[static_cast<size_t>(c)], 1);
  }
  // Broadcast estimates are recorded in the producing phase's diagnostics.
  for (const PhaseDiag& diag : res.phase_diag) {
    const bool aggregates = diag.phase >= 3 && diag.phase <= 7;
    EXPECT_EQ(!std::isnan(diag.global_est_error), aggregates) << diag.phase;
  }
}

TEST(Traffic, BudgetAccrualMatchesAccountant) {
  RunConfig cfg = small_config(Algorithm::Robin, 4, 300);
  const RunResult res = run_episode(cfg);
  const BudgetSplit split = robin_budget(cfg.privacy, res.P);
  const PrivacyParams expect5 = spent_budget(split, 5);
  EXPECT_DOUBLE_EQ(res.budget_spent.epsilon, expect5.epsilon);
  EXPECT_DOUBLE_EQ(res.budget_spent.delta, expect5.delta);
  EXPECT_LE(res.budget_spent.epsilon, cfg.privacy.epsilon * (1 + 1e-9));
  EXPECT_LE(res.budget_spent.delta, cfg.privacy.delta * (1 + 1e-9));
  // Per-phase ledger is nondecreasing and matches the final total.
  double prev = 0.0;
  for (const PhaseDiag& diag : res.phase_diag) {
    EXPECT_GE(diag.budget_spent.epsilon, prev);
    prev = diag.budget_spent.epsilon;
  }
  EXPECT_DOUBLE_EQ(res.phase_diag.back().budget_spent.epsilon,
                   res.budget_spent.epsilon);
}

TEST(Traffic, NonPrivateAvgBroadcastsTheExactMean) {
  RunConfig cfg = small_config(Algorithm::NonPrivateAvg, 3, 120);
  const RunResult res = run_episode(cfg);
  EXPECT_EQ(res.budget_spent.epsilon, 0.0);
  ASSERT_FALSE(res.broadcasts.empty());
  // Reconstruct each broadcast from the recorded uploads of its phase.
  for (const BroadcastMsg& bc : res.broadcasts) {
    VecD mean = VecD::Zero(cfg.d);
    int n = 0;
    for (const UploadMsg& u : res.uploads)
      if (u.phase == bc.phase - 1) {
        mean += u.theta_tilde;
        ++n;
      }
    ASSERT_EQ(n, cfg.M);
    mean /= n;
    EXPECT_LT((bc.theta_hat - mean).norm(), 1e-12);
  }
}

TEST(Traffic, SingleClientNonPrivateAvgBroadcastsItsOwnEstimate) {
  RunConfig cfg = small_config(Algorithm::NonPrivateAvg, 1, 120);
  const RunResult res = run_episode(cfg);
  ASSERT_FALSE(res.broadcasts.empty());
  ASSERT_EQ(res.uploads.size(), res.broadcasts.size());
  for (size_t k = 0; k < res.broadcasts.size(); ++k)
    EXPECT_LT((res.broadcasts[k].theta_hat - res.uploads[k].theta_tilde).norm(), 1e-15);
}

// ---------------------------------------------------------------------------
// Baselines

TEST(Baselines, WrappersForceTheAlgorithm) {
  RunConfig cfg = small_config(Algorithm::Robin);
  const RunResult lo = baseline_local_only(cfg);
  EXPECT_TRUE(lo.uploads.empty());
  const RunResult np = baseline_nonprivate_avg(cfg);
  EXPECT_FALSE(np.uploads.empty());
  EXPECT_EQ(np.budget_spent.epsilon, 0.0);
}

TEST(Baselines, LocalOnlyRegretScalesWithM) {
  // Context laws are identical across clients up to rotation, so total
  // LocalOnly regret should be ~M x the single-client run (within Monte-Carlo
  // spread over 10 seed pairs).
  const int M = 8;
  double ratio_sum = 0.0;
  int n = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    RunConfig multi = small_config(Algorithm::LocalOnly, M, 1024, seed);
    RunConfig single = small_config(Algorithm::LocalOnly, 1, 1024, seed);
    const double rm = run_episode(multi).cumulative_regret.back();
    const double r1 = run_episode(single).cumulative_regret.back();
    ASSERT_GT(r1, 0.0);
    ratio_sum += rm / r1;
    ++n;
  }
  const double mean_ratio = ratio_sum / n;
  EXPECT_GE(mean_ratio, 0.8 * M);
  EXPECT_LE(mean_ratio, 1.2 * M);
}

TEST(Baselines, NonPrivateAvgErrorImprovesWithMoreClients) {
  // Median final estimation error over seeds should drop when M doubles.
  auto median_final_error = [](int M) {
    std::vector<double> errs;
    for (std::uint64_t seed = 1; seed <= 7; ++seed) {
      RunConfig cfg = small_config(Algorithm::NonPrivateAvg, M, 512, seed);
      const RunResult res = run_episode(cfg);
      double last = std::numeric_limits<double>::quiet_NaN();
      for (const PhaseDiag& diag : res.phase_diag)
        if (!std::isnan(diag.global_est_error)) last = diag.global_est_error;
      errs.push_back(last);
    }
    std::sort(errs.begin(), errs.end());
    return errs[errs.size() / 2];
  };
  EXPECT_LT(median_final_error(8), median_final_error(4));
}

// ---------------------------------------------------------------------------
// Diagnostics content

TEST(Diagnostics, MinEigGrowsDuringInitAndResetsForGreedy) {
  RunConfig cfg = small_config(Algorithm::Robin, 3, 511);  // phases 0..8 complete
  const RunResult res = run_episode(cfg);
  ASSERT_EQ(res.phase_diag.size(), 9u);
  // Init phases accumulate, so min-eig is nondecreasing across phases 0..3.
  for (int p = 1; p <= 3; ++p)
    EXPECT_GE(res.phase_diag[static_cast<size_t>(p)].min_eig_per_client.minCoeff(),
              res.phase_diag[static_cast<size_t>(p - 1)].min_eig_per_client.minCoeff() -
                  1e-12);
  // Greedy phases reset per phase: min-eig is bounded by the phase length.
  for (size_t p = 4; p < res.phase_diag.size(); ++p) {
    const PhaseDiag& diag = res.phase_diag[p];
    EXPECT_LE(diag.min_eig_per_client.maxCoeff(),
              static_cast<double>(diag.len) + 1e-9);
    EXPECT_EQ(diag.min_eig_per_client.size(), 3);
  }
}

// ---------------------------------------------------------------------------
// Config validation

TEST(ConfigValidation, RejectsInconsistentConfigs) {
  RunConfig cfg = small_config(Algorithm::Robin);
  cfg.M = 5;  // instance has 4 clients
  EXPECT_TRUE(throws_code([&] { run_episode(cfg); }, "ConfigError"));

  RunConfig bad_t = small_config(Algorithm::Robin);
  bad_t.T = 1;
  EXPECT_TRUE(throws_code([&] { run_episode(bad_t); }, "ConfigError"));

  RunConfig bad_beta = small_config(Algorithm::Robin);
  bad_beta.beta = 1.0;
  EXPECT_TRUE(throws_code([&] { run_episode(bad_beta); }, "ConfigError"));

  RunConfig bad_u = small_config(Algorithm::Robin);
  bad_u.overrides.U = 20;  // P-1 = 8 for T=256
  EXPECT_TRUE(throws_code([&] { run_episode(bad_u); }, "ConfigError"));

  RunConfig bad_alpha = small_config(Algorithm::Robin);
  bad_alpha.overrides.alpha = -1.0;
  EXPECT_TRUE(throws_code([&] { run_episode(bad_alpha); }, "ConfigError"));

  RunConfig bad_priv = small_config(Algorithm::Robin);
  bad_priv.privacy.delta = 0.0;
  EXPECT_TRUE(throws_code([&] { run_episode(bad_priv); }, "OutOfDomain"));
}

TEST(ConfigValidation, DerivedUFallsBackToCapWithWarningFlag) {
  RunConfig cfg = small_config(Algorithm::Robin, 4, 256);
  cfg.overrides.U.reset();  // force derivation; desk scale diverges
  const RunResult res = run_episode(cfg);
  EXPECT_TRUE(res.U_capped);
  EXPECT_EQ(res.U_used, res.P - 1);
  EXPECT_GT(res.lambda0_used, 0.0);
}

// ---------------------------------------------------------------------------
// Sweeps

TEST(Sweep, GridIsOrderedValueMajorAndMatchesDirectRuns) {
  const RunConfig base = small_config(Algorithm::Robin, 3, 64);
  SweepSpec spec;
  spec.axis = SweepAxis::Epsilon;
  spec.values = {0.5, 1.0};
  spec.seeds = {1, 2};
  const std::vector<SweepCell> cells = sweep(base, spec, 1);
  ASSERT_EQ(cells.size(), 4u);
  EXPECT_EQ(cells[0].value, 0.5);
  EXPECT_EQ(cells[0].seed, 1u);
  EXPECT_EQ(cells[1].value, 0.5);
  EXPECT_EQ(cells[1].seed, 2u);
  EXPECT_EQ(cells[3].value, 1.0);
  EXPECT_EQ(cells[3].seed, 2u);

  const RunConfig direct_cfg = apply_sweep_value(base, spec.axis, 1.0, 2);
  const RunResult direct = run_episode(direct_cfg);
  EXPECT_EQ(cells[3].result.cumulative_regret, direct.cumulative_regret);
}

TEST(Sweep, ParallelCellsMatchSerialCells) {
  const RunConfig base = small_config(Algorithm::Robin, 3, 64);
  SweepSpec spec;
  spec.axis = SweepAxis::Epsilon;
  spec.values = {0.5, 1.0, 2.0};
  spec.seeds = {1, 2};
  const auto serial = sweep(base, spec, 1);
  const auto parallel = sweep(base, spec, 4);
  ASSERT_EQ(serial.size(), parallel.size());
  for (size_t i = 0; i < serial.size(); ++i)
    EXPECT_EQ(serial[i].result.cumulative_regret, parallel[i].result.cumulative_regret);
}

TEST(Sweep, MAxisRebuildsTheInstance) {
  const RunConfig base = small_config(Algorithm::NonPrivateAvg, 3, 64);
  SweepSpec spec;
  spec.axis = SweepAxis::M;
  spec.values = {2, 5};
  spec.seeds = {9};
  const auto cells = sweep(base, spec, 1);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].result.phase_diag.back().min_eig_per_client.size(), 2);
  EXPECT_EQ(cells[1].result.phase_diag.back().min_eig_per_client.size(), 5);
}

TEST(Sweep, ValidatesItsSpec) {
  const RunConfig base = small_config(Algorithm::Robin, 3, 64);
  SweepSpec empty;
  empty.axis = SweepAxis::Epsilon;
  EXPECT_TRUE(throws_code([&] { sweep(base, empty, 1); }, "ConfigError"));
  SweepSpec frac;
  frac.axis = SweepAxis::M;
  frac.values = {2.5};
  frac.seeds = {1};
  EXPECT_TRUE(throws_code([&] { sweep(base, frac, 1); }, "ConfigError"));
  EXPECT_TRUE(throws_code([] { resize_instance_clients(small_instance(3), 0); },
                          "ConfigError"));
}

// ---------------------------------------------------------------------------
// Serialization

TEST(Serialization, CsvHeadersAndShapeArePinned) {
  const RunConfig cfg = small_config(Algorithm::Robin, 3, 64);
  const RunResult res = run_episode(cfg);
  const std::string hash = run_config_hash(cfg);

  const std::string rounds = rounds_csv(res, hash, cfg.seed);
  std::istringstream rs(rounds);
  std::string line;
  std::getline(rs, line);
  EXPECT_EQ(line, "# config_hash=" + hash + " seed=7");
  std::getline(rs, line);
  EXPECT_EQ(line, "round,cum_regret");
  int rows = 0;
  while (std::getline(rs, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 64);

  const std::string phases = phases_csv(res, hash, cfg.seed);
  std::istringstream ps(phases);
  std::getline(ps, line);
  EXPECT_EQ(line.rfind("# config_hash=", 0), 0u);
  std::getline(ps, line);
  EXPECT_EQ(line, "phase,len,min_eig_min,min_eig_med,est_error,eps_spent,delta_spent");
  rows = 0;
  while (std::getline(ps, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, res.P);
}

TEST(Serialization, SummaryHasThePinnedKeysAndNoWallclock) {
  const RunConfig cfg = small_config(Algorithm::Robin, 3, 64);
  const RunResult res = run_episode(cfg);
  const nlohmann::json j = summary_json(cfg, res, run_config_hash(cfg));
  for (const char* key :
       {"algorithm", "kind", "M", "d", "T", "P", "U", "alpha", "beta", "epsilon",
        "delta", "seed", "config_hash", "final_cumulative_regret",
        "regret_per_log2T_slope_last4", "lambda0_achieved", "lambda0_instance",
        "C0_instance", "eps_spent", "delta_spent"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_FALSE(j.contains("wallclock_sec"));
  EXPECT_EQ(j["final_cumulative_regret"].get<double>(), res.cumulative_regret.back());
}

TEST(Serialization, ConfigHashSeparatesConfigsButIgnoresJobs) {
  RunConfig a = small_config(Algorithm::Robin, 3, 64);
  RunConfig b = a;
  EXPECT_EQ(run_config_hash(a), run_config_hash(b));
  b.jobs = 8;
  EXPECT_EQ(run_config_hash(a), run_config_hash(b));
  b.seed = 123;
  EXPECT_NE(run_config_hash(a), run_config_hash(b));
  RunConfig c = a;
  c.privacy.epsilon = 2.0;
  EXPECT_NE(run_config_hash(a), run_config_hash(c));
}
