// SPDX-License-Identifier: MIT

#include "fedban/sim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include "fedban/io.hpp"

namespace fedban {

const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Robin: return "Robin";
    case Algorithm::LocalOnly: return "LocalOnly";
    case Algorithm::NonPrivateAvg: return "NonPrivateAvg";
  }
  fail("OutOfDomain", "unknown Algorithm");
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "Robin") return Algorithm::Robin;
  if (s == "LocalOnly") return Algorithm::LocalOnly;
  if (s == "NonPrivateAvg") return Algorithm::NonPrivateAvg;
  fail("ConfigError", "unknown algorithm '" + s + "'");
}

const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::Epsilon: return "epsilon";
    case SweepAxis::M: return "M";
    case SweepAxis::T: return "T";
  }
  fail("OutOfDomain", "unknown SweepAxis");
}

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "epsilon") return SweepAxis::Epsilon;
  if (s == "M") return SweepAxis::M;
  if (s == "T") return SweepAxis::T;
  fail("ConfigError", "unknown sweep axis '" + s + "'");
}

int phases_for_horizon(std::int64_t T) {
  if (T < 1) fail("OutOfDomain", "horizon must be >= 1");
  std::int64_t covered = 0;
  int P = 0;
  while (covered < T) {
    covered += (std::int64_t{1} << P);
    ++P;
  }
  return P;
}

std::int64_t phase_start_round(int p) {
  if (p < 0) fail("OutOfDomain", "phase must be >= 0");
  return std::int64_t{1} << p;
}

RunConfig make_run_config(Instance inst, Algorithm alg, std::int64_t T,
                          PrivacyParams privacy, double beta, std::uint64_t seed) {
  RunConfig cfg;
  cfg.M = inst.num_clients;
  cfg.d = inst.d;
  cfg.instance = std::move(inst);
  cfg.algorithm = alg;
  cfg.T = T;
  cfg.privacy = privacy;
  cfg.beta = beta;
  cfg.seed = seed;
  return cfg;
}

Instance resize_instance_clients(Instance inst, int M) {
  if (M < 1) fail("ConfigError", "need at least one client");
  inst.num_clients = M;
  inst.build_rotations();
  inst.validate();
  return inst;
}

namespace {

constexpr double kLambda0Floor = 0.02;  // floor is kLambda0Floor / d

void validate_config(const RunConfig& cfg) {
  cfg.instance.validate();
  if (cfg.M != cfg.instance.num_clients)
    fail("ConfigError", "config M (" + std::to_string(cfg.M) +
                            ") does not match instance num_clients (" +
                            std::to_string(cfg.instance.num_clients) + ")");
  if (cfg.d != cfg.instance.d)
    fail("ConfigError", "config d does not match instance d");
  if (cfg.T < 2) fail("ConfigError", "T must be >= 2");
  if (!(cfg.beta > 0.0 && cfg.beta < 1.0)) fail("ConfigError", "beta must be in (0, 1)");
  if (cfg.jobs < 1) fail("ConfigError", "jobs must be >= 1");
  const int P = phases_for_horizon(cfg.T);
  if (cfg.overrides.U.has_value() && (*cfg.overrides.U < 1 || *cfg.overrides.U > P - 1))
    fail("ConfigError", "override U must lie in [1, P-1] = [1, " +
                            std::to_string(P - 1) + "]");
  if (cfg.overrides.alpha.has_value() && !(*cfg.overrides.alpha > 0.0))
    fail("ConfigError", "override alpha must be positive");
}

// Per-client execution state: learner state plus the client-owned streams.
struct ClientWork {
  RobinClientState state;
  RngStream ctx;
  RngStream rew;
  RngStream pol;
  std::vector<double> phase_regret;

  ClientWork(RobinClientState st, RngStream c, RngStream r, RngStream p)
      : state(std::move(st)), ctx(c), rew(r), pol(p) {}
};

// Runs rounds [0, len) of the current phase for clients [begin, end).
void play_phase_chunk(const RunConfig& cfg, const ReferencePolicy* policy,
                      std::vector<ClientWork>& clients, size_t begin, size_t end,
                      std::int64_t len) {
  for (size_t i = begin; i < end; ++i) {
    ClientWork& w = clients[i];
    w.phase_regret.assign(static_cast<size_t>(len), 0.0);
    for (std::int64_t t = 0; t < len; ++t) {
      const DecisionSet ds = sample_context(cfg.instance, static_cast<int>(i), w.ctx);
      const int arm = policy ? (*policy)(static_cast<int>(i), ds, w.pol)
                             : robin_client_step(w.state, ds).first;
      w.phase_regret[static_cast<size_t>(t)] = instantaneous_regret(cfg.instance, ds, arm);
      const double r = reward(cfg.instance, ds.arm(arm), w.rew).value;
      if (!policy)
        w.state.acc = linucb_update(std::move(w.state.acc), ds.arm(arm), r);
    }
  }
}

RunResult run_episode_impl(const RunConfig& cfg, const ReferencePolicy* policy) {
  validate_config(cfg);
  const auto t_start = std::chrono::steady_clock::now();
  const Instance& inst = cfg.instance;
  const int P = phases_for_horizon(cfg.T);
  const bool phased = !policy && cfg.algorithm != Algorithm::LocalOnly;

  RunResult result;
  result.P = P;

  // --- Derived parameters -------------------------------------------------
  // Diversity constant for the aggregation clamp: instance estimate, floored
  // at 0.02/d so degenerate instances (lambda0 = 0) keep c1 finite. Such
  // instances violate the diversity assumption; the learner is expected to
  // fail on them, not to crash.
  const double lambda0_eff =
      std::max(inst.meta.lambda0.value_or(0.0), kLambda0Floor / cfg.d);
  const double C0_eff = inst.meta.C0.value_or(1.0);

  int U_eff = P;  // LocalOnly / reference policies: Init mode forever
  if (phased) {
    if (cfg.overrides.U.has_value()) {
      U_eff = *cfg.overrides.U;
    } else {
      const ComputeUResult u = compute_U(cfg.d, cfg.M, P, C0_eff, lambda0_eff, cfg.beta);
      U_eff = u.U;
      result.U_capped = u.capped;
    }
  }
  const double horizon_for_alpha =
      phased ? static_cast<double>(std::int64_t{1} << U_eff)
             : static_cast<double>(cfg.T);
  const double alpha =
      cfg.overrides.alpha.value_or(compute_alpha(cfg.M, cfg.beta, horizon_for_alpha, cfg.d));
  result.U_used = phased ? U_eff : 0;
  result.alpha_used = alpha;
  result.lambda0_used = phased ? lambda0_eff : 0.0;

  std::optional<RobinServerState> server;
  if (!policy && cfg.algorithm == Algorithm::Robin)
    server = make_robin_server(cfg.d, cfg.M, P, U_eff, cfg.privacy, cfg.beta, lambda0_eff);

  // --- Streams and client states ------------------------------------------
  const RngStream root(cfg.seed);
  const RngStream server_root = root.child("server");
  std::vector<ClientWork> clients;
  clients.reserve(static_cast<size_t>(cfg.M));
  for (int i = 0; i < cfg.M; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    clients.emplace_back(make_robin_client(i, cfg.d, U_eff, alpha),
                         root.child("context", ui), root.child("reward", ui),
                         root.child("policy", ui));
  }

  // --- Phase loop -----------------------------------------------------------
  result.cumulative_regret.reserve(static_cast<size_t>(cfg.T));
  double cum = 0.0;
  int aggregations = 0;
  std::int64_t done = 0;
  for (int p = 0; done < cfg.T; ++p) {
    const std::int64_t full_len = std::int64_t{1} << p;
    const std::int64_t len = std::min(full_len, cfg.T - done);
    const bool complete = (len == full_len);

    const int jobs = std::min<int>(cfg.jobs, cfg.M);
    if (jobs <= 1) {
      play_phase_chunk(cfg, policy, clients, 0, clients.size(), len);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
      const size_t chunk = (clients.size() + static_cast<size_t>(jobs) - 1) /
                           static_cast<size_t>(jobs);
      for (int j = 0; j < jobs; ++j) {
        const size_t begin = static_cast<size_t>(j) * chunk;
        const size_t end = std::min(clients.size(), begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&, j, begin, end] {
          try {
            play_phase_chunk(cfg, policy, clients, begin, end, len);
          } catch (...) {
            errors[static_cast<size_t>(j)] = std::current_exception();
          }
        });
      }
      for (auto& th : pool) th.join();
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    }

    // Merge per-round regret in client-index order (deterministic under any
    // thread partition).
    for (std::int64_t t = 0; t < len; ++t) {
      double round_sum = 0.0;
      for (const ClientWork& w : clients) round_sum += w.phase_regret[static_cast<size_t>(t)];
      cum += round_sum;
      result.cumulative_regret.push_back(cum);
    }
    done += len;

    if (!policy) {
      PhaseDiag diag;
      diag.phase = p;
      diag.len = len;
      diag.min_eig_per_client.resize(cfg.M);
      for (int i = 0; i < cfg.M; ++i)
        diag.min_eig_per_client[i] = min_eigenvalue(clients[static_cast<size_t>(i)].state.acc.V);

      std::optional<BroadcastMsg> bc;
      if (phased && p >= U_eff && complete) {
        std::vector<UploadMsg> msgs;
        msgs.reserve(static_cast<size_t>(cfg.M));
        for (const ClientWork& w : clients) msgs.push_back(robin_local_estimate(w.state));
        result.uploads.insert(result.uploads.end(), msgs.begin(), msgs.end());
        if (cfg.algorithm == Algorithm::Robin) {
          RngStream agg_rng = server_root.child("agg", static_cast<std::uint64_t>(p));
          bc = robin_server_aggregate(*server, msgs, len, agg_rng);
          ++aggregations;
        } else {
          bc = BroadcastMsg{p + 1, nonprivate_average(msgs, cfg.M)};
        }
        result.broadcasts.push_back(*bc);
        diag.global_est_error = (bc->theta_hat - inst.theta_star).norm();
      }
      if (!policy && cfg.algorithm == Algorithm::Robin)
        diag.budget_spent = spent_budget(server->split, aggregations);
      result.phase_diag.push_back(std::move(diag));

      if (done < cfg.T) {
        for (ClientWork& w : clients)
          w.state = robin_client_advance_phase(std::move(w.state), bc);
      }
    }
  }

  if (!policy && cfg.algorithm == Algorithm::Robin)
    result.budget_spent = spent_budget(server->split, aggregations);
  result.wallclock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace

RunResult run_episode(const RunConfig& cfg) { return run_episode_impl(cfg, nullptr); }

RunResult baseline_local_only(RunConfig cfg) {
  cfg.algorithm = Algorithm::LocalOnly;
  return run_episode(cfg);
}

RunResult baseline_nonprivate_avg(RunConfig cfg) {
  cfg.algorithm = Algorithm::NonPrivateAvg;
  return run_episode(cfg);
}

RunResult run_episode_with_policy(const RunConfig& cfg, const ReferencePolicy& policy) {
  if (!policy) fail("OutOfDomain", "null reference policy");
  return run_episode_impl(cfg, &policy);
}

RunConfig apply_sweep_value(RunConfig base, SweepAxis axis, double value,
                            std::uint64_t seed) {
  base.seed = seed;
  base.jobs = 1;  // parallelism lives at the cell level
  switch (axis) {
    case SweepAxis::Epsilon:
      base.privacy.epsilon = value;
      break;
    case SweepAxis::M: {
      const int m = static_cast<int>(value);
      base.instance = resize_instance_clients(std::move(base.instance), m);
      base.M = m;
      break;
    }
    case SweepAxis::T:
      base.T = static_cast<std::int64_t>(value);
      break;
  }
  return base;
}

std::vector<SweepCell> sweep(const RunConfig& base, const SweepSpec& spec, int jobs) {
  if (spec.values.empty() || spec.seeds.empty())
    fail("ConfigError", "sweep requires nonempty values and seeds");
  for (double v : spec.values) {
    if (spec.axis == SweepAxis::Epsilon && !(v > 0.0))
      fail("ConfigError", "epsilon values must be positive");
    if ((spec.axis == SweepAxis::M || spec.axis == SweepAxis::T) &&
        (v < 1.0 || v != std::floor(v)))
      fail("ConfigError", "M/T sweep values must be positive integers");
  }

  std::vector<SweepCell> cells;
  cells.reserve(spec.values.size() * spec.seeds.size());
  for (double v : spec.values)
    for (std::uint64_t s : spec.seeds) cells.push_back(SweepCell{v, s, {}});

  const auto run_cell = [&](SweepCell& cell) {
    cell.result = run_episode(apply_sweep_value(base, spec.axis, cell.value, cell.seed));
  };

  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
  if (workers == 1) {
    for (SweepCell& cell : cells) run_cell(cell);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    for (int j = 0; j < workers; ++j) {
      pool.emplace_back([&, j] {
        try {
          for (;;) {
            const size_t k = next.fetch_add(1);
            if (k >= cells.size()) return;
            run_cell(cells[k]);
          }
        } catch (...) {
          errors[static_cast<size_t>(j)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return cells;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json overrides = nlohmann::json::object();
  if (cfg.overrides.U) overrides["U"] = *cfg.overrides.U;
  if (cfg.overrides.alpha) overrides["alpha"] = *cfg.overrides.alpha;
  // jobs is an execution detail with no effect on results; excluded so the
  // hash identifies the experiment, not the machine.
  return nlohmann::json{{"algorithm", to_string(cfg.algorithm)},
                        {"M", cfg.M},
                        {"d", cfg.d},
                        {"T", cfg.T},
                        {"privacy",
                         {{"epsilon", cfg.privacy.epsilon}, {"delta", cfg.privacy.delta}}},
                        {"beta", cfg.beta},
                        {"seed", cfg.seed},
                        {"overrides", overrides},
                        {"instance", instance_to_json(cfg.instance)}};
}

std::string run_config_hash(const RunConfig& cfg) {
  return fnv1a_hex(run_config_to_json(cfg).dump());
}

std::string rounds_csv(const RunResult& result, const std::string& config_hash,
                       std::uint64_t seed) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  out << "round,cum_regret\n";
  for (size_t t = 0; t < result.cumulative_regret.size(); ++t)
    out << (t + 1) << "," << format_double(result.cumulative_regret[t]) << "\n";
  return out.str();
}

std::string phases_csv(const RunResult& result, const std::string& config_hash,
                       std::uint64_t seed) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  out << "phase,len,min_eig_min,min_eig_med,est_error,eps_spent,delta_spent\n";
  for (const PhaseDiag& diag : result.phase_diag) {
    std::vector<double> eigs(diag.min_eig_per_client.begin(),
                             diag.min_eig_per_client.end());
    std::sort(eigs.begin(), eigs.end());
    const size_t n = eigs.size();
    const double med =
        (n % 2 == 1) ? eigs[n / 2] : 0.5 * (eigs[n / 2 - 1] + eigs[n / 2]);
    out << diag.phase << "," << diag.len << "," << format_double(eigs.front()) << ","
        << format_double(med) << "," << format_double(diag.global_est_error) << ","
        << format_double(diag.budget_spent.epsilon) << ","
        << format_double(diag.budget_spent.delta) << "\n";
  }
  return out.str();
}

namespace {

// Least-squares slope of cumulative regret against log2(t) over the last
// (up to) four phase-end points; NaN with fewer than two points.
double regret_slope_last4(const RunResult& result) {
  std::vector<double> xs, ys;
  std::int64_t end = 0;
  for (const PhaseDiag& diag : result.phase_diag) {
    end += diag.len;
    xs.push_back(std::log2(static_cast<double>(end)));
    ys.push_back(result.cumulative_regret[static_cast<size_t>(end - 1)]);
  }
  const size_t take = std::min<size_t>(4, xs.size());
  if (take < 2) return std::numeric_limits<double>::quiet_NaN();
  const size_t from = xs.size() - take;
  double mx = 0.0, my = 0.0;
  for (size_t i = from; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(take);
  my /= static_cast<double>(take);
  double num = 0.0, den = 0.0;
  for (size_t i = from; i < xs.size(); ++i) {
    num += (xs[i] - mx) * (ys[i] - my);
    den += (xs[i] - mx) * (xs[i] - mx);
  }
  return (den > 0.0) ? num / den : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

nlohmann::json summary_json(const RunConfig& cfg, const RunResult& result,
                            const std::string& config_hash) {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["seed"] = cfg.seed;
  j["algorithm"] = to_string(cfg.algorithm);
  j["kind"] = to_string(cfg.instance.kind);
  j["M"] = cfg.M;
  j["d"] = cfg.d;
  j["T"] = cfg.T;
  j["P"] = result.P;
  j["U"] = result.U_used;
  j["alpha"] = result.alpha_used;
  j["beta"] = cfg.beta;
  j["epsilon"] = cfg.privacy.epsilon;
  j["delta"] = cfg.privacy.delta;
  j["final_cumulative_regret"] = result.cumulative_regret.back();
  const double slope = regret_slope_last4(result);
  j["regret_per_log2T_slope_last4"] =
      std::isnan(slope) ? nlohmann::json(nullptr) : nlohmann::json(slope);

  // Achieved diversity: min over Greedy-phase cells of lambda_min / |T_p|.
  double achieved = std::numeric_limits<double>::infinity();
  for (const PhaseDiag& diag : result.phase_diag) {
    if (cfg.algorithm == Algorithm::LocalOnly || diag.phase <= result.U_used) continue;
    achieved = std::min(achieved, diag.min_eig_per_client.minCoeff() /
                                      static_cast<double>(diag.len));
  }
  j["lambda0_achieved"] = std::isfinite(achieved) ? nlohmann::json(achieved)
                                                  : nlohmann::json(nullptr);
  j["lambda0_instance"] = cfg.instance.meta.lambda0
                              ? nlohmann::json(*cfg.instance.meta.lambda0)
                              : nlohmann::json(nullptr);
  j["C0_instance"] = cfg.instance.meta.C0 ? nlohmann::json(*cfg.instance.meta.C0)
                                          : nlohmann::json(nullptr);
  j["eps_spent"] = result.budget_spent.epsilon;
  j["delta_spent"] = result.budget_spent.delta;
  return j;
}

}  // namespace fedban
