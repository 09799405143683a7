// SPDX-License-Identifier: MIT
//
// fedban — federated-bandit experiment runner.
//
// Subcommands:
//   run            execute one episode from a JSON config
//   sweep          execute a value x seed grid from a JSON config
//   check-instance estimate an instance's diversity/margin constants
//   dp-audit       empirical DP test of the private mean mechanism
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error,
// 4 audit/check failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fedban/dp.hpp"
#include "fedban/env.hpp"
#include "fedban/io.hpp"
#include "fedban/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitCheckFail = 4;

/// Eigenvalue estimates this small count as "no diversity" (rank-deficient
/// Gram matrices come out as ~1e-17 rather than exact zeros).
constexpr double kEigPassThreshold = 1e-9;

constexpr double kDefaultMarginGrid[] = {0.01, 0.02, 0.05, 0.1, 0.2};

int classify_exit(const std::exception& e) {
  return std::string_view(e.what()).substr(0, 11) == "ConfigError" ? kExitConfig
                                                                   : kExitRuntime;
}

[[noreturn]] void config_fail(const std::string& what) {
  fedban::fail("ConfigError", what);
}

/// Parsed experiment file: the run config plus the file-level extras.
struct ExperimentFile {
  fedban::RunConfig cfg;
  std::optional<std::string> out;      // config-declared output directory
  std::optional<fedban::SweepSpec> sweep;
};

fedban::SweepSpec parse_sweep_spec(const json& j) {
  fedban::require_keys(j, {"axis", "values", "seeds"}, {"axis", "values", "seeds"},
                       "config.sweep");
  fedban::SweepSpec spec;
  spec.axis = fedban::sweep_axis_from_string(j.at("axis").get<std::string>());
  for (const json& v : j.at("values")) {
    if (!v.is_number()) config_fail("sweep values must be numbers");
    spec.values.push_back(v.get<double>());
  }
  for (const json& s : j.at("seeds")) {
    if (!s.is_number_integer() || s.get<std::int64_t>() < 0)
      config_fail("sweep seeds must be nonnegative integers");
    spec.seeds.push_back(s.get<std::uint64_t>());
  }
  return spec;
}

ExperimentFile parse_experiment_file(const std::string& path) {
  json doc = fedban::load_json_file(path);
  fedban::require_keys(doc,
                       {"algorithm", "instance", "instance_file", "T", "privacy",
                        "beta", "seed", "out", "overrides", "sweep"},
                       {"algorithm", "T", "seed"}, "config");

  ExperimentFile exp;
  try {
    exp.cfg.algorithm = fedban::algorithm_from_string(doc.at("algorithm").get<std::string>());

    const bool inline_inst = doc.contains("instance");
    const bool file_inst = doc.contains("instance_file");
    if (inline_inst == file_inst)
      config_fail("config must contain exactly one of 'instance' and 'instance_file'");
    if (inline_inst) {
      exp.cfg.instance = fedban::instance_from_json(doc.at("instance"));
    } else {
      // Relative instance paths resolve against the config file's directory.
      const fs::path ref = doc.at("instance_file").get<std::string>();
      const fs::path resolved =
          ref.is_absolute() ? ref : fs::path(path).parent_path() / ref;
      exp.cfg.instance = fedban::load_instance(resolved.string());
    }
    exp.cfg.M = exp.cfg.instance.num_clients;
    exp.cfg.d = exp.cfg.instance.d;

    if (!doc.at("T").is_number_integer()) config_fail("T must be an integer");
    exp.cfg.T = doc.at("T").get<std::int64_t>();

    if (!doc.at("seed").is_number_integer() || doc.at("seed").get<std::int64_t>() < 0)
      config_fail("seed must be a nonnegative integer");
    exp.cfg.seed = doc.at("seed").get<std::uint64_t>();

    if (doc.contains("privacy")) {
      const json& p = doc.at("privacy");
      fedban::require_keys(p, {"epsilon", "delta"}, {"epsilon", "delta"},
                           "config.privacy");
      exp.cfg.privacy.epsilon = p.at("epsilon").get<double>();
      exp.cfg.privacy.delta = p.at("delta").get<double>();
    } else if (exp.cfg.algorithm == fedban::Algorithm::Robin) {
      config_fail("algorithm Robin requires a 'privacy' block");
    }

    if (doc.contains("beta")) exp.cfg.beta = doc.at("beta").get<double>();

    if (doc.contains("overrides")) {
      const json& o = doc.at("overrides");
      fedban::require_keys(o, {"U", "alpha"}, {}, "config.overrides");
      if (o.contains("U")) exp.cfg.overrides.U = o.at("U").get<int>();
      if (o.contains("alpha")) exp.cfg.overrides.alpha = o.at("alpha").get<double>();
    }

    if (doc.contains("out")) exp.out = doc.at("out").get<std::string>();
    if (doc.contains("sweep")) exp.sweep = parse_sweep_spec(doc.at("sweep"));
  } catch (const json::exception& e) {
    config_fail(std::string("malformed config value: ") + e.what());
  }
  return exp;
}

/// Validity-regime advisory (warn, never error): the regret bound needs eps
/// at least on the order of sqrt(d) (log2 T)^1.5 / M.
void warn_if_small_epsilon(const fedban::RunConfig& cfg) {
  if (cfg.algorithm != fedban::Algorithm::Robin) return;
  const double floor = std::sqrt(static_cast<double>(cfg.d)) *
                       std::pow(std::log2(static_cast<double>(cfg.T)), 1.5) /
                       static_cast<double>(cfg.M);
  if (cfg.privacy.epsilon < floor) {
    std::cerr << "warning: epsilon " << fedban::format_double(cfg.privacy.epsilon)
              << " is below the theory validity regime sqrt(d)*(log2 T)^1.5/M = "
              << fedban::format_double(floor)
              << "; the private estimate may be noise-dominated\n";
  }
}

std::string resolve_out_dir(const std::optional<std::string>& flag,
                            const std::optional<std::string>& from_config) {
  if (flag) return *flag;
  if (from_config) return *from_config;
  config_fail("no output directory: pass --out or set 'out' in the config");
}

void write_run_outputs(const fs::path& dir, const fedban::RunConfig& cfg,
                       const fedban::RunResult& result) {
  const std::string hash = fedban::run_config_hash(cfg);
  fs::create_directories(dir);
  fedban::write_text_file((dir / "rounds.csv").string(),
                          fedban::rounds_csv(result, hash, cfg.seed));
  fedban::write_text_file((dir / "phases.csv").string(),
                          fedban::phases_csv(result, hash, cfg.seed));
  fedban::write_text_file((dir / "summary.json").string(),
                          fedban::summary_json(cfg, result, hash).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// run

int cmd_run(const std::string& config_path, const std::optional<std::string>& out_flag,
            const std::optional<std::uint64_t>& seed_flag, int jobs) {
  ExperimentFile exp = parse_experiment_file(config_path);
  if (exp.sweep)
    config_fail("config contains a 'sweep' block; use the sweep subcommand");
  if (seed_flag) exp.cfg.seed = *seed_flag;
  exp.cfg.jobs = jobs;
  const std::string out = resolve_out_dir(out_flag, exp.out);

  warn_if_small_epsilon(exp.cfg);
  const fedban::RunResult result = fedban::run_episode(exp.cfg);
  write_run_outputs(out, exp.cfg, result);
  std::cout << "run complete: algorithm=" << fedban::to_string(exp.cfg.algorithm)
            << " T=" << exp.cfg.T << " final_regret="
            << fedban::format_double(result.cumulative_regret.back())
            << " eps_spent=" << fedban::format_double(result.budget_spent.epsilon)
            << " out=" << out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

std::string cell_dir_name(fedban::SweepAxis axis, double value, std::uint64_t seed) {
  std::ostringstream name;
  name << fedban::to_string(axis) << "_" << fedban::format_double(value) << "_seed"
       << seed;
  return name.str();
}

int cmd_sweep(const std::string& config_path, const std::optional<std::string>& out_flag,
              const std::optional<std::uint64_t>& seed_flag, int jobs) {
  ExperimentFile exp = parse_experiment_file(config_path);
  if (!exp.sweep) config_fail("sweep subcommand requires a 'sweep' block in the config");
  if (seed_flag)
    config_fail("sweep seeds come from the config's sweep.seeds list, not --seed");
  const std::string out = resolve_out_dir(out_flag, exp.out);

  warn_if_small_epsilon(exp.cfg);
  const std::vector<fedban::SweepCell> cells = fedban::sweep(exp.cfg, *exp.sweep, jobs);

  const std::string base_hash = fedban::run_config_hash(exp.cfg);
  std::ostringstream agg;
  agg << "# config_hash=" << base_hash << " seed=" << exp.cfg.seed << "\n";
  agg << "axis,value,seed,final_cum_regret,eps_spent,delta_spent,cell_dir\n";
  for (const fedban::SweepCell& cell : cells) {
    const fedban::RunConfig cell_cfg =
        fedban::apply_sweep_value(exp.cfg, exp.sweep->axis, cell.value, cell.seed);
    const std::string sub = cell_dir_name(exp.sweep->axis, cell.value, cell.seed);
    write_run_outputs(fs::path(out) / sub, cell_cfg, cell.result);
    agg << fedban::to_string(exp.sweep->axis) << "," << fedban::format_double(cell.value)
        << "," << cell.seed << ","
        << fedban::format_double(cell.result.cumulative_regret.back()) << ","
        << fedban::format_double(cell.result.budget_spent.epsilon) << ","
        << fedban::format_double(cell.result.budget_spent.delta) << "," << sub << "\n";
  }
  fs::create_directories(out);
  fedban::write_text_file((fs::path(out) / "sweep.csv").string(), agg.str());
  std::cout << "sweep complete: " << cells.size() << " cells, out=" << out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// check-instance

struct EstimateWithBand {
  double value = 0.0;
  std::optional<double> half_width;  // 2 * SE over batches; absent if n too small
};

std::string band_to_string(const EstimateWithBand& e) {
  if (!e.half_width) return "band n/a (too few samples)";
  return "band [" + fedban::format_double(e.value - *e.half_width) + ", " +
         fedban::format_double(e.value + *e.half_width) + "]";
}

double batch_stddev(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size() - 1);
  return std::sqrt(var);
}

int cmd_check_instance(const std::string& instance_path, int samples,
                       std::uint64_t seed) {
  if (samples < 1000) config_fail("--samples must be >= 1000");
  const fedban::Instance inst = fedban::load_instance(instance_path);
  const fedban::RngStream root(seed);
  const int n_clients = std::min(inst.num_clients, 8);
  constexpr int kBatches = 8;

  // Point estimates: min over sampled clients for lambda0, max for C0.
  double lam = std::numeric_limits<double>::infinity();
  double c0 = 0.0;
  int lam_client = 0, c0_client = 0;
  for (int c = 0; c < n_clients; ++c) {
    fedban::RngStream eig_rng = root.child("eig", static_cast<std::uint64_t>(c));
    const double e = fedban::estimate_min_eig_optimal(inst, c, samples, eig_rng);
    if (e < lam) {
      lam = e;
      lam_client = c;
    }
    fedban::RngStream mar_rng = root.child("margin", static_cast<std::uint64_t>(c));
    const double m = fedban::estimate_margin_constant(inst, c, kDefaultMarginGrid,
                                                      samples, mar_rng);
    if (m > c0) {
      c0 = m;
      c0_client = c;
    }
  }

  // Confidence bands: +-2 standard errors over independent batches on the
  // extremal client.
  EstimateWithBand lam_est{lam, std::nullopt}, c0_est{c0, std::nullopt};
  const int batch_n = samples / kBatches;
  if (batch_n >= 1000) {
    std::vector<double> lam_b, c0_b;
    for (int k = 0; k < kBatches; ++k) {
      fedban::RngStream be = root.child("eig-batch", static_cast<std::uint64_t>(k));
      lam_b.push_back(fedban::estimate_min_eig_optimal(inst, lam_client, batch_n, be));
      fedban::RngStream bm = root.child("margin-batch", static_cast<std::uint64_t>(k));
      c0_b.push_back(
          fedban::estimate_margin_constant(inst, c0_client, kDefaultMarginGrid, batch_n, bm));
    }
    lam_est.half_width = 2.0 * batch_stddev(lam_b) / std::sqrt(double(kBatches));
    c0_est.half_width = 2.0 * batch_stddev(c0_b) / std::sqrt(double(kBatches));
  }

  const bool pass = lam > kEigPassThreshold;
  std::cout << "instance: kind=" << fedban::to_string(inst.kind) << " d=" << inst.d
            << " K=" << inst.num_arms << " M=" << inst.num_clients << "\n";
  std::cout << "clients sampled: " << n_clients << " of " << inst.num_clients << ", "
            << samples << " contexts each\n";
  std::cout << "lambda0 estimate (min over clients, client " << lam_client
            << "): " << fedban::format_double(lam) << "  " << band_to_string(lam_est)
            << "\n";
  std::cout << "C0 estimate (max over clients, client " << c0_client
            << "): " << fedban::format_double(c0) << "  " << band_to_string(c0_est)
            << "\n";
  std::cout << "check: " << (pass ? "PASS" : "FAIL") << " (require lambda0 > "
            << fedban::format_double(kEigPassThreshold) << ")\n";
  return pass ? kExitOk : kExitCheckFail;
}

// ---------------------------------------------------------------------------
// dp-audit

int cmd_dp_audit(const std::string& mech, double eps, int samples, std::uint64_t seed) {
  if (!(eps > 0.0) || !std::isfinite(eps)) config_fail("epsilon must be positive");
  if (samples < 1000) config_fail("--samples must be >= 1000");
  constexpr int kBins = 20;
  fedban::RngStream rng = fedban::RngStream(seed).child("audit");

  fedban::DpAuditResult res;
  if (mech == "winsorized_mean_1d") {
    res = fedban::audit_winsorized_mean_1d(eps, samples, kBins, rng);
  } else if (mech == "exact_mean") {
    res = fedban::audit_exact_mean(eps, samples, kBins, rng);
  } else {
    config_fail("unknown mechanism '" + mech +
                "' (expected winsorized_mean_1d or exact_mean)");
  }

  std::cout << "mechanism: " << mech << "\n";
  std::cout << "epsilon: " << fedban::format_double(eps) << ", samples per side: "
            << samples << ", bins: " << res.bins << "\n";
  std::cout << "max |log-ratio| over bins: " << fedban::format_double(res.max_log_ratio)
            << "\n";
  std::cout << "max excess over eps + slack: " << fedban::format_double(res.max_excess)
            << "\n";
  std::cout << "audit: " << (res.pass ? "PASS" : "FAIL") << "\n";
  return res.pass ? kExitOk : kExitCheckFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedban: federated linear contextual bandits under user-level DP"};
  app.require_subcommand(1);

  std::string config_path, instance_path, mech;
  std::optional<std::string> out_flag;
  std::optional<std::uint64_t> seed_flag;
  std::uint64_t tool_seed = 0;
  int jobs_run = 1;
  int jobs_sweep = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  int samples_check = 20000;
  int samples_audit = 1000000;
  double audit_eps = 1.0;

  CLI::App* run = app.add_subcommand("run", "Execute one episode from a JSON config");
  run->add_option("--config", config_path, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--out", out_flag, "Output directory (overrides config 'out')");
  run->add_option("--seed", seed_flag, "Override the config seed");
  run->add_option("--jobs", jobs_run, "Worker threads for per-client play")
      ->check(CLI::PositiveNumber);

  CLI::App* sw = app.add_subcommand("sweep", "Execute a value x seed grid");
  sw->add_option("--config", config_path, "Experiment config with a 'sweep' block")
      ->required()
      ->check(CLI::ExistingFile);
  sw->add_option("--out", out_flag, "Output directory (overrides config 'out')");
  sw->add_option("--jobs", jobs_sweep, "Worker threads across sweep cells")
      ->check(CLI::PositiveNumber);

  CLI::App* chk =
      app.add_subcommand("check-instance", "Estimate diversity/margin constants");
  chk->add_option("instance", instance_path, "Instance file (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  chk->add_option("--samples", samples_check, "Context draws per client")
      ->check(CLI::PositiveNumber);
  chk->add_option("--seed", tool_seed, "Estimator RNG seed");

  CLI::App* audit = app.add_subcommand("dp-audit", "Empirical DP ratio test");
  audit->add_option("mech", mech, "Mechanism: winsorized_mean_1d | exact_mean")
      ->required();
  audit->add_option("epsilon", audit_eps, "Privacy parameter to audit at")->required();
  audit->add_option("--samples", samples_audit, "Mechanism draws per dataset")
      ->check(CLI::PositiveNumber);
  audit->add_option("--seed", tool_seed, "Audit RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, out_flag, seed_flag, jobs_run);
    if (sw->parsed()) return cmd_sweep(config_path, out_flag, seed_flag, jobs_sweep);
    if (chk->parsed()) return cmd_check_instance(instance_path, samples_check, tool_seed);
    if (audit->parsed()) return cmd_dp_audit(mech, audit_eps, samples_audit, tool_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify_exit(e);
  }
  return kExitConfig;
}
