// SPDX-License-Identifier: MIT

#include "fedban/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fedban/io.hpp"

namespace fedban {

namespace {

constexpr double kNormSlack = 1e-9;

// Default estimation budgets for generator metadata.
constexpr int kEigSamples = 4000;
constexpr int kMarginSamples = 20000;
constexpr int kMaxSampledClients = 8;
constexpr int kMaxRotationAttempts = 50;
const std::vector<double> kDefaultMarginGrid = {0.01, 0.02, 0.05, 0.1, 0.2};

// Haar-distributed rotation from a seeded stream: QR of a gaussian matrix
// with the sign convention R_jj >= 0 (otherwise Q is not uniform).
Eigen::MatrixXd haar_rotation(int d, RngStream rng) {
  Eigen::MatrixXd G(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) G(i, j) = rng.gaussian();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ();
  const Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j)
    if (R(j, j) < 0.0) Q.col(j) *= -1.0;
  return Q;
}

VecD embed_block(int d, int block, const Eigen::Vector2d& z) {
  VecD x = VecD::Zero(d);
  x[2 * block] = z[0];
  x[2 * block + 1] = z[1];
  return x;
}

void require_client(const Instance& inst, int client) {
  if (client < 0 || client >= inst.num_clients)
    fail("OutOfDomain", "client index " + std::to_string(client) + " outside [0, " +
                            std::to_string(inst.num_clients) + ")");
}

}  // namespace

const char* to_string(InstanceKind kind) {
  switch (kind) {
    case InstanceKind::DiverseMargin: return "DiverseMargin";
    case InstanceKind::SphereHard: return "SphereHard";
    case InstanceKind::AxisNecessity: return "AxisNecessity";
  }
  fail("OutOfDomain", "unknown InstanceKind");
}

InstanceKind instance_kind_from_string(const std::string& s) {
  if (s == "DiverseMargin") return InstanceKind::DiverseMargin;
  if (s == "SphereHard") return InstanceKind::SphereHard;
  if (s == "AxisNecessity") return InstanceKind::AxisNecessity;
  fail("ConfigError", "unknown instance kind '" + s + "'");
}

void Instance::build_rotations() {
  rotations.clear();
  if (kind != InstanceKind::DiverseMargin) return;
  rotations.reserve(static_cast<size_t>(num_clients));
  if (!meta.rotation_seed.has_value()) {
    for (int i = 0; i < num_clients; ++i)
      rotations.emplace_back(Eigen::MatrixXd::Identity(d, d));
    return;
  }
  const RngStream root(*meta.rotation_seed);
  for (int i = 0; i < num_clients; ++i)
    rotations.emplace_back(haar_rotation(d, root.child("rotation", static_cast<std::uint64_t>(i))));
}

void Instance::validate() const {
  if (d < 1) fail("ConfigError", "instance d must be >= 1");
  if (num_arms < 1) fail("ConfigError", "instance num_arms must be >= 1");
  if (num_clients < 1) fail("ConfigError", "instance num_clients must be >= 1");
  if (theta_star.size() != d) fail("ConfigError", "theta_star dimension mismatch");
  if (!theta_star.allFinite()) fail("NonFiniteInput", "theta_star has non-finite entries");
  if (theta_star.norm() > 1.0 + kNormSlack)
    fail("ConfigError", "||theta_star|| must be <= 1");
  if (kind == InstanceKind::SphereHard) {
    if (d % 2 != 0) fail("ConfigError", "SphereHard requires even d");
    if (!meta.sphere_radius.has_value())
      fail("ConfigError", "SphereHard requires meta.sphere_radius");
    const double r = *meta.sphere_radius;
    if (!(r > 0.0) || r > 1.0 / std::sqrt(static_cast<double>(d)) + kNormSlack)
      fail("ConfigError", "SphereHard radius must satisfy 0 < r <= 1/sqrt(d)");
    for (int b = 0; b < d / 2; ++b) {
      const double bn = theta_star.segment<2>(2 * b).norm();
      if (std::abs(bn - r) > 1e-9)
        fail("ConfigError", "SphereHard theta_star block norm must equal r");
    }
    if (num_arms != 2) fail("ConfigError", "SphereHard has exactly 2 arms");
  }
  if (kind == InstanceKind::AxisNecessity) {
    if (d != 2 || num_arms != 2)
      fail("ConfigError", "AxisNecessity requires d = 2 and 2 arms");
  }
  if (kind == InstanceKind::DiverseMargin &&
      rotations.size() != static_cast<size_t>(num_clients))
    fail("ConfigError", "DiverseMargin rotations not built (call build_rotations)");
}

DecisionSet sample_context(const Instance& inst, int client, RngStream& rng) {
  require_client(inst, client);
  DecisionSet ds;
  switch (inst.kind) {
    case InstanceKind::DiverseMargin: {
      const Eigen::MatrixXd& Q = inst.rotations[static_cast<size_t>(client)];
      ds.arms.reserve(static_cast<size_t>(inst.num_arms));
      for (int a = 0; a < inst.num_arms; ++a)
        ds.arms.emplace_back(Q * sample_uniform_ball(rng, inst.d, 1.0));
      break;
    }
    case InstanceKind::SphereHard: {
      const int block = static_cast<int>(rng.uniform_int(inst.d / 2));
      const Eigen::VectorXd z = sample_truncated_gaussian_ball(rng, 2, 1.0);
      ds.arms.emplace_back(embed_block(inst.d, block, z.head<2>()));
      ds.arms.emplace_back(VecD::Zero(inst.d));
      break;
    }
    case InstanceKind::AxisNecessity: {
      VecD plus = VecD::Zero(2), minus = VecD::Zero(2);
      const int axis = (client == 0) ? 0 : 1;
      plus[axis] = 0.5;
      minus[axis] = -0.5;
      ds.arms.emplace_back(plus);
      ds.arms.emplace_back(minus);
      break;
    }
  }
  return ds;
}

RewardSample reward(const Instance& inst, const VecD& x, RngStream& rng) {
  if (x.size() != inst.d) fail("BadDimension", "reward feature dimension mismatch");
  if (x.norm() > 1.0 + kNormSlack) fail("OutOfDomain", "reward requires ||x|| <= 1");
  return RewardSample{x.dot(inst.theta_star) + rng.gaussian()};
}

int optimal_arm(const Instance& inst, const DecisionSet& ds) {
  if (ds.num_arms() < 1) fail("OutOfDomain", "empty decision set");
  int best = 0;
  double best_mean = ds.arm(0).dot(inst.theta_star);
  for (int a = 1; a < ds.num_arms(); ++a) {
    const double m = ds.arm(a).dot(inst.theta_star);
    if (m > best_mean) {
      best = a;
      best_mean = m;
    }
  }
  return best;
}

double instantaneous_regret(const Instance& inst, const DecisionSet& ds, int chosen) {
  if (chosen < 0 || chosen >= ds.num_arms())
    fail("OutOfDomain", "chosen arm index out of range");
  const int best = optimal_arm(inst, ds);
  return ds.arm(best).dot(inst.theta_star) - ds.arm(chosen).dot(inst.theta_star);
}

double estimate_min_eig_optimal(const Instance& inst, int client, int n_samples,
                                RngStream& rng) {
  require_client(inst, client);
  if (n_samples < 1000) fail("OutOfDomain", "estimate_min_eig_optimal requires n >= 1000");
  SymMatD V = SymMatD::Zero(inst.d, inst.d);
  for (int n = 0; n < n_samples; ++n) {
    const DecisionSet ds = sample_context(inst, client, rng);
    const VecD& x = ds.arm(optimal_arm(inst, ds));
    V.noalias() += x * x.transpose();
  }
  V /= static_cast<double>(n_samples);
  return min_eigenvalue(V);
}

double estimate_margin_constant(const Instance& inst, int client,
                                std::span<const double> eps_grid, int n_samples,
                                RngStream& rng) {
  require_client(inst, client);
  if (eps_grid.empty()) fail("OutOfDomain", "estimate_margin_constant requires a grid");
  for (size_t i = 0; i < eps_grid.size(); ++i) {
    if (!(eps_grid[i] > 0.0)) fail("OutOfDomain", "margin grid must be positive");
    if (i > 0 && eps_grid[i] < eps_grid[i - 1])
      fail("OutOfDomain", "margin grid must be sorted ascending");
  }
  if (n_samples < 1000) fail("OutOfDomain", "estimate_margin_constant requires n >= 1000");
  if (inst.num_arms < 2) fail("OutOfDomain", "margin needs at least two arms");

  std::vector<std::int64_t> below(eps_grid.size(), 0);
  for (int n = 0; n < n_samples; ++n) {
    const DecisionSet ds = sample_context(inst, client, rng);
    const int best = optimal_arm(inst, ds);
    const double best_mean = ds.arm(best).dot(inst.theta_star);
    double min_gap = std::numeric_limits<double>::infinity();
    for (int a = 0; a < ds.num_arms(); ++a) {
      if (a == best) continue;
      min_gap = std::min(min_gap, best_mean - ds.arm(a).dot(inst.theta_star));
    }
    for (size_t g = 0; g < eps_grid.size(); ++g)
      if (min_gap <= eps_grid[g]) ++below[g];
  }
  double c0 = 0.0;
  for (size_t g = 0; g < eps_grid.size(); ++g) {
    const double p = static_cast<double>(below[g]) / n_samples;
    c0 = std::max(c0, p / eps_grid[g]);
  }
  return c0;
}

namespace {

// Shared generator metadata estimation: lambda0 = min over sampled clients,
// C0 = max over sampled clients.
void estimate_meta(Instance& inst, RngStream& rng) {
  const int n_clients = std::min(inst.num_clients, kMaxSampledClients);
  double lam = std::numeric_limits<double>::infinity();
  double c0 = 0.0;
  for (int c = 0; c < n_clients; ++c) {
    RngStream er = rng.child("meta-eig", static_cast<std::uint64_t>(c));
    lam = std::min(lam, estimate_min_eig_optimal(inst, c, kEigSamples, er));
    RngStream mr = rng.child("meta-margin", static_cast<std::uint64_t>(c));
    c0 = std::max(c0, estimate_margin_constant(inst, c, kDefaultMarginGrid,
                                               kMarginSamples, mr));
  }
  inst.meta.lambda0 = lam;
  inst.meta.C0 = c0;
}

}  // namespace

Instance make_sphere_hard_instance(int d, int M, double r, RngStream& rng) {
  if (d < 2 || d % 2 != 0) fail("ConfigError", "SphereHard requires even d >= 2");
  if (M < 1) fail("ConfigError", "need at least one client");
  if (!(r > 0.0) || r > 1.0 / std::sqrt(static_cast<double>(d)))
    fail("ConfigError", "SphereHard radius must satisfy 0 < r <= 1/sqrt(d)");
  Instance inst;
  inst.d = d;
  inst.num_arms = 2;
  inst.num_clients = M;
  inst.kind = InstanceKind::SphereHard;
  inst.meta.sphere_radius = r;
  inst.theta_star = VecD::Zero(d);
  RngStream tr = rng.child("theta");
  for (int b = 0; b < d / 2; ++b)
    inst.theta_star.segment<2>(2 * b) = sample_uniform_sphere(tr, 2, r);
  RngStream er = rng.child("estimate");
  estimate_meta(inst, er);
  inst.validate();
  return inst;
}

Instance make_diverse_margin_instance(int d, int K, int M, double gap_floor,
                                      RngStream& rng) {
  if (d < 1) fail("ConfigError", "need d >= 1");
  if (K < 2) fail("ConfigError", "DiverseMargin requires K >= 2 arms");
  if (M < 1) fail("ConfigError", "need at least one client");
  if (!(gap_floor > 0.0)) fail("OutOfDomain", "gap_floor must be positive");

  Instance inst;
  inst.d = d;
  inst.num_arms = K;
  inst.num_clients = M;
  inst.kind = InstanceKind::DiverseMargin;
  RngStream tr = rng.child("theta");
  inst.theta_star = sample_uniform_sphere(tr, d, 1.0);

  // Retry context-law rotations until the diversity estimate clears the
  // floor. (The uniform-ball law is isotropic, so retries only move the
  // Monte-Carlo estimate; the floor is a guardrail, not a search.)
  for (int attempt = 0; attempt < kMaxRotationAttempts; ++attempt) {
    inst.meta.rotation_seed = rng.raw();
    inst.build_rotations();
    const int n_clients = std::min(M, kMaxSampledClients);
    double lam = std::numeric_limits<double>::infinity();
    for (int c = 0; c < n_clients; ++c) {
      RngStream er = rng.child("eig", static_cast<std::uint64_t>(attempt) * 1000 +
                                          static_cast<std::uint64_t>(c));
      lam = std::min(lam, estimate_min_eig_optimal(inst, c, kEigSamples, er));
    }
    if (lam >= gap_floor) {
      inst.meta.lambda0 = lam;
      double c0 = 0.0;
      for (int c = 0; c < n_clients; ++c) {
        RngStream mr = rng.child("margin", static_cast<std::uint64_t>(c));
        c0 = std::max(c0, estimate_margin_constant(inst, c, kDefaultMarginGrid,
                                                   kMarginSamples, mr));
      }
      inst.meta.C0 = c0;
      inst.validate();
      return inst;
    }
  }
  fail("OutOfDomain", "could not reach the requested diversity floor after " +
                          std::to_string(kMaxRotationAttempts) + " rotation retries");
}

Instance make_axis_instance(int M) {
  if (M < 1) fail("ConfigError", "need at least one client");
  Instance inst;
  inst.d = 2;
  inst.num_arms = 2;
  inst.num_clients = M;
  inst.kind = InstanceKind::AxisNecessity;
  inst.theta_star = VecD(2);
  inst.theta_star << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  inst.meta.lambda0 = 0.0;  // rank-1 per-client optimal Gram by construction
  inst.meta.C0 = 1.0;       // hard gap 1/sqrt(2); P[gap <= eps]/eps <= sqrt(2)
  return inst;
}

nlohmann::json instance_to_json(const Instance& inst) {
  nlohmann::json meta = nlohmann::json::object();
  if (inst.meta.lambda0) meta["lambda0"] = *inst.meta.lambda0;
  if (inst.meta.C0) meta["C0"] = *inst.meta.C0;
  if (inst.meta.sphere_radius) meta["sphere_radius"] = *inst.meta.sphere_radius;
  if (inst.meta.rotation_seed) meta["rotation_seed"] = *inst.meta.rotation_seed;
  return nlohmann::json{{"d", inst.d},
                        {"num_arms", inst.num_arms},
                        {"num_clients", inst.num_clients},
                        {"kind", to_string(inst.kind)},
                        {"theta_star", std::vector<double>(inst.theta_star.begin(),
                                                           inst.theta_star.end())},
                        {"meta", meta}};
}

Instance instance_from_json(const nlohmann::json& j) {
  require_keys(j, {"d", "num_arms", "num_clients", "kind", "theta_star", "meta"},
               {"d", "num_arms", "num_clients", "kind", "theta_star", "meta"},
               "instance");
  Instance inst;
  inst.d = j.at("d").get<int>();
  inst.num_arms = j.at("num_arms").get<int>();
  inst.num_clients = j.at("num_clients").get<int>();
  inst.kind = instance_kind_from_string(j.at("kind").get<std::string>());
  const auto theta = j.at("theta_star").get<std::vector<double>>();
  inst.theta_star = Eigen::Map<const VecD>(theta.data(),
                                           static_cast<Eigen::Index>(theta.size()));
  const nlohmann::json& meta = j.at("meta");
  require_keys(meta, {"lambda0", "C0", "sphere_radius", "rotation_seed"}, {},
               "instance.meta");
  if (meta.contains("lambda0")) inst.meta.lambda0 = meta.at("lambda0").get<double>();
  if (meta.contains("C0")) inst.meta.C0 = meta.at("C0").get<double>();
  if (meta.contains("sphere_radius"))
    inst.meta.sphere_radius = meta.at("sphere_radius").get<double>();
  if (meta.contains("rotation_seed"))
    inst.meta.rotation_seed = meta.at("rotation_seed").get<std::uint64_t>();
  inst.build_rotations();
  inst.validate();
  return inst;
}

void save_instance(const Instance& inst, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("ConfigError", "cannot open '" + path + "' for writing");
  out << instance_to_json(inst).dump(2) << "\n";
  if (!out) fail("ConfigError", "failed writing '" + path + "'");
}

Instance load_instance(const std::string& path) {
  return instance_from_json(load_json_file(path));
}

}  // namespace fedban
