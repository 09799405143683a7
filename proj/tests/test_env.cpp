// SPDX-License-Identifier: MIT

#include "fedban/env.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <set>
#include <span>

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

}  // namespace

// ---------------------------------------------------------------------------
// AxisNecessity: fully deterministic contexts pinned by the construction.

TEST(AxisInstance, FirstClientSeesAxisOneEveryoneElseAxisTwo) {
  const Instance inst = make_axis_instance(4);
  RngStream rng(7);
  const DecisionSet first = sample_context(inst, 0, rng);
  ASSERT_EQ(first.num_arms(), 2);
  EXPECT_EQ(first.arm(0), (VecD(2) << 0.5, 0.0).finished());
  EXPECT_EQ(first.arm(1), (VecD(2) << -0.5, 0.0).finished());
  for (int c = 1; c < 4; ++c) {
    const DecisionSet other = sample_context(inst, c, rng);
    EXPECT_EQ(other.arm(0), (VecD(2) << 0.0, 0.5).finished());
    EXPECT_EQ(other.arm(1), (VecD(2) << 0.0, -0.5).finished());
  }
  EXPECT_NEAR(inst.theta_star.norm(), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(inst.theta_star[0], inst.theta_star[1]);
}

TEST(AxisInstance, SingleClientOptimalGramIsRankOne) {
  const Instance inst = make_axis_instance(3);
  RngStream rng(11);
  for (int c = 0; c < 3; ++c) {
    RngStream r = rng.child("c", static_cast<std::uint64_t>(c));
    EXPECT_NEAR(estimate_min_eig_optimal(inst, c, 2000, r), 0.0, 1e-12);
  }
}

TEST(AxisInstance, MarginEstimateIsZeroGapsAreLarge) {
  // Both arms differ in mean by 2*0.5/sqrt(2) ~ 0.707, far above every grid
  // point, so the empirical margin probability is exactly zero.
  const Instance inst = make_axis_instance(2);
  RngStream rng(3);
  const double grid[] = {0.01, 0.05, 0.2};
  EXPECT_EQ(estimate_margin_constant(inst, 0, grid, 2000, rng), 0.0);
}

// ---------------------------------------------------------------------------
// SphereHard: structure of decision sets and theta*.

TEST(SphereHard, DecisionSetShape) {
  RngStream gen(19);
  const Instance inst = make_sphere_hard_instance(6, 3, 0.2, gen);
  EXPECT_EQ(inst.num_arms, 2);
  EXPECT_EQ(inst.d, 6);

  RngStream rng(5);
  std::set<int> blocks_seen;
  for (int t = 0; t < 400; ++t) {
    const DecisionSet ds = sample_context(inst, t % 3, rng);
    ASSERT_EQ(ds.num_arms(), 2);
    // Second arm is always the zero vector.
    EXPECT_EQ(ds.arm(1), VecD::Zero(6));
    // First arm occupies exactly one 2-block and lies in the unit ball.
    const VecD& x = ds.arm(0);
    EXPECT_LE(x.norm(), 1.0 + 1e-12);
    int active = -1;
    for (int b = 0; b < 3; ++b) {
      if (x.segment(2 * b, 2).norm() > 0) {
        EXPECT_EQ(active, -1) << "two active blocks";
        active = b;
      }
    }
    ASSERT_NE(active, -1) << "all-zero first arm";
    blocks_seen.insert(active);
  }
  EXPECT_EQ(blocks_seen.size(), 3u) << "block index should be uniform over d/2";
}

TEST(SphereHard, ThetaStarBlocksHaveRadiusR) {
  RngStream gen(23);
  const double r = 0.1;
  const Instance inst = make_sphere_hard_instance(4, 2, r, gen);
  EXPECT_NEAR(inst.theta_star.segment(0, 2).norm(), r, 1e-12);
  EXPECT_NEAR(inst.theta_star.segment(2, 2).norm(), r, 1e-12);
  ASSERT_TRUE(inst.meta.sphere_radius.has_value());
  EXPECT_EQ(*inst.meta.sphere_radius, r);
  ASSERT_TRUE(inst.meta.lambda0.has_value());
  EXPECT_GT(*inst.meta.lambda0, 0.0);
}

TEST(SphereHard, GeneratorValidatesArguments) {
  RngStream gen(1);
  EXPECT_TRUE(throws_code([&] { make_sphere_hard_instance(5, 2, 0.1, gen); },
                          "ConfigError"));  // odd d
  EXPECT_TRUE(throws_code([&] { make_sphere_hard_instance(4, 2, 0.6, gen); },
                          "ConfigError"));  // r > 1/sqrt(d)
  EXPECT_TRUE(throws_code([&] { make_sphere_hard_instance(4, 2, 0.0, gen); },
                          "ConfigError"));
}

// ---------------------------------------------------------------------------
// DiverseMargin: per-client laws, metadata, reproducibility.

TEST(DiverseMargin, ArmsInUnitBallAndRotationsDiffer) {
  RngStream gen(101);
  const Instance inst = make_diverse_margin_instance(3, 5, 4, 0.002, gen);
  EXPECT_EQ(inst.num_arms, 5);
  ASSERT_EQ(inst.rotations.size(), 4u);
  // Rotations are orthonormal and distinct across clients.
  for (const auto& Q : inst.rotations) {
    EXPECT_LT((Q.transpose() * Q - Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-10);
  }
  EXPECT_GT((inst.rotations[0] - inst.rotations[1]).norm(), 1e-6);

  RngStream rng(55);
  for (int t = 0; t < 200; ++t) {
    const DecisionSet ds = sample_context(inst, t % 4, rng);
    for (int a = 0; a < ds.num_arms(); ++a) EXPECT_LE(ds.arm(a).norm(), 1.0 + 1e-12);
  }
  ASSERT_TRUE(inst.meta.lambda0.has_value());
  EXPECT_GE(*inst.meta.lambda0, 0.002);
  EXPECT_TRUE(inst.meta.C0.has_value());
  EXPECT_NEAR(inst.theta_star.norm(), 1.0, 1e-12);
}

TEST(DiverseMargin, GeneratorIsDeterministicInItsSeed) {
  RngStream a(7), b(7), c(8);
  const Instance ia = make_diverse_margin_instance(3, 4, 3, 0.002, a);
  const Instance ib = make_diverse_margin_instance(3, 4, 3, 0.002, b);
  const Instance ic = make_diverse_margin_instance(3, 4, 3, 0.002, c);
  EXPECT_EQ(ia.theta_star, ib.theta_star);
  EXPECT_EQ(ia.meta.rotation_seed, ib.meta.rotation_seed);
  EXPECT_NE(ia.theta_star, ic.theta_star);
}

TEST(DiverseMargin, PositiveDiversityEstimate) {
  RngStream gen(31);
  const Instance inst = make_diverse_margin_instance(2, 6, 3, 0.005, gen);
  RngStream rng(77);
  EXPECT_GT(estimate_min_eig_optimal(inst, 0, 4000, rng), 0.005);
}

// ---------------------------------------------------------------------------
// Rewards and regret bookkeeping.

TEST(Reward, MeanIsLinearInThetaStar) {
  const Instance inst = make_axis_instance(2);  // theta* = (1,1)/sqrt(2)
  const VecD x = (VecD(2) << 0.5, 0.0).finished();
  RngStream rng(13);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) sum += reward(inst, x, rng).value;
  // mean = 0.5/sqrt(2) ~ 0.3536, noise sd 1 -> se ~ 0.0022.
  EXPECT_NEAR(sum / n, 0.5 / std::sqrt(2.0), 0.012);
}

TEST(Reward, RejectsBadFeatureVectors) {
  const Instance inst = make_axis_instance(2);
  RngStream rng(1);
  EXPECT_TRUE(throws_code(
      [&] { reward(inst, (VecD(3) << 1, 0, 0).finished(), rng); }, "BadDimension"));
  EXPECT_TRUE(throws_code(
      [&] { reward(inst, (VecD(2) << 2.0, 0.0).finished(), rng); }, "OutOfDomain"));
}

TEST(Regret, OptimalArmHasZeroRegretAndTiesGoLow) {
  const Instance inst = make_axis_instance(2);
  RngStream rng(9);
  const DecisionSet ds = sample_context(inst, 0, rng);  // {(.5,0), (-.5,0)}
  EXPECT_EQ(optimal_arm(inst, ds), 0);
  EXPECT_EQ(instantaneous_regret(inst, ds, 0), 0.0);
  // Playing the other arm costs exactly the mean gap 1/sqrt(2).
  EXPECT_NEAR(instantaneous_regret(inst, ds, 1), 1.0 / std::sqrt(2.0), 1e-12);

  DecisionSet tie;
  tie.arms = {(VecD(2) << 0.3, 0.0).finished(), (VecD(2) << 0.0, 0.3).finished()};
  EXPECT_EQ(optimal_arm(inst, tie), 0);  // equal means under theta* = (1,1)/sqrt(2)
}

// ---------------------------------------------------------------------------
// Estimator preconditions.

TEST(Estimators, ValidateArguments) {
  const Instance inst = make_axis_instance(2);
  RngStream rng(1);
  EXPECT_TRUE(
      throws_code([&] { estimate_min_eig_optimal(inst, 0, 999, rng); }, "OutOfDomain"));
  EXPECT_TRUE(
      throws_code([&] { estimate_min_eig_optimal(inst, 5, 2000, rng); }, "OutOfDomain"));
  const double empty[] = {0.5};
  EXPECT_TRUE(throws_code(
      [&] {
        estimate_margin_constant(inst, 0, std::span<const double>(empty, 0), 2000, rng);
      },
      "OutOfDomain"));
  const double unsorted[] = {0.2, 0.1};
  EXPECT_TRUE(throws_code(
      [&] { estimate_margin_constant(inst, 0, unsorted, 2000, rng); }, "OutOfDomain"));
  const double nonpositive[] = {0.0, 0.1};
  EXPECT_TRUE(throws_code(
      [&] { estimate_margin_constant(inst, 0, nonpositive, 2000, rng); }, "OutOfDomain"));
  EXPECT_TRUE(throws_code([&] { sample_context(inst, 2, rng); }, "OutOfDomain"));
}

// ---------------------------------------------------------------------------
// Serialization: exact field names, strictness, and context-law round trip.

TEST(InstanceJson, RoundTripPreservesLawAndMetadata) {
  RngStream gen(41);
  const Instance inst = make_diverse_margin_instance(3, 4, 3, 0.002, gen);
  const nlohmann::json j = instance_to_json(inst);
  for (const char* key : {"d", "num_arms", "num_clients", "kind", "theta_star", "meta"})
    EXPECT_TRUE(j.contains(key)) << key;

  const Instance back = instance_from_json(j);
  EXPECT_EQ(back.d, inst.d);
  EXPECT_EQ(back.kind, inst.kind);
  EXPECT_EQ(back.theta_star, inst.theta_star);
  ASSERT_EQ(back.rotations.size(), inst.rotations.size());
  for (size_t c = 0; c < inst.rotations.size(); ++c)
    EXPECT_EQ(back.rotations[c], inst.rotations[c]);

  // Same stream, same instance -> identical decision sets after the trip.
  RngStream r1(99), r2(99);
  const DecisionSet a = sample_context(inst, 1, r1);
  const DecisionSet b = sample_context(back, 1, r2);
  ASSERT_EQ(a.num_arms(), b.num_arms());
  for (int k = 0; k < a.num_arms(); ++k) EXPECT_EQ(a.arm(k), b.arm(k));
}

TEST(InstanceJson, RejectsUnknownAndMissingKeys) {
  RngStream gen(43);
  nlohmann::json j = instance_to_json(make_axis_instance(2));
  j["surprise"] = 1;
  EXPECT_TRUE(throws_code([&] { instance_from_json(j); }, "ConfigError"));
  j.erase("surprise");
  j.erase("theta_star");
  EXPECT_TRUE(throws_code([&] { instance_from_json(j); }, "ConfigError"));
  EXPECT_TRUE(
      throws_code([&] { instance_kind_from_string("Mystery"); }, "ConfigError"));
}

TEST(InstanceJson, FileRoundTrip) {
  RngStream gen(47);
  const Instance inst = make_sphere_hard_instance(4, 2, 0.25, gen);
  const auto path =
      (std::filesystem::temp_directory_path() / "fedban_test_instance.json").string();
  save_instance(inst, path);
  const Instance back = load_instance(path);
  EXPECT_EQ(back.theta_star, inst.theta_star);
  EXPECT_EQ(back.kind, InstanceKind::SphereHard);
  ASSERT_TRUE(back.meta.sphere_radius.has_value());
  EXPECT_EQ(*back.meta.sphere_radius, 0.25);
  std::filesystem::remove(path);
}

TEST(InstanceKindStrings, RoundTrip) {
  for (InstanceKind k : {InstanceKind::DiverseMargin, InstanceKind::SphereHard,
                         InstanceKind::AxisNecessity})
    EXPECT_EQ(instance_kind_from_string(to_string(k)), k);
}
