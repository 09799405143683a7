// SPDX-License-Identifier: MIT
//
// Deterministic random streams and the samplers built on top of them.
//
// Reproducibility contract: a stream is identified by (seed, path), where the
// path is the sequence of child(label[, index]) derivations from the root.
// Identical (seed, path) yields an identical draw sequence on every platform,
// because std::mt19937_64's output sequence is fixed by the C++ standard and
// every transformation below uses explicit, platform-independent arithmetic.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "fedban/common.hpp"

namespace fedban {

/// Seeded random stream with labeled child derivation.
///
/// Child seeds are derived as (parent_seed XOR fnv1a64(label)) * FNV_PRIME;
/// indexed children append the 8 little-endian bytes of the index to the
/// label before hashing. Distinct labels give independent streams for all
/// practical purposes, and the derivation is pure (child() does not advance
/// the parent).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  /// FNV-1a 64-bit hash of a byte string.
  static std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  /// Child-seed derivation, exposed so tests can pin vectors.
  static std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
    return (parent ^ fnv1a64(label)) * 0x100000001b3ull;
  }

  /// Independent child stream for a labeled sub-purpose.
  RngStream child(std::string_view label) const {
    return RngStream(derive_seed(seed_, label));
  }

  /// Indexed child stream (e.g. one per client).
  RngStream child(std::string_view label, std::uint64_t index) const {
    std::string lab(label);
    for (int b = 0; b < 8; ++b) lab.push_back(static_cast<char>((index >> (8 * b)) & 0xff));
    return RngStream(derive_seed(seed_, lab));
  }

  std::uint64_t seed() const { return seed_; }

  /// Next 64 raw bits.
  std::uint64_t raw() { return eng_(); }

  /// Uniform double in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in {0, ..., n-1}; n >= 1.
  std::int64_t uniform_int(std::int64_t n) {
    if (n < 1) fail("OutOfDomain", "uniform_int requires n >= 1");
    // Rejection to avoid modulo bias; deterministic given the stream.
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return static_cast<std::int64_t>(x % un);
  }

  /// Standard normal via Box-Muller (caches the spare deviate).
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * M_PI * u2;
    spare_ = rad * std::sin(ang);
    has_spare_ = true;
    return rad * std::cos(ang);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// N(mean, sd^2) draw; sd >= 0.
inline double sample_gaussian(RngStream& rng, double mean, double sd) {
  if (!(sd >= 0.0) || !std::isfinite(mean) || !std::isfinite(sd))
    fail("OutOfDomain", "sample_gaussian requires finite mean and sd >= 0");
  return mean + sd * rng.gaussian();
}

/// Centered Laplace draw with the given scale (inverse-CDF method).
inline double sample_laplace(RngStream& rng, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale))
    fail("OutOfDomain", "sample_laplace requires scale > 0");
  double u = rng.uniform01() - 0.5;
  while (1.0 - 2.0 * std::abs(u) <= 0.0) u = rng.uniform01() - 0.5;
  const double sign = (u < 0.0) ? -1.0 : 1.0;
  return -scale * sign * std::log(1.0 - 2.0 * std::abs(u));
}

/// Standard gaussian vector conditioned on ||x|| <= radius (rejection).
inline Eigen::VectorXd sample_truncated_gaussian_ball(RngStream& rng, int dim,
                                                      double radius) {
  if (dim < 1 || !(radius > 0.0))
    fail("OutOfDomain", "sample_truncated_gaussian_ball requires dim >= 1, radius > 0");
  Eigen::VectorXd x(dim);
  for (;;) {
    for (int i = 0; i < dim; ++i) x[i] = rng.gaussian();
    if (x.norm() <= radius) return x;
  }
}

/// Uniform draw on the sphere of the given radius (normalized gaussian).
inline Eigen::VectorXd sample_uniform_sphere(RngStream& rng, int dim, double radius) {
  if (dim < 1 || !(radius >= 0.0))
    fail("OutOfDomain", "sample_uniform_sphere requires dim >= 1, radius >= 0");
  Eigen::VectorXd g(dim);
  double n = 0.0;
  do {
    for (int i = 0; i < dim; ++i) g[i] = rng.gaussian();
    n = g.norm();
  } while (n < 1e-12);
  return (radius / n) * g;
}

/// Uniform draw in the closed ball of the given radius.
inline Eigen::VectorXd sample_uniform_ball(RngStream& rng, int dim, double radius) {
  const Eigen::VectorXd dir = sample_uniform_sphere(rng, dim, 1.0);
  const double r = radius * std::pow(rng.uniform01(), 1.0 / static_cast<double>(dim));
  return r * dir;
}

/// Samples an index with P(i) proportional to exp(logw[i]), stably
/// (log-sum-exp shift, then inverse-CDF walk). logw must be non-empty.
inline Eigen::Index sample_categorical_logweights(
    RngStream& rng, const Eigen::Ref<const Eigen::VectorXd>& logw) {
  if (logw.size() == 0) fail("OutOfDomain", "empty log-weight vector");
  if (!logw.allFinite()) fail("NonFiniteInput", "log-weights must be finite");
  const double m = logw.maxCoeff();
  const Eigen::VectorXd w = (logw.array() - m).exp();
  const double total = w.sum();
  const double u = rng.uniform01() * total;
  double cum = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    cum += w[i];
    if (u < cum) return i;
  }
  return w.size() - 1;
}

}  // namespace fedban
