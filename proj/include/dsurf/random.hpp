#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include <Eigen/Dense>

namespace dsurf {

// Library-independent draws from mt19937_64 so seeded runs reproduce across
// standard library implementations.

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Uniform point in the ball of the given radius (rejection sampling).
inline Eigen::Vector3d uniform_in_ball(std::mt19937_64& rng, double radius) {
  for (;;) {
    const Eigen::Vector3d p(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    if (p.squaredNorm() <= 1.0) return radius * p;
  }
}

/// Uniform point on the sphere of the given radius.
inline Eigen::Vector3d uniform_on_sphere(std::mt19937_64& rng, double radius) {
  const double z = uniform(rng, -1, 1);
  const double phi = 2 * std::numbers::pi * uniform01(rng);
  const double r = std::sqrt(std::max(0.0, 1 - z * z));
  return radius * Eigen::Vector3d(r * std::cos(phi), r * std::sin(phi), z);
}

/// Index in [0, n).
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

}  // namespace dsurf
