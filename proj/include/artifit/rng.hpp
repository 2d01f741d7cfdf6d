#pragma once

#include <cstdint>
#include <random>

#include "artifit/geom.hpp"

namespace artifit {

// splitmix64 — used to decorrelate seed/stream pairs before seeding mt19937
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream = 0) {
  return std::mt19937_64(mix64(mix64(seed) ^ mix64(stream * 0x9e3779b97f4a7c15ull + 1)));
}

inline Vec3 random_unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(g(rng), g(rng), g(rng));
  } while (v.norm() < 1e-9);
  return v.normalized();
}

// Shoemake's method: uniform over SO(3)
inline Rotation random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
  const double two_pi = 2.0 * std::acos(-1.0);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  Eigen::Quaterniond q(a * std::sin(two_pi * u2), a * std::cos(two_pi * u2),
                       b * std::sin(two_pi * u3), b * std::cos(two_pi * u3));
  return Rotation(q.normalized().toRotationMatrix());
}

}  // namespace artifit
