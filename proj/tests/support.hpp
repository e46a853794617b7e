#pragma once

#include <cmath>
#include <random>

#include "irb/geometry.hpp"

namespace testing {

inline irb::Vec3 random_vec(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

// Axis-angle with norm below max_angle.
inline irb::Vec3 random_rotation(std::mt19937_64& rng, double max_angle) {
  std::uniform_real_distribution<double> u(0.0, max_angle);
  irb::Vec3 axis = random_vec(rng, -1.0, 1.0).normalized();
  return axis * u(rng);
}

inline irb::Pose random_pose(std::mt19937_64& rng, double max_angle = 3.0, double max_t = 2.0) {
  return {random_rotation(rng, max_angle), random_vec(rng, -max_t, max_t)};
}

inline double deg(double rad) { return rad * 180.0 / M_PI; }

}  // namespace testing
