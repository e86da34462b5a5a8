#pragma once

#include <cmath>
#include <random>

#include "emp/geometry.hpp"

namespace emp::test {

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

inline Pose random_pose(std::mt19937_64& rng, double translation_scale = 2.0) {
  std::uniform_real_distribution<double> u(-translation_scale, translation_scale);
  Pose p;
  p.rotation = random_rotation(rng);
  p.translation = Vec3(u(rng), u(rng), u(rng));
  return p;
}

inline Points3 random_points(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Points3 p(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) p.row(i) << u(rng), u(rng), u(rng);
  return p;
}

inline double rotation_error(const Mat3& a, const Mat3& b) { return (a - b).norm(); }

}  // namespace emp::test
