#pragma once

#include <planealign/geom.hpp>
#include <planealign/rng.hpp>

#include <Eigen/Geometry>

#include <numbers>

namespace planealign::testing {

inline constexpr double kPi = std::numbers::pi;

inline Vec3 random_unit(Rng& rng) {
  Vec3 v(rng.normal(), rng.normal(), rng.normal());
  return v.normalized();
}

inline Sim2 random_sim2(Rng& rng, double t_range = 50.0) {
  return Sim2(std::exp(rng.uniform(-1.0, 1.0)), rng.uniform(-kPi, kPi),
              Vec2(rng.uniform(-t_range, t_range), rng.uniform(-t_range, t_range)));
}

inline Mat3 random_rotation(Rng& rng, double max_angle = kPi) {
  return Eigen::AngleAxisd(rng.uniform(-max_angle, max_angle), random_unit(rng)).toRotationMatrix();
}

inline Points2 random_points2(Rng& rng, Eigen::Index n, double lo, double hi) {
  Points2 p(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) p.row(i) << rng.uniform(lo, hi), rng.uniform(lo, hi);
  return p;
}

}  // namespace planealign::testing
