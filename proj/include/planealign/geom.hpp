#pragma once

#include <planealign/common.hpp>

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace planealign {

/// Wraps an angle to (-pi, pi].
template <class Scalar>
Scalar wrap_angle(Scalar a) {
  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  a = std::remainder(a, Scalar(2) * pi);
  if (a <= -pi) a += Scalar(2) * pi;
  return a;
}

template <class Scalar>
Eigen::Matrix<Scalar, 2, 2> rotation2(Scalar theta) {
  const Scalar c = std::cos(theta), s = std::sin(theta);
  Eigen::Matrix<Scalar, 2, 2> r;
  r << c, -s, s, c;
  return r;
}

/// Planar similarity p -> s R(theta) p + t.
template <class Scalar>
struct Sim2T {
  Scalar s = Scalar(1);
  Scalar theta = Scalar(0);
  Vec2T<Scalar> t = Vec2T<Scalar>::Zero();

  static Sim2T identity() { return {}; }

  Eigen::Matrix<Scalar, 2, 2> linear() const { return s * rotation2(theta); }

  Vec2T<Scalar> operator()(const Vec2T<Scalar>& p) const {
    return linear() * p + t;
  }

  Sim2T inverse() const {
    const Scalar inv_s = Scalar(1) / s;
    return {inv_s, wrap_angle(-theta), -(inv_s * rotation2(-theta) * t)};
  }

  /// 3x3 homogeneous form.
  Mat3T<Scalar> matrix() const {
    Mat3T<Scalar> m = Mat3T<Scalar>::Identity();
    m.template topLeftCorner<2, 2>() = linear();
    m.template topRightCorner<2, 1>() = t;
    return m;
  }
};

using Sim2 = Sim2T<double>;

/// (outer o inner)(p) = outer(inner(p)).
template <class Scalar>
Sim2T<Scalar> compose(const Sim2T<Scalar>& outer, const Sim2T<Scalar>& inner) {
  return {outer.s * inner.s, wrap_angle(outer.theta + inner.theta),
          outer.linear() * inner.t + outer.t};
}

template <class Scalar>
Vec2T<Scalar> sim2_apply(const Sim2T<Scalar>& m, const Vec2T<Scalar>& p) {
  return m(p);
}

/// Applies m to every row of pts.
Points2 sim2_apply(const Sim2& m, const Points2& pts);

using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Camera-to-world pose: x_world = rotation * x_cam + center.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 center = Vec3::Zero();
  int image_id = 0;
};

bool is_rotation(const Mat3& r, double tol = 1e-9);

/// Element of `votes` minimizing the summed geodesic angle to all votes.
/// Returns the index; ties resolve to the lowest index.
std::size_t medoid_index(std::span<const Vec3> votes);
Vec3 medoid_direction(std::span<const Vec3> votes);

/// Proper rotation taking the unit vector g to (0, 1, 0).
Mat3 gravity_rotation(const Vec3& g);

/// Rotation about +y whose action on (x, z) is the planar rotation by theta.
Mat3 yaw_rotation(double theta);

/// Heading of a camera: atan2 of its forward axis (third column) in the xz-plane.
double camera_yaw(const Mat3& rotation);

Sim2 sim2_from_two_pairs(const Vec2& a1, const Vec2& a2, const Vec2& b1,
                         const Vec2& b2, double eps = kDegenerateEps);

/// Weighted least-squares similarity mapping src onto dst.
Sim2 sim2_umeyama(const Points2& src, const Points2& dst,
                  std::optional<VecX> weights = std::nullopt,
                  double eps = kDegenerateEps);

struct AlignedScene {
  Points3 points;
  std::vector<CameraPose> poses;
};

/// Maps a gravity-aligned scene by m: (x, z) through m, y scaled by m.s,
/// camera headings rotated by m.theta.
AlignedScene align_scene(const Points3& points,
                         std::span<const CameraPose> poses, const Sim2& m);

}  // namespace planealign
