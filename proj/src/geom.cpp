#include <planealign/geom.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <complex>
#include <limits>

namespace planealign {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NotUnit: return "NotUnit";
    case ErrorCode::DegenerateSample: return "DegenerateSample";
    case ErrorCode::AllPointsFiltered: return "AllPointsFiltered";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::TooFewPairs: return "TooFewPairs";
    case ErrorCode::DegenerateWeights: return "DegenerateWeights";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::EmptyDensity: return "EmptyDensity";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadVersion: return "BadVersion";
    case ErrorCode::DimOverflow: return "DimOverflow";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Points2 sim2_apply(const Sim2& m, const Points2& pts) {
  const Mat2 a = m.linear();
  Points2 out = pts * a.transpose();
  out.rowwise() += m.t.transpose();
  return out;
}

bool is_rotation(const Mat3& r, double tol) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

std::size_t medoid_index(std::span<const Vec3> votes) {
  if (votes.empty()) throw Error(ErrorCode::EmptyInput, "no gravity votes");
  std::size_t best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < votes.size(); ++i) {
    double cost = 0.0;
    for (std::size_t j = 0; j < votes.size(); ++j)
      cost += std::acos(std::clamp(votes[i].dot(votes[j]), -1.0, 1.0));
    if (cost < best_cost) {
      best_cost = cost;
      best = i;
    }
  }
  return best;
}

Vec3 medoid_direction(std::span<const Vec3> votes) {
  return votes[medoid_index(votes)];
}

Mat3 gravity_rotation(const Vec3& g) {
  if (!g.allFinite() || std::abs(g.norm() - 1.0) > 1e-6)
    throw Error(ErrorCode::NotUnit, "gravity vector must have unit norm");
  const Vec3 up = g.normalized();
  const Vec3 seed = std::abs(up.x()) > 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 bx = (seed - seed.dot(up) * up).normalized();
  const Vec3 bz = bx.cross(up).normalized();
  Mat3 r;
  r.row(0) = bx.transpose();
  r.row(1) = up.transpose();
  r.row(2) = bz.transpose();
  return r;
}

Mat3 yaw_rotation(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Mat3 r;
  r << c, 0, -s,
       0, 1, 0,
       s, 0, c;
  return r;
}

double camera_yaw(const Mat3& rotation) {
  const Vec3 fwd = rotation.col(2);
  return std::atan2(fwd.z(), fwd.x());
}

Sim2 sim2_from_two_pairs(const Vec2& a1, const Vec2& a2, const Vec2& b1,
                         const Vec2& b2, double eps) {
  const std::complex<double> da(a2.x() - a1.x(), a2.y() - a1.y());
  const std::complex<double> db(b2.x() - b1.x(), b2.y() - b1.y());
  if (std::abs(da) <= eps || std::abs(db) <= eps)
    throw Error(ErrorCode::DegenerateSample, "coincident sample points");
  const std::complex<double> z = db / da;
  const std::complex<double> t =
      std::complex<double>(b1.x(), b1.y()) - z * std::complex<double>(a1.x(), a1.y());
  return {std::abs(z), wrap_angle(std::arg(z)), Vec2(t.real(), t.imag())};
}

Sim2 sim2_umeyama(const Points2& src, const Points2& dst,
                  std::optional<VecX> weights, double eps) {
  const Eigen::Index n = src.rows();
  if (n < 2 || dst.rows() != n)
    throw Error(ErrorCode::DegenerateSample, "need at least two matched points");
  VecX w = weights.value_or(VecX::Ones(n));
  if (w.size() != n || (w.array() < 0.0).any())
    throw Error(ErrorCode::InvalidArgument, "weights must be nonnegative, one per point");
  const double wsum = w.sum();
  if (!(wsum > 0.0))
    throw Error(ErrorCode::DegenerateSample, "weights sum to zero");

  const Eigen::RowVector2d mu_src = (w.transpose() * src) / wsum;
  const Eigen::RowVector2d mu_dst = (w.transpose() * dst) / wsum;
  const Points2 a = src.rowwise() - mu_src;
  const Points2 b = dst.rowwise() - mu_dst;

  const double spread = (w.array() * a.rowwise().squaredNorm().array()).sum();
  if (spread / wsum <= eps * eps)
    throw Error(ErrorCode::DegenerateSample, "source points are coincident");

  // z = sum w conj(a) b / sum w |a|^2, in complex form.
  double re = 0.0, im = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    re += w[i] * (a(i, 0) * b(i, 0) + a(i, 1) * b(i, 1));
    im += w[i] * (a(i, 0) * b(i, 1) - a(i, 1) * b(i, 0));
  }
  re /= spread;
  im /= spread;
  Sim2 m;
  m.s = std::hypot(re, im);
  if (!(m.s > 0.0))
    throw Error(ErrorCode::DegenerateSample, "target points are coincident");
  m.theta = wrap_angle(std::atan2(im, re));
  m.t = mu_dst.transpose() - m.linear() * mu_src.transpose();
  return m;
}

AlignedScene align_scene(const Points3& points,
                         std::span<const CameraPose> poses, const Sim2& m) {
  const Mat2 a = m.linear();
  auto map_point = [&](double x, double y, double z) {
    const Vec2 p = a * Vec2(x, z) + m.t;
    return Vec3(p.x(), m.s * y, p.y());
  };

  AlignedScene out;
  out.points.resize(points.rows(), 3);
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    out.points.row(i) = map_point(points(i, 0), points(i, 1), points(i, 2)).transpose();

  const Mat3 yaw = yaw_rotation(m.theta);
  out.poses.reserve(poses.size());
  for (const CameraPose& pose : poses) {
    CameraPose q = pose;
    q.center = map_point(pose.center.x(), pose.center.y(), pose.center.z());
    q.rotation = yaw * pose.rotation;
    out.poses.push_back(q);
  }
  return out;
}

}  // namespace planealign
