#pragma once

#include <planealign/common.hpp>
#include <planealign/geom.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace planealign {

// ---------------------------------------------------------------------------
// Camera localization

struct PoseEval {
  double yaw_err_deg = 0.0;   // [0, 180]
  double pos_err_frac = 0.0;  // fraction of the floorplan diagonal
  std::optional<double> pos_err_m;
};

/// Per-camera yaw and horizontal position errors. Positions in floorplan
/// pixels; yaws in radians. `metres_per_pixel` fills pos_err_m when given.
std::vector<PoseEval> evaluate_poses(const Points2& pred_pos, const VecX& pred_yaw,
                                     const Points2& gt_pos, const VecX& gt_yaw, double diagonal,
                                     std::optional<double> metres_per_pixel = std::nullopt);

inline const std::vector<double> kAngularThresholdsDeg{5, 10, 20, 30};
inline const std::vector<double> kPositionalThresholds{0.05, 0.10, 0.20};
inline const std::vector<double> kPckThresholdsPct{1, 3, 5, 10, 15, 30};

/// Fraction of errors <= each threshold. Throws EmptyInput.
std::vector<double> recall_at(std::span<const double> errs, std::span<const double> thresholds);
std::vector<double> angular_recall(std::span<const double> errs_deg,
                                   std::span<const double> thresholds_deg = kAngularThresholdsDeg);
std::vector<double> positional_recall(std::span<const double> errs_frac,
                                      std::span<const double> thresholds = kPositionalThresholds);
/// Fraction of cameras within both the yaw and the position threshold.
double joint_recall(std::span<const PoseEval> evals, double yaw_deg = 30.0,
                    double pos_frac = 0.20);

struct PckResult {
  std::map<double, double> pck;  // threshold (percent) -> fraction
  double rmse = 0.0;             // over normalized distances
};

/// Distances normalized by `diagonal`; thresholds inclusive.
PckResult pck_rmse(const Points2& pred, const Points2& gt, double diagonal,
                   std::span<const double> thresholds_pct = kPckThresholdsPct);

// ---------------------------------------------------------------------------
// Reconstruction quality

/// Row-major N x 3 point set.
using Cloud = Points3;

/// Exact nearest neighbours in 3D.
class KdTree {
 public:
  explicit KdTree(const Cloud& points, int leaf_size = 8);
  ~KdTree();
  KdTree(KdTree&&) noexcept;
  KdTree& operator=(KdTree&&) noexcept;

  /// Index and distance of the nearest stored point.
  std::pair<Eigen::Index, double> nearest(const Vec3& q) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

VecX nearest_distances(const Cloud& from, const Cloud& to);
VecX nearest_distances_brute(const Cloud& from, const Cloud& to);

/// Seeded subsample without replacement; the whole set when n >= rows.
/// The chosen rows depend only on (rows, n, seed).
Cloud subsample(const Cloud& points, std::size_t n, std::uint64_t seed);

struct ReconEval {
  double accuracy = 0.0;      // mean pred -> gt NN distance
  double completeness = 0.0;  // mean gt -> pred NN distance
  double overall = 0.0;       // mean of the two
  std::map<double, double> fscore;  // threshold -> [0, 100]
};

inline const std::vector<double> kFscoreThresholds{0.01, 0.02, 0.05, 0.10};

ReconEval chamfer_fscore(const Cloud& pred, const Cloud& gt, std::size_t n_sample = 10000,
                         std::span<const double> thresholds = kFscoreThresholds,
                         std::uint64_t seed = 0, bool brute_force = false);

struct IcpResult {
  Mat3 rotation = Mat3::Identity();  // dst ~ rotation * src + translation
  Vec3 translation = Vec3::Zero();
  std::vector<double> rms;  // pairing RMS per iteration, normalized units
  int iterations = 0;
  bool converged = false;
};

/// Point-to-point ICP on inputs centered and scaled by the dst bounding box.
/// The returned transform is in the original units.
IcpResult icp_align(const Cloud& src, const Cloud& dst, int max_iters = 50, double tol = 1e-6);

}  // namespace planealign
