#include <planealign/metrics.hpp>
#include <planealign/rng.hpp>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace planealign {

std::vector<PoseEval> evaluate_poses(const Points2& pred_pos, const VecX& pred_yaw,
                                     const Points2& gt_pos, const VecX& gt_yaw, double diagonal,
                                     std::optional<double> metres_per_pixel) {
  const Eigen::Index n = gt_pos.rows();
  if (n == 0) throw Error(ErrorCode::EmptyInput, "no cameras to evaluate");
  if (pred_pos.rows() != n || pred_yaw.size() != n || gt_yaw.size() != n)
    throw Error(ErrorCode::InvalidArgument, "prediction and ground truth sizes differ");
  if (!(diagonal > 0.0)) throw Error(ErrorCode::InvalidArgument, "diagonal must be positive");

  std::vector<PoseEval> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& e = out[std::size_t(i)];
    e.yaw_err_deg = std::abs(wrap_angle(pred_yaw[i] - gt_yaw[i])) * 180.0 / std::numbers::pi;
    const double d = (pred_pos.row(i) - gt_pos.row(i)).norm();
    e.pos_err_frac = d / diagonal;
    if (metres_per_pixel) e.pos_err_m = d * *metres_per_pixel;
  }
  return out;
}

std::vector<double> recall_at(std::span<const double> errs, std::span<const double> thresholds) {
  if (errs.empty()) throw Error(ErrorCode::EmptyInput, "recall of an empty error list");
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto hits = std::count_if(errs.begin(), errs.end(), [t](double e) { return e <= t; });
    out.push_back(double(hits) / double(errs.size()));
  }
  return out;
}

std::vector<double> angular_recall(std::span<const double> errs_deg,
                                   std::span<const double> thresholds_deg) {
  return recall_at(errs_deg, thresholds_deg);
}

std::vector<double> positional_recall(std::span<const double> errs_frac,
                                      std::span<const double> thresholds) {
  return recall_at(errs_frac, thresholds);
}

double joint_recall(std::span<const PoseEval> evals, double yaw_deg, double pos_frac) {
  if (evals.empty()) throw Error(ErrorCode::EmptyInput, "recall of an empty error list");
  const auto hits = std::count_if(evals.begin(), evals.end(), [&](const PoseEval& e) {
    return e.yaw_err_deg <= yaw_deg && e.pos_err_frac <= pos_frac;
  });
  return double(hits) / double(evals.size());
}

PckResult pck_rmse(const Points2& pred, const Points2& gt, double diagonal,
                   std::span<const double> thresholds_pct) {
  if (gt.rows() == 0) throw Error(ErrorCode::EmptyInput, "no keypoints");
  if (pred.rows() != gt.rows())
    throw Error(ErrorCode::InvalidArgument, "prediction and ground truth sizes differ");
  if (!(diagonal > 0.0)) throw Error(ErrorCode::InvalidArgument, "diagonal must be positive");

  const VecX d = (pred - gt).rowwise().norm() / diagonal;
  PckResult out;
  for (double t : thresholds_pct)
    out.pck[t] = double((d.array() <= t / 100.0).count()) / double(d.size());
  out.rmse = std::sqrt(d.squaredNorm() / double(d.size()));
  return out;
}

// ---------------------------------------------------------------------------

struct KdTree::Impl {
  struct Node {
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    Eigen::Index begin = 0, end = 0;  // leaf range in `order`
    int left = -1, right = -1;
  };

  Cloud pts;
  std::vector<Eigen::Index> order;
  std::vector<Node> nodes;
  int leaf_size;

  Impl(const Cloud& p, int leaf) : pts(p), order(std::size_t(p.rows())), leaf_size(leaf) {
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    if (!order.empty()) build(0, Eigen::Index(order.size()));
  }

  int build(Eigen::Index begin, Eigen::Index end) {
    const int id = int(nodes.size());
    nodes.push_back({});
    if (end - begin <= leaf_size) {
      nodes[std::size_t(id)] = {-1, 0.0, begin, end, -1, -1};
      return id;
    }
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (Eigen::Index k = begin; k < end; ++k) {
      lo = lo.cwiseMin(pts.row(order[std::size_t(k)]).transpose());
      hi = hi.cwiseMax(pts.row(order[std::size_t(k)]).transpose());
    }
    int axis;
    (hi - lo).maxCoeff(&axis);
    const Eigen::Index mid = begin + (end - begin) / 2;
    std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                     [&](Eigen::Index a, Eigen::Index b) { return pts(a, axis) < pts(b, axis); });
    const double split = pts(order[std::size_t(mid)], axis);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes[std::size_t(id)] = {axis, split, begin, end, left, right};
    return id;
  }

  void search(int id, const Vec3& q, Eigen::Index& best, double& best_d2) const {
    const Node& n = nodes[std::size_t(id)];
    if (n.axis < 0) {
      for (Eigen::Index k = n.begin; k < n.end; ++k) {
        const Eigen::Index i = order[std::size_t(k)];
        const double d2 = (pts.row(i).transpose() - q).squaredNorm();
        if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
          best_d2 = d2;
          best = i;
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const int near = diff < 0 ? n.left : n.right;
    const int far = diff < 0 ? n.right : n.left;
    search(near, q, best, best_d2);
    if (diff * diff <= best_d2) search(far, q, best, best_d2);
  }
};

KdTree::KdTree(const Cloud& points, int leaf_size)
    : impl_(std::make_unique<Impl>(points, std::max(1, leaf_size))) {
  if (points.rows() == 0) throw Error(ErrorCode::EmptyInput, "kd-tree over an empty set");
}
KdTree::~KdTree() = default;
KdTree::KdTree(KdTree&&) noexcept = default;
KdTree& KdTree::operator=(KdTree&&) noexcept = default;

std::pair<Eigen::Index, double> KdTree::nearest(const Vec3& q) const {
  Eigen::Index best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  impl_->search(0, q, best, best_d2);
  return {best, std::sqrt(best_d2)};
}

VecX nearest_distances(const Cloud& from, const Cloud& to) {
  const KdTree tree(to);
  VecX d(from.rows());
  for (Eigen::Index i = 0; i < from.rows(); ++i) d[i] = tree.nearest(from.row(i).transpose()).second;
  return d;
}

VecX nearest_distances_brute(const Cloud& from, const Cloud& to) {
  if (to.rows() == 0) throw Error(ErrorCode::EmptyInput, "nearest neighbour in an empty set");
  VecX d(from.rows());
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    const Vec3 q = from.row(i).transpose();
    double best = std::numeric_limits<double>::infinity();
    // Same per-pair arithmetic as the tree, so both paths agree to the bit.
    for (Eigen::Index j = 0; j < to.rows(); ++j) best = std::min(best, (to.row(j).transpose() - q).squaredNorm());
    d[i] = std::sqrt(best);
  }
  return d;
}

Cloud subsample(const Cloud& points, std::size_t n, std::uint64_t seed) {
  const auto rows = std::size_t(points.rows());
  if (n >= rows) return points;
  // Partial Fisher-Yates over indices, then restore ascending order.
  std::vector<Eigen::Index> idx(rows);
  std::iota(idx.begin(), idx.end(), Eigen::Index(0));
  Rng rng(seed, 0xc10d);
  for (std::size_t k = 0; k < n; ++k) std::swap(idx[k], idx[k + rng.below(rows - k)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  Cloud out(Eigen::Index(n), 3);
  for (std::size_t k = 0; k < n; ++k) out.row(Eigen::Index(k)) = points.row(idx[k]);
  return out;
}

ReconEval chamfer_fscore(const Cloud& pred, const Cloud& gt, std::size_t n_sample,
                         std::span<const double> thresholds, std::uint64_t seed,
                         bool brute_force) {
  if (pred.rows() == 0 || gt.rows() == 0)
    throw Error(ErrorCode::EmptyInput, "chamfer distance needs two nonempty sets");
  const Cloud p = subsample(pred, n_sample, seed);
  const Cloud g = subsample(gt, n_sample, seed);
  const auto nn = brute_force ? nearest_distances_brute : nearest_distances;
  const VecX to_gt = nn(p, g);
  const VecX to_pred = nn(g, p);

  ReconEval out;
  out.accuracy = to_gt.mean();
  out.completeness = to_pred.mean();
  out.overall = (out.accuracy + out.completeness) / 2.0;
  for (double t : thresholds) {
    const double precision = double((to_gt.array() <= t).count()) / double(to_gt.size());
    const double recall = double((to_pred.array() <= t).count()) / double(to_pred.size());
    out.fscore[t] = precision + recall > 0.0 ? 200.0 * precision * recall / (precision + recall)
                                             : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void require_spread(const Cloud& c, const char* what) {
  if (c.rows() < 3) throw Error(ErrorCode::DegenerateSample, std::string(what) + " has < 3 points");
  const Cloud centered = c.rowwise() - c.colwise().mean();
  const Eigen::JacobiSVD<MatX> svd(centered);
  const VecX sv = svd.singularValues();
  if (sv[1] <= 1e-9 * std::max(1.0, sv[0]))
    throw Error(ErrorCode::DegenerateSample, std::string(what) + " is collinear");
}

}  // namespace

IcpResult icp_align(const Cloud& src, const Cloud& dst, int max_iters, double tol) {
  require_spread(src, "source");
  require_spread(dst, "target");
  if (max_iters < 1) throw Error(ErrorCode::InvalidArgument, "max_iters must be >= 1");

  const Vec3 lo = dst.colwise().minCoeff(), hi = dst.colwise().maxCoeff();
  const Vec3 center = (lo + hi) / 2.0;
  const double extent = std::max((hi - lo).maxCoeff(), 1e-12);
  const Cloud s = (src.rowwise() - center.transpose()) / extent;
  const Cloud d = (dst.rowwise() - center.transpose()) / extent;
  const KdTree tree(d);

  IcpResult out;
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  Eigen::Matrix3Xd moved(3, s.rows()), paired(3, s.rows());
  for (int it = 0; it < max_iters; ++it) {
    double sq = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      moved.col(i) = r * s.row(i).transpose() + t;
      const auto [j, dist] = tree.nearest(moved.col(i));
      paired.col(i) = d.row(j).transpose();
      sq += dist * dist;
    }
    const double rms = std::sqrt(sq / double(s.rows()));
    if (!out.rms.empty() && rms > out.rms.back()) break;  // keep the better previous estimate
    out.rms.push_back(rms);
    out.rotation = r;
    out.translation = t;
    out.iterations = it + 1;
    if (out.rms.size() >= 2 && out.rms[out.rms.size() - 2] - rms < tol) {
      out.converged = true;
      break;
    }
    // Closed-form rigid update from the current correspondences.
    const Eigen::Matrix4d step = Eigen::umeyama(moved, paired, false);
    const Mat3 a = step.topLeftCorner<3, 3>();
    r = a * r;
    t = a * t + step.topRightCorner<3, 1>();
  }

  // Normalized y = R x + t  ->  original Y = R X + (c - R c + e t).
  out.translation = center - out.rotation * center + extent * out.translation;
  return out;
}

}  // namespace planealign
