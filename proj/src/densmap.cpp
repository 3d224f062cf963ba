#include <planealign/densmap.hpp>

#include <algorithm>
#include <cmath>

namespace planealign {

void FilterParams::validate() const {
  auto fail = [](const char* msg) { throw Error(ErrorCode::InvalidArgument, msg); };
  if (!(rho_conf >= 0.0 && rho_conf < 100.0)) fail("rho_conf must be in [0, 100)");
  if (!(rho_xz >= 0.0 && rho_xz < 50.0)) fail("rho_xz must be in [0, 50)");
  if (!(rho_y_min >= 0.0 && rho_y_max <= 100.0 && rho_y_min < rho_y_max))
    fail("rho_y range must satisfy 0 <= min < max <= 100");
}

double percentile_nearest_rank(std::span<double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "percentile of empty set");
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * double(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  auto nth = values.begin() + static_cast<std::ptrdiff_t>(rank - 1);
  std::nth_element(values.begin(), nth, values.end());
  return *nth;
}

namespace {

template <class Key>
double percentile_of(const std::vector<Eigen::Index>& idx, Key key, double p) {
  std::vector<double> v;
  v.reserve(idx.size());
  for (Eigen::Index i : idx) v.push_back(key(i));
  return percentile_nearest_rank(v, p);
}

}  // namespace

std::vector<Eigen::Index> filter_indices(const Points3& points,
                                         const VecX& confidence,
                                         const FilterParams& params) {
  params.validate();
  if (confidence.size() != points.rows())
    throw Error(ErrorCode::InvalidArgument, "confidence count mismatch");
  if (points.rows() == 0) throw Error(ErrorCode::AllPointsFiltered, "no input points");

  std::vector<Eigen::Index> idx(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) idx[std::size_t(i)] = i;

  auto keep_if = [&](auto pred) {
    std::erase_if(idx, [&](Eigen::Index i) { return !pred(i); });
    if (idx.empty()) throw Error(ErrorCode::AllPointsFiltered, "no points survive filtering");
  };

  const double conf_min =
      percentile_of(idx, [&](Eigen::Index i) { return confidence[i]; }, params.rho_conf);
  keep_if([&](Eigen::Index i) { return confidence[i] >= conf_min; });

  auto x = [&](Eigen::Index i) { return points(i, 0); };
  auto z = [&](Eigen::Index i) { return points(i, 2); };
  const double x_lo = percentile_of(idx, x, params.rho_xz);
  const double x_hi = percentile_of(idx, x, 100.0 - params.rho_xz);
  const double z_lo = percentile_of(idx, z, params.rho_xz);
  const double z_hi = percentile_of(idx, z, 100.0 - params.rho_xz);
  keep_if([&](Eigen::Index i) {
    return x(i) >= x_lo && x(i) <= x_hi && z(i) >= z_lo && z(i) <= z_hi;
  });

  auto y = [&](Eigen::Index i) { return points(i, 1); };
  const double y_lo = percentile_of(idx, y, params.rho_y_min);
  const double y_hi = percentile_of(idx, y, params.rho_y_max);
  keep_if([&](Eigen::Index i) { return y(i) >= y_lo && y(i) <= y_hi; });
  return idx;
}

Points3 filter_points(const ReconstructedScene& scene, const FilterParams& params) {
  if (scene.frame != Frame::GravityAligned)
    throw Error(ErrorCode::InvalidArgument, "filter_points expects a gravity-aligned scene");
  const Points3 pts = scene.all_points();
  const auto idx = filter_indices(pts, scene.all_confidences(), params);
  Points3 out(static_cast<Eigen::Index>(idx.size()), 3);
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(Eigen::Index(k)) = pts.row(idx[k]);
  return out;
}

Sim2 fit_world_to_grid(const Points3& points, Eigen::Index height,
                       Eigen::Index width, double margin_frac) {
  if (points.rows() == 0) throw Error(ErrorCode::AllPointsFiltered, "nothing to rasterize");
  if (height <= 0 || width <= 0) throw Error(ErrorCode::InvalidArgument, "empty grid size");
  if (!(margin_frac >= 0.0 && margin_frac <= 0.25))
    throw Error(ErrorCode::InvalidArgument, "margin_frac must be in [0, 0.25]");

  const double x_min = points.col(0).minCoeff(), x_max = points.col(0).maxCoeff();
  const double z_min = points.col(2).minCoeff(), z_max = points.col(2).maxCoeff();
  const double ex = (x_max - x_min) * (1.0 + 2.0 * margin_frac);
  const double ez = (z_max - z_min) * (1.0 + 2.0 * margin_frac);

  double scale = 1.0;
  if (ex > 0.0 && ez > 0.0)
    scale = std::min(double(width) / ex, double(height) / ez);
  else if (ex > 0.0)
    scale = double(width) / ex;
  else if (ez > 0.0)
    scale = double(height) / ez;

  const double cx = 0.5 * (x_min + x_max), cz = 0.5 * (z_min + z_max);
  Sim2 m;
  m.s = scale;
  m.theta = 0.0;
  m.t = Vec2(0.5 * double(width) - scale * cx, 0.5 * double(height) - scale * cz);
  return m;
}

MatX count_grid(const Points3& points, const Sim2& world_to_grid,
                Eigen::Index height, Eigen::Index width) {
  MatX counts = MatX::Zero(height, width);
  const double s = world_to_grid.s;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const double gx = s * points(i, 0) + world_to_grid.t.x();
    const double gy = s * points(i, 2) + world_to_grid.t.y();
    const auto col = std::clamp<Eigen::Index>(Eigen::Index(std::floor(gx)), 0, width - 1);
    const auto row = std::clamp<Eigen::Index>(Eigen::Index(std::floor(gy)), 0, height - 1);
    counts(row, col) += 1.0;
  }
  return counts;
}

DensityMap rasterize(const Points3& points, const RasterOptions& opts) {
  if (!(opts.gamma > 0.0 && opts.gamma <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "gamma must be in (0, 1]");
  DensityMap dm;
  dm.gamma = opts.gamma;
  dm.world_to_grid = fit_world_to_grid(points, opts.height, opts.width, opts.margin_frac);
  const MatX counts = count_grid(points, dm.world_to_grid, opts.height, opts.width);
  const double peak = counts.maxCoeff();
  dm.grid = (counts.array() / peak).pow(opts.gamma).matrix();
  // pow(1, gamma) is exact, so the peak cell is exactly 1.
  return dm;
}

Vec2 camera_to_grid(const DensityMap& dm, const CameraPose& pose) {
  return dm.world_to_grid(Vec2(pose.center.x(), pose.center.z()));
}

MatX Floorplan::gray() const {
  if (channels.empty()) throw Error(ErrorCode::EmptyInput, "empty floorplan");
  if (channels.size() == 1) return channels.front();
  MatX g = MatX::Zero(height(), width());
  for (const auto& c : channels) g += c;
  return g / double(channels.size());
}

}  // namespace planealign
