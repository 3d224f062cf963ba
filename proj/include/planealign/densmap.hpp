#pragma once

#include <planealign/geom.hpp>
#include <planealign/scene.hpp>

#include <span>
#include <vector>

namespace planealign {

/// Percentile thresholds for the three point filters, all in percent.
struct FilterParams {
  double rho_conf = 45.0;   // drop confidences below this percentile
  double rho_xz = 2.5;      // horizontal band [rho_xz, 100 - rho_xz] per axis
  double rho_y_min = 20.0;  // vertical slice
  double rho_y_max = 95.0;

  void validate() const;
};

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value (rank
/// clamped to [1, n]). `values` is reordered.
double percentile_nearest_rank(std::span<double> values, double p);

/// Indices (ascending) of the points surviving the confidence, horizontal
/// and vertical filters, applied in that order with percentiles recomputed
/// on each stage's survivors.
std::vector<Eigen::Index> filter_indices(const Points3& points,
                                         const VecX& confidence,
                                         const FilterParams& params);

Points3 filter_points(const ReconstructedScene& scene, const FilterParams& params);

struct DensityMap {
  MatX grid;          // H x W, values in [0, 1]; grid(row, col)
  double gamma = 0.5;
  Sim2 world_to_grid;  // (x, z) -> (col, row) pixel coordinates, theta == 0

  Eigen::Index height() const { return grid.rows(); }
  Eigen::Index width() const { return grid.cols(); }
  double diagonal() const { return std::hypot(double(grid.rows()), double(grid.cols())); }
};

struct RasterOptions {
  Eigen::Index height = 256;
  Eigen::Index width = 256;
  double gamma = 0.5;
  double margin_frac = 0.05;
};

/// Per-cell point counts over the bbox-fit grid.
MatX count_grid(const Points3& points, const Sim2& world_to_grid,
                Eigen::Index height, Eigen::Index width);

/// Uniform-scale, centered map of the margin-expanded (x, z) bbox onto the grid.
Sim2 fit_world_to_grid(const Points3& points, Eigen::Index height,
                       Eigen::Index width, double margin_frac);

/// Orthographic projection onto xz, D = (count / max count)^gamma.
DensityMap rasterize(const Points3& points, const RasterOptions& opts = {});

Vec2 camera_to_grid(const DensityMap& dm, const CameraPose& pose);

/// Floorplan raster; channels are 1 (gray) or 3 (RGB), values in [0, 1].
struct Floorplan {
  std::vector<MatX> channels;

  Eigen::Index height() const { return channels.empty() ? 0 : channels.front().rows(); }
  Eigen::Index width() const { return channels.empty() ? 0 : channels.front().cols(); }
  double diagonal() const { return std::hypot(double(height()), double(width())); }
  MatX gray() const;
  /// 1 - gray: drawn lines bright, like the density map.
  MatX ink() const { return (1.0 - gray().array()).matrix(); }
};

}  // namespace planealign
