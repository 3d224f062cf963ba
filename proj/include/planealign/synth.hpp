#pragma once

#include <planealign/densmap.hpp>
#include <planealign/geom.hpp>
#include <planealign/scene.hpp>

#include <Eigen/Geometry>

#include <cstdint>
#include <vector>

namespace planealign::synth {

struct Segment {
  Vec2 a, b;
};

using Box = Eigen::AlignedBox2d;

/// Manhattan floorplan: walls are dark (0) on a white (1) background.
struct Layout {
  Eigen::Index size = 0;
  MatX raster;                  // size x size
  std::vector<Segment> walls;   // wall center lines in floorplan pixels, door gaps removed
  std::vector<Box> rooms;

  Floorplan floorplan() const { return Floorplan{{raster}}; }
  /// True when every room is reachable from the first through free space.
  bool connected() const;
  std::size_t wall_pixel_count() const;
  std::uint64_t hash() const;
};

/// Axis-aligned rooms from recursive splits, one doorway per split wall.
Layout gen_layout(std::uint64_t seed, int n_rooms, Eigen::Index size);

enum class PointKind : std::uint8_t { Wall, Floor, Ceiling, Outlier };

struct SceneParams {
  std::uint64_t seed = 1;
  int n_images = 12;
  double noise_sigma_px = 0.0;     // isotropic, in floorplan pixels
  double outlier_frac = 0.0;
  double gravity_jitter_deg = 0.0;
  double gravity_outlier_frac = 0.0;  // votes replaced by random directions
  int points_per_image = 1500;
  double wall_height = 2.8;        // metres
  double fov_deg = 120.0;
};

/// Ground truth relating the reconstruction to the floorplan.
struct Truth {
  Sim2 world_to_floorplan;        // true (x, z) in metres -> floorplan pixels
  double recon_scale = 1.0;       // reconstruction = scale * R * true + t
  Mat3 recon_rotation = Mat3::Identity();
  Vec3 recon_translation = Vec3::Zero();
  std::vector<CameraPose> true_poses;  // true metric frame
  Points3 anchor_points;          // true wall points used to fit planar truth

  /// Best planar similarity from a gravity-aligned frame (rotation r_g
  /// applied to the reconstruction) to floorplan pixels.
  Sim2 aligned_to_floorplan(const Mat3& gravity_rotation) const;
  /// Density-grid pixels -> floorplan pixels for a given density map.
  Sim2 density_to_floorplan(const DensityMap& dm, const Mat3& gravity_rotation) const;

  /// Camera positions (floorplan pixels) and headings in the floorplan frame.
  Points2 camera_positions() const;
  VecX camera_yaws() const;
};

struct SynthScene {
  Layout layout;
  ReconstructedScene scene;  // Frame::Camera
  Truth truth;
  std::vector<PointKind> labels;  // per point, in ReconstructedScene::all_points order
};

SynthScene gen_scene(const Layout& layout, const SceneParams& params);

/// Convenience: layout + scene from one seed.
SynthScene make_scene(std::uint64_t seed, int n_rooms, Eigen::Index size,
                      const SceneParams& params);

}  // namespace planealign::synth
