#pragma once

#include <planealign/geom.hpp>

#include <vector>

namespace planealign {

enum class Frame {
  Camera,          // points per image in that camera's frame
  GravityAligned,  // points in a shared frame whose +y is up
};

struct ImageData {
  CameraPose pose;
  Vec3 gravity = Vec3::UnitY();  // up direction, expressed in the camera frame
  Points3 points;
  VecX confidence;
};

/// Reconstruction input: per-image points with confidences, camera poses and
/// gravity votes.
struct ReconstructedScene {
  Frame frame = Frame::Camera;
  std::vector<ImageData> images;

  std::size_t point_count() const;
  /// Throws InvalidArgument when a point/confidence count mismatches.
  void validate() const;
  Points3 all_points() const;
  VecX all_confidences() const;
  std::vector<CameraPose> poses() const;
  /// Subset of images [first, first + count).
  ReconstructedScene slice(std::size_t first, std::size_t count) const;
};

struct GravityAlignment {
  ReconstructedScene scene;     // frame == GravityAligned
  Mat3 rotation = Mat3::Identity();  // reference frame -> aligned frame
  std::size_t medoid = 0;
};

/// Moves points into the reference frame, takes the medoid of the per-image
/// gravity votes and rotates it onto +y. Scenes that are already aligned are
/// returned unchanged with an identity rotation.
GravityAlignment gravity_align(const ReconstructedScene& scene);

}  // namespace planealign
