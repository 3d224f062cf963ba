#include <planealign/scene.hpp>

namespace planealign {

std::size_t ReconstructedScene::point_count() const {
  std::size_t n = 0;
  for (const auto& img : images) n += static_cast<std::size_t>(img.points.rows());
  return n;
}

void ReconstructedScene::validate() const {
  for (const auto& img : images) {
    if (img.points.rows() != img.confidence.size())
      throw Error(ErrorCode::InvalidArgument,
                  "image " + std::to_string(img.pose.image_id) +
                      ": point and confidence counts differ");
    if (!is_rotation(img.pose.rotation, 1e-6))
      throw Error(ErrorCode::InvalidArgument,
                  "image " + std::to_string(img.pose.image_id) +
                      ": pose rotation is not orthonormal");
  }
}

Points3 ReconstructedScene::all_points() const {
  Points3 out(static_cast<Eigen::Index>(point_count()), 3);
  Eigen::Index row = 0;
  for (const auto& img : images) {
    out.middleRows(row, img.points.rows()) = img.points;
    row += img.points.rows();
  }
  return out;
}

VecX ReconstructedScene::all_confidences() const {
  VecX out(static_cast<Eigen::Index>(point_count()));
  Eigen::Index row = 0;
  for (const auto& img : images) {
    out.segment(row, img.confidence.size()) = img.confidence;
    row += img.confidence.size();
  }
  return out;
}

std::vector<CameraPose> ReconstructedScene::poses() const {
  std::vector<CameraPose> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(img.pose);
  return out;
}

ReconstructedScene ReconstructedScene::slice(std::size_t first,
                                             std::size_t count) const {
  ReconstructedScene out;
  out.frame = frame;
  const std::size_t end = std::min(images.size(), first + count);
  for (std::size_t i = first; i < end; ++i) out.images.push_back(images[i]);
  return out;
}

GravityAlignment gravity_align(const ReconstructedScene& scene) {
  if (scene.images.empty()) throw Error(ErrorCode::EmptyInput, "scene has no images");
  scene.validate();
  GravityAlignment out;
  if (scene.frame == Frame::GravityAligned) {
    out.scene = scene;
    return out;
  }

  std::vector<Vec3> votes;
  votes.reserve(scene.images.size());
  for (const auto& img : scene.images)
    votes.push_back((img.pose.rotation * img.gravity).normalized());
  out.medoid = medoid_index(votes);
  out.rotation = gravity_rotation(votes[out.medoid]);

  out.scene.frame = Frame::GravityAligned;
  out.scene.images.reserve(scene.images.size());
  for (const auto& img : scene.images) {
    ImageData aligned;
    const Mat3 r = out.rotation * img.pose.rotation;
    const Vec3 c = out.rotation * img.pose.center;
    aligned.points = (img.points * r.transpose()).rowwise() + c.transpose();
    aligned.confidence = img.confidence;
    aligned.pose = {r, c, img.pose.image_id};
    aligned.gravity = img.gravity;
    out.scene.images.push_back(std::move(aligned));
  }
  return out;
}

}  // namespace planealign
