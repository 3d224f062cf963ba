#pragma once

#include <planealign/densmap.hpp>
#include <planealign/features.hpp>
#include <planealign/matching.hpp>
#include <planealign/metrics.hpp>
#include <planealign/scene.hpp>
#include <planealign/train.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

/// File formats used by the command-line tool. Missing or unreadable files
/// raise IoError, malformed contents ParseError.
namespace planealign::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& j);
/// Appends one compact line.
void append_json_line(const fs::path& path, const json& j);

// ---------------------------------------------------------------------------
// Point clouds: ASCII PLY (x, y, z, confidence, image_id per vertex) plus a
// sidecar with frame, poses and gravity votes:
//   {"frame": "camera" | "gravity_aligned",
//    "images": [{"image_id": 0, "rotation": [9 row-major], "center": [3],
//                "gravity": [3]}, ...]}

struct PlyCloud {
  Points3 points;
  VecX confidence;               // 1 when the file has no confidence property
  std::vector<int> image_id;     // 0 when absent
};

void write_ply(const fs::path& path, const PlyCloud& cloud);
PlyCloud read_ply(const fs::path& path);

json scene_sidecar(const ReconstructedScene& scene);
void save_scene(const ReconstructedScene& scene, const fs::path& ply, const fs::path& sidecar);
/// Vertices are assigned to the sidecar image with the same id, in file order.
ReconstructedScene load_scene(const fs::path& ply, const fs::path& sidecar);

// ---------------------------------------------------------------------------
// Rasters. Values are in [0, 1]; row 0 is the top of the image.

/// PGM (P2/P5), PPM (P3/P6) or PNG, detected from the file contents.
Floorplan read_image(const fs::path& path);
/// Binary PGM; maxval 255 or 65535.
void write_pgm(const fs::path& path, const MatX& gray, int maxval = 255);
void write_png(const fs::path& path, const Floorplan& image);

/// 16-bit PGM plus {"gamma", "world_to_grid", "height", "width"}.
void save_density(const DensityMap& dm, const fs::path& pgm, const fs::path& sidecar);
DensityMap load_density(const fs::path& pgm, const fs::path& sidecar);

// ---------------------------------------------------------------------------
// JSON documents

json to_json(const Sim2& m);  // {"s", "theta_rad", "t": [x, y]}
Sim2 sim2_from_json(const json& j);

json to_json(const CorrespondenceSet& cs);
CorrespondenceSet correspondences_from_json(const json& j);

json to_json(const StageReport& r);
json to_json(const ChunkResult& c);  // transforms, report and aligned poses
json to_json(const LocalizeResult& r);

json to_json(const StepLog& s);

// Synthetic ground truth: world -> floorplan map, reconstruction similarity,
// true camera poses and the wall anchors used for the planar fit.
json to_json(const synth::Truth& t);
synth::Truth truth_from_json(const json& j);

json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const json& j);
void save_encoder(const fs::path& path, const ToyEncoder& enc);
ToyEncoder load_encoder(const fs::path& path);

/// Recalls keyed by threshold, as in the localization tables.
json pose_metrics_json(std::span<const PoseEval> evals);
json pck_json(const PckResult& r);

// ---------------------------------------------------------------------------

/// Floorplan, density contour mapped into the floorplan, correspondence
/// segments (inliers green, others red) and camera glyphs.
void write_svg(const fs::path& path, const Floorplan& floorplan, const ChunkResult& chunk,
               double contour_level = 0.5);

}  // namespace planealign::io
