#pragma once

#include <planealign/densmap.hpp>
#include <planealign/features.hpp>
#include <planealign/geom.hpp>
#include <planealign/scene.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace planealign {

struct Correspondence {
  Vec2 pd;  // density-map pixels
  Vec2 pf;  // floorplan pixels
  double w = 0.0;
  bool reliable = false;
  bool inlier = false;
};

using CorrespondenceSet = std::vector<Correspondence>;

struct RansacParams {
  int iterations = 2000;
  double inlier_threshold = 0.0;  // pixels; <= 0 means 2% of the floorplan diagonal
  double threshold_diag_frac = 0.02;
  int min_inliers = 6;
  std::uint64_t seed = 0;
};

struct RansacResult {
  Sim2 model;
  std::vector<bool> inliers;  // in input order
  std::size_t inlier_count = 0;
  double inlier_residual = 0.0;
  bool refit_kept = false;
};

/// Query points drawn from the categorical distribution over cells
/// proportional to the density, jittered uniformly inside the cell.
Points2 sample_queries(const DensityMap& dm, std::size_t n, std::uint64_t seed);

/// Top half by confidence (ties: lower index), then a patch-level mutual
/// nearest-neighbour check against the full density feature grid.
CorrespondenceSet select_reliable(const CorrespondenceSet& cs, const FeatureMap& feat_d,
                                  const FeatureMap& feat_f);

/// Two-point hypotheses, max-consensus selection, least-squares refit.
/// Throws NoConsensusError.
RansacResult ransac_sim2(const CorrespondenceSet& cs, const RansacParams& params);

struct LocalizeParams {
  FilterParams filter;
  RasterOptions raster{0, 0, 0.5, 0.05};  // zero size: match the floorplan
  std::size_t queries = 1024;
  double tau = 0.07;
  RansacParams ransac;
  std::size_t chunk_size = 150;
  std::uint64_t seed = 0;
};

struct StageReport {
  std::map<std::string, double> timings_ms;
  std::size_t queries = 0;
  std::size_t reliable = 0;
  std::size_t inliers = 0;
  double inlier_ratio = 0.0;
  std::string failed_stage;  // empty on success
  std::string error;
  std::optional<ErrorCode> error_code;
  std::string mnn_scope = "full_patch_grid";
};

struct ChunkResult {
  std::size_t first_image = 0;
  std::size_t image_count = 0;
  bool ok = false;
  Mat3 gravity_rotation = Mat3::Identity();
  DensityMap density;
  Sim2 density_to_floorplan;
  Sim2 world_to_floorplan;  // gravity-aligned (x, z) -> floorplan pixels
  AlignedScene aligned;     // floorplan-pixel units
  CorrespondenceSet correspondences;
  StageReport report;
};

struct LocalizeResult {
  std::vector<ChunkResult> chunks;
  bool all_ok() const;
};

class StageError : public Error {
 public:
  StageError(ErrorCode code, const std::string& stage, const std::string& what)
      : Error(code, stage + ": " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Features through RANSAC on an existing density map: query sampling, soft
/// matching, reliability filtering and model fit. Every correspondence is
/// returned with its reliable/inlier flags; the fitted density -> floorplan
/// map goes to `model` when given. Throws StageError.
CorrespondenceSet match_density(const DensityMap& density, const Floorplan& floorplan,
                                const FeatureBackend& backend, const Mat3& gravity_rotation,
                                const LocalizeParams& params, StageReport& report,
                                Sim2* model = nullptr);

/// Full pipeline per chunk: gravity alignment, filtering, rasterization,
/// feature extraction, query sampling, soft matching, reliability filtering,
/// RANSAC and scene alignment. Scenes with more than chunk_size images are
/// split into ceil(N / chunk_size) near-equal chunks aligned independently.
/// Failed chunks are reported; throws StageError only when every chunk failed.
LocalizeResult localize(const ReconstructedScene& scene, const Floorplan& floorplan,
                        const FeatureBackend& backend, const LocalizeParams& params = {});

/// Single-chunk core; throws StageError on the first failing stage.
ChunkResult localize_chunk(const ReconstructedScene& scene, const Floorplan& floorplan,
                           const FeatureBackend& backend, const LocalizeParams& params);

}  // namespace planealign
