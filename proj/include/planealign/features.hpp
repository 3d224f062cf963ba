#pragma once

#include <planealign/autodiff.hpp>
#include <planealign/densmap.hpp>
#include <planealign/geom.hpp>

#include <Eigen/SparseCore>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace planealign {

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Patch-grid features. Row r * grid_w + c of `data` holds cell (r, c).
struct FeatureMap {
  MatX data;  // (grid_h * grid_w) x C
  int patch = 16;
  Eigen::Index grid_h = 0;
  Eigen::Index grid_w = 0;
  Eigen::Index source_h = 0;
  Eigen::Index source_w = 0;

  static FeatureMap zeros(Eigen::Index source_h, Eigen::Index source_w, int patch,
                          Eigen::Index channels);

  Eigen::Index channels() const { return data.cols(); }
  Eigen::Index cells() const { return data.rows(); }
  Eigen::Index cell_index(Eigen::Index row, Eigen::Index col) const { return row * grid_w + col; }
  /// Pixel-space center of a cell: ((col + 0.5) * patch, (row + 0.5) * patch).
  Vec2 centroid(Eigen::Index cell) const;
  /// All centroids, one per row, in cell order.
  Points2 centroids() const;
  /// Cell containing pixel p (clamped to the grid).
  Eigen::Index cell_at(const Vec2& p) const;
  void validate() const;
};

struct SampledFeature {
  VecX feature;
  bool degenerate = false;  // interpolated vector had zero norm
};

/// Bilinear weights over the four surrounding patch centers for every query
/// point (x = column, y = row, in source pixels). Throws OutOfBounds for a
/// point outside [0, W] x [0, H].
SparseRows bilinear_weights(const FeatureMap& fm, const Points2& points);

/// Bilinear interpolation at p followed by l2 normalization.
SampledFeature sample_feature(const FeatureMap& fm, const Vec2& p);

/// Interpolated, l2-normalized features for every row of `points`.
MatX sample_features(const FeatureMap& fm, const Points2& points);

/// Row-normalized copy of the full feature grid.
MatX normalized_rows(const MatX& features);

// ---------------------------------------------------------------------------
// Toy encoder

struct EncoderConfig {
  int patch = 16;
  int embed = 16;     // per-patch linear embedding width
  int context = 1;    // neighbourhood radius in cells
  std::vector<int> dilations{1, 2, 4, 8, 16};  // one (2r+1)^2 window of embeddings per dilation
  int hidden = 64;
  int channels = 16;  // output feature width C
};

/// Small patch network: per-patch linear embed, concatenation of the
/// neighbouring embeddings on dilated (2r+1)^2 windows, two tanh layers,
/// linear head. One set of weights serves both modalities; images are
/// single-channel.
class ToyEncoder {
 public:
  // Parameter groups in storage order.
  enum Group { kEmbedW, kEmbedB, kHidden1W, kHidden1B, kHidden2W, kHidden2B, kHeadW, kHeadB };
  static constexpr int kGroups = 8;
  static const char* group_name(int g);

  ToyEncoder() = default;
  ToyEncoder(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  std::vector<MatX>& params() { return params_; }
  const std::vector<MatX>& params() const { return params_; }
  std::size_t parameter_count() const;
  bool all_finite() const;

  FeatureMap encode(const MatX& image) const;

  /// Forward pass recorded on a tape; `param_vars` come from bind().
  ad::Var encode(ad::Tape& tape, const std::vector<ad::Var>& param_vars,
                 const MatX& image) const;
  std::vector<ad::Var> bind(ad::Tape& tape, bool trainable) const;

 private:
  EncoderConfig cfg_;
  std::vector<MatX> params_;
};

/// Patch pixels as rows: (grid_h * grid_w) x (patch * patch), zero padded.
MatX im2patch(const MatX& image, int patch);

// ---------------------------------------------------------------------------
// Oracle features

struct OracleParams {
  double kernel_patches = 2.25;   // similarity falls to exp(-1/2) at this distance
  double anchor_spacing = 1.0;    // lattice pitch, in patches
  double anchor_jitter = 0.25;    // fraction of the pitch
  std::uint64_t seed = 0x0dac1e;
};

/// Features that embed floorplan coordinates through a fixed jittered bank
/// of Gaussian bumps. Floorplan cells embed their own centroid, density
/// cells the centroid pushed through `density_to_floorplan`, so corresponding
/// locations receive identical features.
std::pair<FeatureMap, FeatureMap> oracle_features(
    const Sim2& density_to_floorplan, Eigen::Index density_h, Eigen::Index density_w,
    Eigen::Index floorplan_h, Eigen::Index floorplan_w, int patch,
    const OracleParams& params = {});

// ---------------------------------------------------------------------------
// Backends

struct FeatureContext {
  const DensityMap& density;
  const Floorplan& floorplan;
  Mat3 gravity_rotation = Mat3::Identity();
};

class FeatureBackend {
 public:
  virtual ~FeatureBackend() = default;
  virtual std::string name() const = 0;
  /// Returns (density features, floorplan features).
  virtual std::pair<FeatureMap, FeatureMap> extract(const FeatureContext& ctx) const = 0;
};

class OracleBackend final : public FeatureBackend {
 public:
  /// Ground truth density-grid -> floorplan map for a given density map and
  /// gravity rotation.
  using TruthFn = std::function<Sim2(const DensityMap&, const Mat3&)>;

  OracleBackend(TruthFn truth, int patch, OracleParams params = {})
      : truth_(std::move(truth)), patch_(patch), params_(params) {}

  std::string name() const override { return "oracle"; }
  std::pair<FeatureMap, FeatureMap> extract(const FeatureContext& ctx) const override;

 private:
  TruthFn truth_;
  int patch_;
  OracleParams params_;
};

class EncoderBackend final : public FeatureBackend {
 public:
  explicit EncoderBackend(ToyEncoder encoder) : encoder_(std::move(encoder)) {}
  std::string name() const override { return "encoder"; }
  std::pair<FeatureMap, FeatureMap> extract(const FeatureContext& ctx) const override;

 private:
  ToyEncoder encoder_;
};

/// Precomputed FMAP files, e.g. from an external backbone exporter.
class FileBackend final : public FeatureBackend {
 public:
  FileBackend(std::filesystem::path density, std::filesystem::path floorplan)
      : density_(std::move(density)), floorplan_(std::move(floorplan)) {}
  std::string name() const override { return "files"; }
  std::pair<FeatureMap, FeatureMap> extract(const FeatureContext& ctx) const override;

 private:
  std::filesystem::path density_;
  std::filesystem::path floorplan_;
};

// ---------------------------------------------------------------------------
// FMAP binary format: "FMAP", u16 version, u16 patch, u32 H', u32 W', u32 C,
// then H'*W'*C little-endian float32, row-major, channel-last.

inline constexpr std::uint16_t kFmapVersion = 1;

void write_features(std::ostream& os, const FeatureMap& fm);
FeatureMap read_features(std::istream& is);
void write_features(const std::filesystem::path& path, const FeatureMap& fm);
FeatureMap read_features(const std::filesystem::path& path);

}  // namespace planealign
