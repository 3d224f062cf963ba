#pragma once

#include <planealign/io.hpp>
#include <planealign/matching.hpp>
#include <planealign/metrics.hpp>
#include <planealign/synth.hpp>
#include <planealign/train.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace planealign::cli {

using io::json;

enum ExitCode : int { kOk = 0, kConfig = 2, kInput = 3, kNoConsensus = 4, kInternal = 5 };

/// Maps a library error code to the process exit status.
int exit_code_for(ErrorCode code);

struct SynthConfig {
  int n_rooms = 0;  // 0: 2 + seed % 5, so a seed range mixes layout sizes
  Eigen::Index size = 256;
  synth::SceneParams scene;
};

struct BackendConfig {
  std::string kind = "oracle";  // oracle | encoder | files
  int patch = 16;               // oracle patch size
};

/// Everything a run can be configured with. Loaded from one JSON file;
/// command-line flags override individual fields.
struct RunConfig {
  std::optional<std::uint64_t> seed;  // falls back to PLANEALIGN_SEED, then 1
  int jobs = 1;

  FilterParams filter;
  RasterOptions raster{0, 0, 0.5, 0.05};
  std::size_t queries = 1024;
  double tau = 0.07;
  RansacParams ransac;
  std::size_t chunk_size = 150;
  BackendConfig backend;

  LossConfig loss;
  TrainConfig train;
  std::size_t corpus_samples = 64;
  EncoderConfig encoder;
  CorpusParams corpus;

  SynthConfig synth;
  std::map<std::string, std::string> paths;

  std::uint64_t resolved_seed() const;
  LocalizeParams localize_params() const;
  synth::SceneParams scene_params(std::uint64_t seed) const;
};

/// Throws ConfigError on unknown keys, wrong types or bad values.
RunConfig config_from_json(const json& j);
json to_json(const RunConfig& c);
RunConfig load_config(const io::fs::path& path);

/// Runs fn(0) .. fn(n - 1) on up to `jobs` threads. Results must be written
/// by index, so output does not depend on scheduling. Rethrows the first
/// exception by index.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------
// Synthetic evaluation shared by `sweep` and the acceptance suite.

synth::SynthScene corpus_scene(const RunConfig& cfg, std::uint64_t seed);

struct SceneOutcome {
  bool localized = false;
  std::string failure;              // "stage: message" when not localized
  std::optional<ErrorCode> error;
  std::vector<PoseEval> cameras;
  Sim2 estimate;                    // density -> floorplan
  Sim2 truth;
  double theta_err_deg = 0.0, scale_rel_err = 0.0, translation_err_px = 0.0;

  /// Every camera within both thresholds.
  bool success(double yaw_deg = 5.0, double pos_frac = 0.05) const;
};

/// Localizes `ss` (optionally only its first `views` images) with oracle
/// features and scores it against the synthetic truth.
SceneOutcome evaluate_scene(const synth::SynthScene& ss, const LocalizeParams& lp, int patch,
                            std::optional<std::size_t> views = std::nullopt);

struct SweepRow {
  double rho_conf = 0.0, rho_xz = 0.0, gamma = 0.0;
  std::size_t scenes = 0, successes = 0;
  double rate() const { return scenes ? double(successes) / double(scenes) : 0.0; }
};

inline const std::vector<double> kSweepRhoConf{30, 45, 60, 75, 90};
inline const std::vector<double> kSweepRhoXz{0, 2.5, 5};
inline const std::vector<double> kSweepGamma{0.25, 0.5, 0.75, 1.0};

/// Density hyperparameter grid over scenes first_seed .. first_seed + scenes - 1.
std::vector<SweepRow> run_sweep(const RunConfig& cfg, std::size_t scenes, std::uint64_t first_seed);

// ---------------------------------------------------------------------------

/// Entry point: args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace planealign::cli
