#pragma once

#include <planealign/features.hpp>
#include <planealign/losses.hpp>
#include <planealign/synth.hpp>

#include <cstdint>
#include <functional>
#include <vector>

namespace planealign {

/// One density/floorplan raster pair with its ground-truth alignment.
struct TrainingSample {
  MatX density;    // density map grid, walls bright
  MatX floorplan;  // floorplan ink, walls bright
  Sim2 density_to_floorplan;
};

struct CorpusParams {
  Eigen::Index size = 128;  // both rasters are size x size
  int n_rooms_min = 2;
  int n_rooms_max = 5;
  synth::SceneParams scene;  // seed is overridden per sample
  FilterParams filter;
  // Render each density map in the floorplan frame up to a random similarity
  // of at most these magnitudes, instead of the bbox-fit gravity frame.
  bool near_aligned = true;
  double max_rotation_deg = 15.0;
  double max_log_scale = 0.1;
  double max_shift_frac = 0.05;
};

/// Samples from seeds seed, seed + 1, ...
std::vector<TrainingSample> make_corpus(std::size_t n, std::uint64_t seed,
                                        const CorpusParams& params = {});

/// Ground-truth correspondences: density queries and their floorplan images.
struct Batch {
  Points2 pd;
  Points2 pf;
};

/// Q density-weighted queries whose true floorplan location lies inside the floorplan.
Batch sample_batch(const TrainingSample& sample, std::size_t q, std::uint64_t seed);

struct TrainConfig {
  LossConfig loss;
  int steps = 500;
  std::size_t queries = 256;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::uint64_t seed = 7;

  void validate() const;
};

struct StepLog {
  int step = 0;
  double frac = 0.0;
  double feat = 0.0, regr = 0.0, topo = 0.0, geo = 0.0, total = 0.0;
  double grad_norm = 0.0;  // before clipping
};

/// Loss graph for one batch. Coordinates enter the regression and
/// structural terms in patch units.
struct LossGraph {
  LossParts parts;
  ad::Var total;
  double geo_mean = 0.0;  // the stop-gradient mean log-ratio used by parts.geo
};

/// `geo_mean` pins the mean log-ratio of the geometry term (see loss_geo).
LossGraph build_losses(const ToyEncoder& encoder, const std::vector<ad::Var>& params,
                       const TrainingSample& sample, const Batch& batch, double step_frac,
                       const LossConfig& cfg, Rng& rng,
                       std::optional<double> geo_mean = std::nullopt);

/// Soft-argmax floorplan predictions (pixels) for density queries.
SoftMatchResult predict(const ToyEncoder& encoder, const TrainingSample& sample,
                        const Points2& pd, double tau);

class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(int step, ToyEncoder last_good)
      : Error(ErrorCode::NonFiniteLoss, "non-finite loss at step " + std::to_string(step)),
        step_(step), last_good_(std::move(last_good)) {}
  int step() const { return step_; }
  const ToyEncoder& last_good() const { return last_good_; }

 private:
  int step_;
  ToyEncoder last_good_;
};

struct TrainResult {
  ToyEncoder encoder;
  std::vector<StepLog> log;
};

/// AdamW with global-norm clipping and the curriculum of total_loss. Each
/// step draws one corpus sample and one batch, both seed-determined.
TrainResult train_toy(const std::vector<TrainingSample>& corpus, const EncoderConfig& enc,
                      const TrainConfig& cfg,
                      const std::function<void(const StepLog&)>& on_step = {});

}  // namespace planealign
