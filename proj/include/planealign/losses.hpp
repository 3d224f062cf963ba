#pragma once

#include <planealign/autodiff.hpp>
#include <planealign/features.hpp>
#include <planealign/rng.hpp>

#include <array>
#include <optional>
#include <vector>

namespace planealign {

struct LossConfig {
  double lambda_feat = 1.0;
  double lambda_regr = 50.0;
  double lambda_topo = 10.0;
  double lambda_geo = 10.0;
  double tau = 0.07;
  double huber_regr = 1.0;     // patch units
  double huber_struct = 0.1;   // cos/sin and log-ratio residuals
  int n_triplets = 0;          // 0: one per correspondence
  int n_pairs = 0;

  void validate() const;
};

/// Soft-argmax output: predicted coordinates and max softmax probability.
struct SoftMatchResult {
  Points2 coords;  // Q x 2
  VecX weights;    // Q
};

/// Differentiable soft-argmax nodes: coords (Q x 2) and weights (Q x 1).
struct SoftMatchVars {
  ad::Var coords;
  ad::Var weights;
};

// Tape forms. Feature rows must already be unit length.

/// Symmetric InfoNCE over the Q x Q cosine similarity matrix.
ad::Var loss_feat(const ad::Var& fd, const ad::Var& ff, double tau);

/// Softmax over fd * floorplan_unit^T / tau, expectation over `centroids`.
SoftMatchVars soft_match(const ad::Var& fd, const ad::Var& floorplan_unit,
                         const MatX& centroids, double tau);

/// sum w_i H(|pred_i - gt_i|) / sum w_i.
ad::Var loss_regr(const SoftMatchVars& pred, const MatX& gt, double delta);

using Triplet = std::array<Eigen::Index, 3>;
using Pair = std::array<Eigen::Index, 2>;

/// Uniformly drawn index triplets whose source points are pairwise apart.
std::vector<Triplet> sample_triplets(const MatX& src, int n, Rng& rng,
                                     double eps = kDegenerateEps);
std::vector<Pair> sample_pairs(const MatX& src, int n, Rng& rng,
                               double eps = kDegenerateEps);

/// Weighted Huber penalty on cos/sin differences of the interior angle at
/// vertex i of (i, j, k) between predicted and source triangles.
ad::Var loss_topo(const SoftMatchVars& pred, const MatX& src,
                  const std::vector<Triplet>& triplets, double delta);

/// Weighted Huber penalty on log-distance-ratio deviations from their
/// (stop-gradient) weighted mean. `mean` replaces that mean when given, which
/// lets finite differences hold it fixed.
ad::Var loss_geo(const SoftMatchVars& pred, const MatX& src,
                 const std::vector<Pair>& pairs, double delta,
                 std::optional<double> mean = std::nullopt);

/// The weighted mean log-ratio that loss_geo subtracts.
double geo_mean_log_ratio(const SoftMatchVars& pred, const MatX& src,
                          const std::vector<Pair>& pairs);

struct LossParts {
  ad::Var feat, regr, topo, geo;
};

enum class CurriculumStage { FeatOnly, FeatRegr, Full };

/// FeatOnly below 0.10, FeatRegr in [0.10, 0.20), Full afterwards.
CurriculumStage curriculum_stage(double step_frac);

/// Weighted sum of the terms active at `step_frac`; gated terms are left
/// out of the graph entirely.
ad::Var total_loss(double step_frac, const LossParts& parts, const LossConfig& cfg);

// Value-only forms.

double loss_feat(const MatX& fd, const MatX& ff, double tau);
SoftMatchResult soft_match(const MatX& fd, const FeatureMap& floorplan, double tau);
double loss_regr(const SoftMatchResult& pred, const Points2& gt, double delta);
double loss_topo(const SoftMatchResult& pred, const Points2& src, int n_triplets,
                 double delta, Rng& rng);
double loss_geo(const SoftMatchResult& pred, const Points2& src, int n_pairs,
                double delta, Rng& rng);

}  // namespace planealign
