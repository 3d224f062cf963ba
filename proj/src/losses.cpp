#include <planealign/losses.hpp>

#include <cmath>

namespace planealign {

void LossConfig::validate() const {
  if (lambda_feat < 0 || lambda_regr < 0 || lambda_topo < 0 || lambda_geo < 0)
    throw Error(ErrorCode::InvalidArgument, "loss coefficients must be nonnegative");
  if (!(tau > 0.0) || !(huber_regr > 0.0) || !(huber_struct > 0.0))
    throw Error(ErrorCode::InvalidArgument, "tau and huber deltas must be positive");
  if (n_triplets < 0 || n_pairs < 0)
    throw Error(ErrorCode::InvalidArgument, "sample budgets must be nonnegative");
}

namespace {

constexpr double kNormEps = 1e-12;

ad::Var mean_diag_log_softmax(const ad::Var& logits) {
  return ad::sum(ad::diag(ad::log_softmax_rows(logits)));
}

/// sum(w * v) / sum(w) for column nodes.
ad::Var weighted_mean(const ad::Var& w, const ad::Var& v) {
  return ad::div(ad::sum(ad::mul(w, v)), ad::sum(w));
}

}  // namespace

ad::Var loss_feat(const ad::Var& fd, const ad::Var& ff, double tau) {
  const Eigen::Index q = fd.rows();
  if (q < 2 || ff.rows() != q) throw Error(ErrorCode::TooFewPairs, "InfoNCE needs Q >= 2 pairs");
  const ad::Var s = ad::scale(ad::matmul_nt(fd, ff), 1.0 / tau);
  const ad::Var rows = mean_diag_log_softmax(s);
  const ad::Var cols = mean_diag_log_softmax(ad::transpose(s));
  return ad::scale(ad::add(rows, cols), -1.0 / (2.0 * double(q)));
}

SoftMatchVars soft_match(const ad::Var& fd, const ad::Var& floorplan_unit,
                         const MatX& centroids, double tau) {
  const ad::Var logits = ad::scale(ad::matmul_nt(fd, floorplan_unit), 1.0 / tau);
  const ad::Var prob = ad::softmax_rows(logits);
  const ad::Var coords = ad::matmul(prob, fd.tape().constant(centroids));
  return {coords, ad::row_max(prob)};
}

ad::Var loss_regr(const SoftMatchVars& pred, const MatX& gt, double delta) {
  if (!(pred.weights.value().sum() > 0.0))
    throw Error(ErrorCode::DegenerateWeights, "all confidence weights are zero");
  ad::Tape& t = pred.coords.tape();
  const ad::Var err = ad::row_norm(ad::sub(pred.coords, t.constant(gt)));
  return weighted_mean(pred.weights, ad::huber(err, delta));
}

std::vector<Triplet> sample_triplets(const MatX& src, int n, Rng& rng, double eps) {
  const auto q = std::uint64_t(src.rows());
  if (q < 3) throw Error(ErrorCode::TooFewPairs, "triplets need Q >= 3");
  auto apart = [&](Eigen::Index a, Eigen::Index b) {
    return (src.row(a) - src.row(b)).norm() > eps;
  };
  std::vector<Triplet> out;
  out.reserve(std::size_t(n));
  const std::size_t max_draws = std::size_t(n) * 100 + 100;
  for (std::size_t draws = 0; out.size() < std::size_t(n) && draws < max_draws; ++draws) {
    const auto i = Eigen::Index(rng.below(q));
    const auto j = Eigen::Index(rng.below(q));
    const auto k = Eigen::Index(rng.below(q));
    if (i == j || j == k || i == k) continue;
    if (!apart(i, j) || !apart(j, k) || !apart(i, k)) continue;
    out.push_back({i, j, k});
  }
  if (out.empty() && n > 0)
    throw Error(ErrorCode::DegenerateSample, "no non-degenerate triplet found");
  return out;
}

std::vector<Pair> sample_pairs(const MatX& src, int n, Rng& rng, double eps) {
  const auto q = std::uint64_t(src.rows());
  if (q < 2) throw Error(ErrorCode::TooFewPairs, "pairs need Q >= 2");
  std::vector<Pair> out;
  out.reserve(std::size_t(n));
  const std::size_t max_draws = std::size_t(n) * 100 + 100;
  for (std::size_t draws = 0; out.size() < std::size_t(n) && draws < max_draws; ++draws) {
    const auto i = Eigen::Index(rng.below(q));
    const auto j = Eigen::Index(rng.below(q));
    if (i == j || (src.row(i) - src.row(j)).norm() <= eps) continue;
    out.push_back({i, j});
  }
  if (out.empty() && n > 0)
    throw Error(ErrorCode::DegenerateSample, "no non-degenerate pair found");
  return out;
}

namespace {

std::vector<Eigen::Index> column(const auto& tuples, std::size_t c) {
  std::vector<Eigen::Index> out;
  out.reserve(tuples.size());
  for (const auto& t : tuples) out.push_back(t[c]);
  return out;
}

/// (cos, sin) of the angle at vertex a between edges a->b and a->c.
std::pair<ad::Var, ad::Var> vertex_angle(const ad::Var& a, const ad::Var& b, const ad::Var& c) {
  const ad::Var u = ad::sub(b, a);
  const ad::Var v = ad::sub(c, a);
  const ad::Var denom = ad::add_scalar(ad::mul(ad::row_norm(u), ad::row_norm(v)), kNormEps);
  return {ad::div(ad::row_dot(u, v), denom), ad::div(ad::cross2(u, v), denom)};
}

}  // namespace

ad::Var loss_topo(const SoftMatchVars& pred, const MatX& src,
                  const std::vector<Triplet>& triplets, double delta) {
  if (src.rows() < 3) throw Error(ErrorCode::TooFewPairs, "topology loss needs Q >= 3");
  if (triplets.empty()) throw Error(ErrorCode::DegenerateSample, "no triplets");
  ad::Tape& t = pred.coords.tape();
  const auto ii = column(triplets, 0), jj = column(triplets, 1), kk = column(triplets, 2);
  const ad::Var s = t.constant(src);

  const auto [cos_f, sin_f] = vertex_angle(ad::gather_rows(pred.coords, ii),
                                           ad::gather_rows(pred.coords, jj),
                                           ad::gather_rows(pred.coords, kk));
  const auto [cos_d, sin_d] = vertex_angle(ad::gather_rows(s, ii), ad::gather_rows(s, jj),
                                           ad::gather_rows(s, kk));
  const ad::Var penalty = ad::add(ad::huber(ad::sub(cos_f, cos_d), delta),
                                  ad::huber(ad::sub(sin_f, sin_d), delta));
  const ad::Var w = ad::mul(ad::mul(ad::gather_rows(pred.weights, ii),
                                    ad::gather_rows(pred.weights, jj)),
                            ad::gather_rows(pred.weights, kk));
  if (!(w.value().sum() > 0.0))
    throw Error(ErrorCode::DegenerateWeights, "all triplet weights are zero");
  return weighted_mean(w, penalty);
}

namespace {

struct LogRatios {
  ad::Var delta;   // pairs x 1
  ad::Var weight;  // pairs x 1
};

LogRatios log_ratios(const SoftMatchVars& pred, const MatX& src, const std::vector<Pair>& pairs) {
  if (src.rows() < 2) throw Error(ErrorCode::TooFewPairs, "geometry loss needs Q >= 2");
  if (pairs.empty()) throw Error(ErrorCode::DegenerateSample, "no pairs");
  ad::Tape& t = pred.coords.tape();
  const auto ii = column(pairs, 0), jj = column(pairs, 1);

  MatX src_dist(Eigen::Index(pairs.size()), 1);
  for (std::size_t k = 0; k < pairs.size(); ++k)
    src_dist(Eigen::Index(k), 0) = (src.row(pairs[k][0]) - src.row(pairs[k][1])).norm();

  const ad::Var pred_dist = ad::add_scalar(
      ad::row_norm(ad::sub(ad::gather_rows(pred.coords, ii), ad::gather_rows(pred.coords, jj))),
      kNormEps);
  const ad::Var w = ad::mul(ad::gather_rows(pred.weights, ii), ad::gather_rows(pred.weights, jj));
  if (!(w.value().sum() > 0.0))
    throw Error(ErrorCode::DegenerateWeights, "all pair weights are zero");
  return {ad::sub(ad::log(pred_dist), t.constant(src_dist.array().log().matrix())), w};
}

double weighted_mean_value(const LogRatios& r) {
  return (r.weight.value().array() * r.delta.value().array()).sum() / r.weight.value().sum();
}

}  // namespace

double geo_mean_log_ratio(const SoftMatchVars& pred, const MatX& src,
                          const std::vector<Pair>& pairs) {
  return weighted_mean_value(log_ratios(pred, src, pairs));
}

ad::Var loss_geo(const SoftMatchVars& pred, const MatX& src, const std::vector<Pair>& pairs,
                 double delta, std::optional<double> mean) {
  const LogRatios r = log_ratios(pred, src, pairs);
  const double m = mean ? *mean : weighted_mean_value(r);
  const ad::Var centered = ad::add_scalar(r.delta, -m);  // mean enters as a constant
  return weighted_mean(r.weight, ad::huber(centered, delta));
}

CurriculumStage curriculum_stage(double step_frac) {
  if (step_frac < 0.10) return CurriculumStage::FeatOnly;
  if (step_frac < 0.20) return CurriculumStage::FeatRegr;
  return CurriculumStage::Full;
}

ad::Var total_loss(double step_frac, const LossParts& parts, const LossConfig& cfg) {
  ad::Var total = ad::scale(parts.feat, cfg.lambda_feat);
  const CurriculumStage stage = curriculum_stage(step_frac);
  if (stage != CurriculumStage::FeatOnly)
    total = ad::add(total, ad::scale(parts.regr, cfg.lambda_regr));
  if (stage == CurriculumStage::Full) {
    total = ad::add(total, ad::scale(parts.topo, cfg.lambda_topo));
    total = ad::add(total, ad::scale(parts.geo, cfg.lambda_geo));
  }
  return total;
}

// ---------------------------------------------------------------------------

double loss_feat(const MatX& fd, const MatX& ff, double tau) {
  ad::Tape t;
  return loss_feat(t.constant(fd), t.constant(ff), tau).item();
}

SoftMatchResult soft_match(const MatX& fd, const FeatureMap& floorplan, double tau) {
  ad::Tape t;
  const SoftMatchVars v = soft_match(t.constant(fd), t.constant(normalized_rows(floorplan.data)),
                                     floorplan.centroids(), tau);
  return {Points2(v.coords.value()), VecX(v.weights.value().col(0))};
}

namespace {

SoftMatchVars constant_vars(ad::Tape& t, const SoftMatchResult& pred) {
  return {t.constant(MatX(pred.coords)), t.constant(MatX(pred.weights))};
}

}  // namespace

double loss_regr(const SoftMatchResult& pred, const Points2& gt, double delta) {
  ad::Tape t;
  return loss_regr(constant_vars(t, pred), MatX(gt), delta).item();
}

double loss_topo(const SoftMatchResult& pred, const Points2& src, int n_triplets,
                 double delta, Rng& rng) {
  ad::Tape t;
  const MatX s(src);
  return loss_topo(constant_vars(t, pred), s, sample_triplets(s, n_triplets, rng), delta).item();
}

double loss_geo(const SoftMatchResult& pred, const Points2& src, int n_pairs, double delta,
                Rng& rng) {
  ad::Tape t;
  const MatX s(src);
  return loss_geo(constant_vars(t, pred), s, sample_pairs(s, n_pairs, rng), delta).item();
}

}  // namespace planealign
