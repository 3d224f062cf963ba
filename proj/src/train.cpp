#include <planealign/matching.hpp>
#include <planealign/train.hpp>

#include <cmath>
#include <numbers>

namespace planealign {

std::vector<TrainingSample> make_corpus(std::size_t n, std::uint64_t seed,
                                        const CorpusParams& params) {
  if (params.n_rooms_min < 2 || params.n_rooms_max < params.n_rooms_min)
    throw Error(ErrorCode::InvalidArgument, "bad room count range");
  std::vector<TrainingSample> out;
  out.reserve(n);
  const auto span = std::uint64_t(params.n_rooms_max - params.n_rooms_min + 1);
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint64_t s = seed + k;
    synth::SceneParams sp = params.scene;
    sp.seed = s;
    const int rooms = params.n_rooms_min + int(Rng(s, 0x700).below(span));
    const synth::SynthScene ss = synth::make_scene(s, rooms, params.size, sp);

    const GravityAlignment ga = gravity_align(ss.scene);
    const Points3 kept = filter_points(ga.scene, params.filter);
    if (!params.near_aligned) {
      const DensityMap dm = rasterize(kept, {params.size, params.size, 0.5, 0.05});
      out.push_back({dm.grid, ss.layout.floorplan().ink(),
                     ss.truth.density_to_floorplan(dm, ga.rotation)});
      continue;
    }
    // Floorplan frame, then a small random similarity about the raster centre.
    Rng rng(s, 0x701);
    const double half = double(params.size) / 2.0;
    const double theta = rng.uniform(-1.0, 1.0) * params.max_rotation_deg * std::numbers::pi / 180.0;
    const double scale = std::exp(rng.uniform(-1.0, 1.0) * params.max_log_scale);
    const Vec2 shift(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    const Sim2 about_centre = compose(Sim2(1.0, 0.0, Vec2::Constant(half)),
                                      compose(Sim2(scale, theta, Vec2::Zero()),
                                              Sim2(1.0, 0.0, Vec2::Constant(-half))));
    const Sim2 perturb =
        compose(Sim2(1.0, 0.0, shift * params.max_shift_frac * double(params.size)), about_centre);
    const Sim2 to_grid = compose(perturb, ss.truth.aligned_to_floorplan(ga.rotation));

    Points3 inside(kept.rows(), 3);
    Eigen::Index n_in = 0;
    for (Eigen::Index i = 0; i < kept.rows(); ++i) {
      const Vec2 g = sim2_apply(to_grid, Vec2(kept(i, 0), kept(i, 2)));
      if (g.x() < 0 || g.y() < 0 || g.x() >= double(params.size) || g.y() >= double(params.size))
        continue;
      inside.row(n_in++) << g.x(), kept(i, 1), g.y();
    }
    if (n_in == 0) throw Error(ErrorCode::AllPointsFiltered, "density map falls off the raster");
    const MatX counts = count_grid(inside.topRows(n_in), Sim2(), params.size, params.size);
    out.push_back({(counts.array() / counts.maxCoeff()).sqrt().matrix(),
                   ss.layout.floorplan().ink(), perturb.inverse()});
  }
  return out;
}

Batch sample_batch(const TrainingSample& sample, std::size_t q, std::uint64_t seed) {
  DensityMap dm;
  dm.grid = sample.density;
  const double h = double(sample.floorplan.rows()), w = double(sample.floorplan.cols());
  Batch b{Points2(Eigen::Index(q), 2), Points2(Eigen::Index(q), 2)};
  std::size_t filled = 0;
  // Queries landing off the floorplan are redrawn; a few rounds always suffice
  // unless the truth maps the density map mostly outside.
  for (std::uint64_t round = 0; filled < q && round < 64; ++round) {
    const Points2 pd = sample_queries(dm, q, seed * 64 + round);
    const Points2 pf = sim2_apply(sample.density_to_floorplan, pd);
    for (Eigen::Index i = 0; i < pd.rows() && filled < q; ++i) {
      if (pf(i, 0) < 0 || pf(i, 0) > w || pf(i, 1) < 0 || pf(i, 1) > h) continue;
      b.pd.row(Eigen::Index(filled)) = pd.row(i);
      b.pf.row(Eigen::Index(filled)) = pf.row(i);
      ++filled;
    }
  }
  if (filled < q) throw Error(ErrorCode::TooFewPairs, "ground truth maps queries off the floorplan");
  return b;
}

void TrainConfig::validate() const {
  loss.validate();
  if (steps < 1) throw Error(ErrorCode::InvalidArgument, "steps must be >= 1");
  if (queries < 3) throw Error(ErrorCode::InvalidArgument, "need at least 3 queries");
  if (!(lr > 0.0) || !(clip_norm > 0.0) || weight_decay < 0.0)
    throw Error(ErrorCode::InvalidArgument, "lr and clip_norm must be positive");
}

namespace {

// Features at `points` sampled from a grid node through fixed bilinear taps.
ad::Var sampled_unit(const ad::Var& grid, const FeatureMap& shape, const Points2& points) {
  return ad::normalize_rows(ad::sparse_matmul(bilinear_weights(shape, points), grid));
}

FeatureMap shape_of(const ToyEncoder& enc, const MatX& image) {
  return FeatureMap::zeros(image.rows(), image.cols(), enc.config().patch, 1);
}

}  // namespace

LossGraph build_losses(const ToyEncoder& encoder, const std::vector<ad::Var>& params,
                       const TrainingSample& sample, const Batch& batch, double step_frac,
                       const LossConfig& cfg, Rng& rng, std::optional<double> geo_mean) {
  ad::Tape& tape = params.front().tape();
  const double patch = encoder.config().patch;
  const FeatureMap d_shape = shape_of(encoder, sample.density);
  const FeatureMap f_shape = shape_of(encoder, sample.floorplan);

  const ad::Var grid_d = encoder.encode(tape, params, sample.density);
  const ad::Var grid_f = encoder.encode(tape, params, sample.floorplan);
  const ad::Var fd = sampled_unit(grid_d, d_shape, batch.pd);
  const ad::Var ff = sampled_unit(grid_f, f_shape, batch.pf);

  const MatX centroids = MatX(f_shape.centroids()) / patch;
  const SoftMatchVars pred = soft_match(fd, ad::normalize_rows(grid_f), centroids, cfg.tau);
  const MatX src = MatX(batch.pd) / patch;
  const int q = int(batch.pd.rows());

  LossGraph g;
  g.parts.feat = loss_feat(fd, ff, cfg.tau);
  g.parts.regr = loss_regr(pred, MatX(batch.pf) / patch, cfg.huber_regr);
  g.parts.topo = loss_topo(pred, src, sample_triplets(src, cfg.n_triplets > 0 ? cfg.n_triplets : q, rng),
                           cfg.huber_struct);
  const std::vector<Pair> pairs = sample_pairs(src, cfg.n_pairs > 0 ? cfg.n_pairs : q, rng);
  g.geo_mean = geo_mean ? *geo_mean : geo_mean_log_ratio(pred, src, pairs);
  g.parts.geo = loss_geo(pred, src, pairs, cfg.huber_struct, g.geo_mean);
  g.total = total_loss(step_frac, g.parts, cfg);
  return g;
}

SoftMatchResult predict(const ToyEncoder& encoder, const TrainingSample& sample,
                        const Points2& pd, double tau) {
  return soft_match(sample_features(encoder.encode(sample.density), pd),
                    encoder.encode(sample.floorplan), tau);
}

TrainResult train_toy(const std::vector<TrainingSample>& corpus, const EncoderConfig& enc,
                      const TrainConfig& cfg, const std::function<void(const StepLog&)>& on_step) {
  cfg.validate();
  if (corpus.empty()) throw Error(ErrorCode::EmptyInput, "empty training corpus");

  TrainResult out{ToyEncoder(enc, cfg.seed), {}};
  std::vector<MatX>& theta = out.encoder.params();
  std::vector<MatX> m1, m2;
  for (const MatX& p : theta) {
    m1.push_back(MatX::Zero(p.rows(), p.cols()));
    m2.push_back(MatX::Zero(p.rows(), p.cols()));
  }

  Rng pick(cfg.seed, 0x7a1);
  for (int step = 0; step < cfg.steps; ++step) {
    const double frac = double(step) / double(cfg.steps);
    const TrainingSample& sample = corpus[pick.below(corpus.size())];
    const Batch batch = sample_batch(sample, cfg.queries, cfg.seed * 1000003ULL + std::uint64_t(step));
    Rng rng(cfg.seed, 0x10000 + std::uint64_t(step));

    ad::Tape tape;
    const std::vector<ad::Var> vars = out.encoder.bind(tape, true);
    const LossGraph g = build_losses(out.encoder, vars, sample, batch, frac, cfg.loss, rng);

    StepLog log{step, frac, g.parts.feat.item(), g.parts.regr.item(), g.parts.topo.item(),
                g.parts.geo.item(), g.total.item(), 0.0};
    if (!std::isfinite(log.total)) throw NonFiniteLossError(step, out.encoder);

    tape.backward(g.total);
    double sq = 0.0;
    for (const ad::Var& v : vars) sq += v.grad().squaredNorm();
    log.grad_norm = std::sqrt(sq);
    if (!std::isfinite(log.grad_norm)) throw NonFiniteLossError(step, out.encoder);
    const double clip = log.grad_norm > cfg.clip_norm ? cfg.clip_norm / log.grad_norm : 1.0;

    const double t = double(step + 1);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t), bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const MatX grad = vars[k].grad() * clip;
      m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * grad;
      m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
      theta[k] *= 1.0 - cfg.lr * cfg.weight_decay;  // decoupled decay
      theta[k].array() -= cfg.lr * (m1[k].array() / bc1) /
                          ((m2[k].array() / bc2).sqrt() + cfg.adam_eps);
    }
    out.log.push_back(log);
    if (on_step) on_step(log);
  }
  return out;
}

}  // namespace planealign
