#include <planealign/losses.hpp>
#include <planealign/matching.hpp>
#include <planealign/rng.hpp>

#include <algorithm>
#include <chrono>
#include <numeric>

namespace planealign {

Points2 sample_queries(const DensityMap& dm, std::size_t n, std::uint64_t seed) {
  const Eigen::Index w = dm.width();
  std::vector<double> cdf(std::size_t(dm.grid.size()));
  double total = 0.0;
  for (Eigen::Index r = 0; r < dm.height(); ++r)
    for (Eigen::Index c = 0; c < w; ++c) {
      total += std::max(0.0, dm.grid(r, c));
      cdf[std::size_t(r * w + c)] = total;
    }
  if (!(total > 0.0)) throw Error(ErrorCode::EmptyDensity, "density map has no mass");

  Rng rng(seed, 0x9e7);
  Points2 out(Eigen::Index(n), 2);
  for (std::size_t k = 0; k < n; ++k) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    const auto cell = Eigen::Index(it - cdf.begin());
    const double jx = rng.uniform(), jy = rng.uniform();
    out.row(Eigen::Index(k)) << double(cell % w) + jx, double(cell / w) + jy;
  }
  return out;
}

namespace {

std::vector<std::size_t> reliable_indices(const CorrespondenceSet& cs, const FeatureMap& feat_d,
                                          const FeatureMap& feat_f) {
  std::vector<std::size_t> order(cs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cs[a].w > cs[b].w; });
  order.resize((cs.size() + 1) / 2);
  std::sort(order.begin(), order.end());

  // Nearest density cell (cosine) for every floorplan cell.
  const MatX sim = normalized_rows(feat_f.data) * normalized_rows(feat_d.data).transpose();
  std::vector<Eigen::Index> nearest(std::size_t(sim.rows()));
  for (Eigen::Index k = 0; k < sim.rows(); ++k) sim.row(k).maxCoeff(&nearest[std::size_t(k)]);

  std::vector<std::size_t> keep;
  for (std::size_t i : order) {
    const Eigen::Index f_cell = feat_f.cell_at(cs[i].pf);
    if (nearest[std::size_t(f_cell)] == feat_d.cell_at(cs[i].pd)) keep.push_back(i);
  }
  return keep;
}

}  // namespace

CorrespondenceSet select_reliable(const CorrespondenceSet& cs, const FeatureMap& feat_d,
                                  const FeatureMap& feat_f) {
  CorrespondenceSet out;
  for (std::size_t i : reliable_indices(cs, feat_d, feat_f)) {
    out.push_back(cs[i]);
    out.back().reliable = true;
  }
  return out;
}

RansacResult ransac_sim2(const CorrespondenceSet& cs, const RansacParams& params) {
  if (params.iterations < 1) throw Error(ErrorCode::InvalidArgument, "iterations must be >= 1");
  if (!(params.inlier_threshold > 0.0))
    throw Error(ErrorCode::InvalidArgument, "inlier threshold must be positive");
  const std::size_t n = cs.size();
  if (n < 2) throw NoConsensusError("need at least two correspondences", 0);

  // Canonical order so the result does not depend on input order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) {
    const auto& c = cs[i];
    return std::array<double, 5>{c.pd.x(), c.pd.y(), c.pf.x(), c.pf.y(), c.w};
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  Points2 src(Eigen::Index(n), 2), dst(Eigen::Index(n), 2);
  for (std::size_t k = 0; k < n; ++k) {
    src.row(Eigen::Index(k)) = cs[order[k]].pd.transpose();
    dst.row(Eigen::Index(k)) = cs[order[k]].pf.transpose();
  }

  const double thr = params.inlier_threshold;
  auto score = [&](const Sim2& m, std::vector<bool>* mask) {
    const VecX r = (sim2_apply(m, src) - dst).rowwise().norm();
    std::size_t count = 0;
    double resid = 0.0;
    if (mask) mask->assign(n, false);
    for (std::size_t k = 0; k < n; ++k)
      if (r[Eigen::Index(k)] <= thr) {
        ++count;
        resid += r[Eigen::Index(k)];
        if (mask) (*mask)[k] = true;
      }
    return std::pair<std::size_t, double>(count, resid);
  };

  Rng rng(params.seed, 0x5a11);
  bool found = false;
  Sim2 best;
  std::size_t best_count = 0;
  double best_resid = 0.0;
  for (int it = 0; it < params.iterations; ++it) {
    const auto i = Eigen::Index(rng.below(n));
    auto j = Eigen::Index(rng.below(n - 1));
    if (j >= i) ++j;
    Sim2 m;
    try {
      m = sim2_from_two_pairs(src.row(i).transpose(), src.row(j).transpose(),
                              dst.row(i).transpose(), dst.row(j).transpose());
    } catch (const Error&) {
      continue;
    }
    const auto [count, resid] = score(m, nullptr);
    if (!found || count > best_count || (count == best_count && resid < best_resid)) {
      found = true;
      best = m;
      best_count = count;
      best_resid = resid;
    }
  }
  if (!found || best_count < std::size_t(std::max(2, params.min_inliers)))
    throw NoConsensusError("best hypothesis has " + std::to_string(best_count) + " inliers",
                           best_count);

  std::vector<bool> mask;
  score(best, &mask);
  RansacResult out;
  out.model = best;
  out.inlier_count = best_count;
  out.inlier_residual = best_resid;

  Points2 in_src(Eigen::Index(best_count), 2), in_dst(Eigen::Index(best_count), 2);
  for (std::size_t k = 0, row = 0; k < n; ++k)
    if (mask[k]) {
      in_src.row(Eigen::Index(row)) = src.row(Eigen::Index(k));
      in_dst.row(Eigen::Index(row++)) = dst.row(Eigen::Index(k));
    }
  try {
    const Sim2 refit = sim2_umeyama(in_src, in_dst);
    std::vector<bool> refit_mask;
    const auto [count, resid] = score(refit, &refit_mask);
    if (count >= best_count) {
      out.model = refit;
      out.inlier_count = count;
      out.inlier_residual = resid;
      out.refit_kept = true;
      mask = std::move(refit_mask);
    }
  } catch (const Error&) {
    // Degenerate inlier spread: keep the minimal-sample model.
  }

  out.inliers.assign(n, false);
  for (std::size_t k = 0; k < n; ++k) out.inliers[order[k]] = mask[k];
  return out;
}

// ---------------------------------------------------------------------------

bool LocalizeResult::all_ok() const {
  return !chunks.empty() &&
         std::all_of(chunks.begin(), chunks.end(), [](const ChunkResult& c) { return c.ok; });
}

namespace {

class StageTimer {
 public:
  StageTimer(StageReport& report, std::string name)
      : report_(report), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    const auto dt = std::chrono::steady_clock::now() - start_;
    report_.timings_ms[name_] = std::chrono::duration<double, std::milli>(dt).count();
  }

 private:
  StageReport& report_;
  std::string name_;
  std::chrono::steady_clock::time_point start_;
};

template <class Fn>
auto run_stage(StageReport& report, const std::string& name, Fn&& fn) {
  StageTimer timer(report, name);
  try {
    return fn();
  } catch (const Error& e) {
    report.failed_stage = name;
    report.error = e.what();
    report.error_code = e.code();
    throw StageError(e.code(), name, e.what());
  }
}

}  // namespace

CorrespondenceSet match_density(const DensityMap& density, const Floorplan& floorplan,
                                const FeatureBackend& backend, const Mat3& gravity_rotation,
                                const LocalizeParams& params, StageReport& rep, Sim2* model) {
  CorrespondenceSet cs;
  const auto [feat_d, feat_f] = run_stage(rep, "features", [&] {
    return backend.extract(FeatureContext{density, floorplan, gravity_rotation});
  });

  const Points2 queries = run_stage(rep, "queries", [&] {
    return sample_queries(density, params.queries, params.seed);
  });
  rep.queries = std::size_t(queries.rows());

  run_stage(rep, "soft_match", [&] {
    const SoftMatchResult sm = soft_match(sample_features(feat_d, queries), feat_f, params.tau);
    cs.resize(std::size_t(queries.rows()));
    for (Eigen::Index i = 0; i < queries.rows(); ++i)
      cs[std::size_t(i)] = {queries.row(i).transpose(), sm.coords.row(i).transpose(), sm.weights[i]};
    return 0;
  });

  const auto reliable = run_stage(rep, "select_reliable", [&] {
    return reliable_indices(cs, feat_d, feat_f);
  });
  rep.reliable = reliable.size();
  CorrespondenceSet subset;
  for (std::size_t i : reliable) {
    cs[i].reliable = true;
    subset.push_back(cs[i]);
  }

  RansacParams rp = params.ransac;
  if (!(rp.inlier_threshold > 0.0)) rp.inlier_threshold = rp.threshold_diag_frac * floorplan.diagonal();
  const RansacResult rr = run_stage(rep, "ransac", [&] { return ransac_sim2(subset, rp); });
  for (std::size_t k = 0; k < reliable.size(); ++k)
    cs[reliable[k]].inlier = rr.inliers[k];
  rep.inliers = rr.inlier_count;
  rep.inlier_ratio = subset.empty() ? 0.0 : double(rr.inlier_count) / double(subset.size());

  if (model) *model = rr.model;
  return cs;
}

ChunkResult localize_chunk(const ReconstructedScene& scene, const Floorplan& floorplan,
                           const FeatureBackend& backend, const LocalizeParams& params) {
  ChunkResult out;
  out.image_count = scene.images.size();
  StageReport& rep = out.report;
  try {
    if (scene.images.empty())
      throw StageError(ErrorCode::EmptyInput, "input", "scene has no images");
    if (floorplan.channels.empty())
      throw StageError(ErrorCode::EmptyInput, "input", "floorplan is empty");

    const GravityAlignment ga = run_stage(rep, "gravity", [&] { return gravity_align(scene); });
    out.gravity_rotation = ga.rotation;

    const Points3 kept = run_stage(rep, "filter", [&] { return filter_points(ga.scene, params.filter); });

    RasterOptions ro = params.raster;
    if (ro.height <= 0) ro.height = floorplan.height();
    if (ro.width <= 0) ro.width = floorplan.width();
    out.density = run_stage(rep, "rasterize", [&] { return rasterize(kept, ro); });

    out.correspondences =
        match_density(out.density, floorplan, backend, ga.rotation, params, rep, &out.density_to_floorplan);
    out.world_to_floorplan = compose(out.density_to_floorplan, out.density.world_to_grid);
    out.aligned = run_stage(rep, "align", [&] {
      const auto poses = ga.scene.poses();
      return align_scene(ga.scene.all_points(), poses, out.world_to_floorplan);
    });
    out.ok = true;
  } catch (const StageError& e) {
    if (rep.failed_stage.empty()) {
      rep.failed_stage = e.stage();
      rep.error = e.what();
      rep.error_code = e.code();
    }
    throw;
  }
  return out;
}

LocalizeResult localize(const ReconstructedScene& scene, const Floorplan& floorplan,
                        const FeatureBackend& backend, const LocalizeParams& params) {
  if (scene.images.empty()) throw StageError(ErrorCode::EmptyInput, "input", "scene has no images");
  if (params.chunk_size == 0) throw Error(ErrorCode::InvalidArgument, "chunk_size must be positive");

  const std::size_t n = scene.images.size();
  const std::size_t n_chunks = (n + params.chunk_size - 1) / params.chunk_size;
  LocalizeResult result;
  std::optional<StageError> first_error;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    const std::size_t begin = c * n / n_chunks, end = (c + 1) * n / n_chunks;
    LocalizeParams p = params;
    p.seed = params.seed + c;
    p.ransac.seed = params.ransac.seed + c;
    ChunkResult chunk;
    try {
      chunk = localize_chunk(scene.slice(begin, end - begin), floorplan, backend, p);
    } catch (const StageError& e) {
      if (!first_error) first_error = e;
      chunk.ok = false;
      chunk.report.failed_stage = e.stage();
      chunk.report.error = e.what();
      chunk.report.error_code = e.code();
    }
    chunk.first_image = begin;
    chunk.image_count = end - begin;
    result.chunks.push_back(std::move(chunk));
  }
  if (!std::any_of(result.chunks.begin(), result.chunks.end(),
                   [](const ChunkResult& c) { return c.ok; }))
    throw *first_error;
  return result;
}

}  // namespace planealign
