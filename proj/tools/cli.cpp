#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstring>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

namespace planealign::cli {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_fail(const std::string& what) { throw Error(ErrorCode::ConfigError, what); }

// ---------------------------------------------------------------------------
// Config schema. One visitor describes every key; the reader enforces it and
// the writer dumps it, so the two cannot drift apart.

class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) config_fail((where_.empty() ? "config" : where_) + " must be a JSON object");
  }

  template <class T>
  void operator()(const char* key, T& dst) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      read(*it, dst);
    } catch (const json::exception& e) {
      config_fail(path(key) + ": " + e.what());
    } catch (const Error& e) {
      config_fail(path(key) + ": " + e.what());
    }
  }

  template <class F>
  void object(const char* key, F&& fn) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    Reader sub(*it, path(key));
    fn(sub);
    sub.finish();
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) config_fail("unknown key \"" + path(item.key()) + "\"");
  }

 private:
  template <class T>
  static void read(const json& v, T& dst) {
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_integer()) throw Error(ErrorCode::ConfigError, "expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (!v.is_number_unsigned()) throw Error(ErrorCode::ConfigError, "expected a non-negative integer");
    }
    dst = v.get<T>();
  }
  template <class T>
  static void read(const json& v, std::optional<T>& dst) {
    if (v.is_null()) {
      dst.reset();
      return;
    }
    T tmp{};
    read(v, tmp);
    dst = tmp;
  }

  std::string path(const std::string& k) const { return where_.empty() ? k : where_ + "." + k; }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  json j = json::object();

  template <class T>
  void operator()(const char* key, const T& v) {
    j[key] = v;
  }
  template <class T>
  void operator()(const char* key, const std::optional<T>& v) {
    j[key] = v ? json(*v) : json(nullptr);
  }
  template <class F>
  void object(const char* key, F&& fn) {
    Writer sub;
    fn(sub);
    j[key] = std::move(sub.j);
  }
};

template <class V, class C>
void visit(V& v, C& c) {
  v("seed", c.seed);
  v("jobs", c.jobs);
  v.object("filter", [&](auto& s) {
    s("rho_conf", c.filter.rho_conf);
    s("rho_xz", c.filter.rho_xz);
    s("rho_y_min", c.filter.rho_y_min);
    s("rho_y_max", c.filter.rho_y_max);
  });
  v.object("raster", [&](auto& s) {
    s("height", c.raster.height);
    s("width", c.raster.width);
    s("gamma", c.raster.gamma);
    s("margin_frac", c.raster.margin_frac);
  });
  v("queries", c.queries);
  v("tau", c.tau);
  v.object("ransac", [&](auto& s) {
    s("iterations", c.ransac.iterations);
    s("inlier_threshold", c.ransac.inlier_threshold);
    s("threshold_diag_frac", c.ransac.threshold_diag_frac);
    s("min_inliers", c.ransac.min_inliers);
  });
  v("chunk_size", c.chunk_size);
  v.object("backend", [&](auto& s) {
    s("kind", c.backend.kind);
    s("patch", c.backend.patch);
  });
  v.object("loss", [&](auto& s) {
    s("lambda_feat", c.loss.lambda_feat);
    s("lambda_regr", c.loss.lambda_regr);
    s("lambda_topo", c.loss.lambda_topo);
    s("lambda_geo", c.loss.lambda_geo);
    s("tau", c.loss.tau);
    s("huber_regr", c.loss.huber_regr);
    s("huber_struct", c.loss.huber_struct);
    s("n_triplets", c.loss.n_triplets);
    s("n_pairs", c.loss.n_pairs);
  });
  v.object("train", [&](auto& s) {
    s("steps", c.train.steps);
    s("queries", c.train.queries);
    s("lr", c.train.lr);
    s("beta1", c.train.beta1);
    s("beta2", c.train.beta2);
    s("adam_eps", c.train.adam_eps);
    s("weight_decay", c.train.weight_decay);
    s("clip_norm", c.train.clip_norm);
    s("corpus_samples", c.corpus_samples);
  });
  v.object("encoder", [&](auto& s) {
    s("patch", c.encoder.patch);
    s("embed", c.encoder.embed);
    s("context", c.encoder.context);
    s("dilations", c.encoder.dilations);
    s("hidden", c.encoder.hidden);
    s("channels", c.encoder.channels);
  });
  v.object("corpus", [&](auto& s) {
    s("size", c.corpus.size);
    s("n_rooms_min", c.corpus.n_rooms_min);
    s("n_rooms_max", c.corpus.n_rooms_max);
    s("near_aligned", c.corpus.near_aligned);
    s("max_rotation_deg", c.corpus.max_rotation_deg);
    s("max_log_scale", c.corpus.max_log_scale);
    s("max_shift_frac", c.corpus.max_shift_frac);
  });
  v.object("synth", [&](auto& s) {
    s("n_rooms", c.synth.n_rooms);
    s("size", c.synth.size);
    s("n_images", c.synth.scene.n_images);
    s("noise_sigma_px", c.synth.scene.noise_sigma_px);
    s("outlier_frac", c.synth.scene.outlier_frac);
    s("gravity_jitter_deg", c.synth.scene.gravity_jitter_deg);
    s("gravity_outlier_frac", c.synth.scene.gravity_outlier_frac);
    s("points_per_image", c.synth.scene.points_per_image);
    s("wall_height", c.synth.scene.wall_height);
    s("fov_deg", c.synth.scene.fov_deg);
  });
  v("paths", c.paths);
}

const std::set<std::string> kPathKeys{
    "scene",   "sidecar",      "scene2",         "sidecar2", "floorplan", "density",
    "density_meta", "truth",   "truth2",         "encoder",  "fmap_density", "fmap_floorplan",
    "out",     "out_dir",      "log",            "svg_out",  "result",    "pred_ply",
    "gt_ply",  "aligned_ply"};

void validate(const RunConfig& c) {
  try {
    c.filter.validate();
    TrainConfig t = c.train;
    t.loss = c.loss;
    t.validate();
  } catch (const Error& e) {
    config_fail(e.what());
  }
  if (c.jobs < 1) config_fail("jobs must be >= 1");
  if (c.queries < 3) config_fail("queries must be >= 3");
  if (!(c.tau > 0.0)) config_fail("tau must be positive");
  if (c.chunk_size < 1) config_fail("chunk_size must be >= 1");
  if (c.raster.height < 0 || c.raster.width < 0) config_fail("raster size must be >= 0 (0: floorplan size)");
  if (!(c.raster.gamma > 0.0)) config_fail("raster.gamma must be positive");
  if (c.ransac.iterations < 1) config_fail("ransac.iterations must be >= 1");
  if (c.ransac.min_inliers < 2) config_fail("ransac.min_inliers must be >= 2");
  if (c.backend.kind != "oracle" && c.backend.kind != "encoder" && c.backend.kind != "files")
    config_fail("backend.kind must be oracle, encoder or files");
  if (c.backend.patch < 1) config_fail("backend.patch must be >= 1");
  if (c.corpus_samples < 1) config_fail("train.corpus_samples must be >= 1");
  if (c.synth.n_rooms < 0) config_fail("synth.n_rooms must be >= 0");
  for (const auto& [k, v] : c.paths)
    if (!kPathKeys.count(k)) config_fail("unknown key \"paths." + k + "\"");
}

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
      return kConfig;
    case ErrorCode::ParseError:
    case ErrorCode::BadMagic:
    case ErrorCode::BadVersion:
    case ErrorCode::DimOverflow:
    case ErrorCode::TruncatedFile:
    case ErrorCode::IoError:
    case ErrorCode::EmptyInput:
    case ErrorCode::NotUnit:
    case ErrorCode::AllPointsFiltered:
    case ErrorCode::EmptyDensity:
    case ErrorCode::OutOfBounds:
      return kInput;
    case ErrorCode::NoConsensus:
    case ErrorCode::TooFewPairs:
    case ErrorCode::DegenerateSample:
    case ErrorCode::DegenerateWeights:
      return kNoConsensus;
    default:
      return kInternal;
  }
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  visit(r, c);
  r.finish();
  validate(c);
  return c;
}

json to_json(const RunConfig& c) {
  Writer w;
  visit(w, c);
  return w.j;
}

RunConfig load_config(const fs::path& path) {
  json j;
  try {
    j = io::read_json(path);
  } catch (const Error& e) {
    config_fail(e.what());
  }
  return config_from_json(j);
}

std::uint64_t RunConfig::resolved_seed() const {
  if (seed) return *seed;
  if (const char* env = std::getenv("PLANEALIGN_SEED"); env && *env) {
    std::uint64_t v = 0;
    const char* end = env + std::strlen(env);
    const auto [p, ec] = std::from_chars(env, end, v);
    if (ec != std::errc() || p != end) config_fail(std::string("PLANEALIGN_SEED is not an integer: ") + env);
    return v;
  }
  return 1;
}

LocalizeParams RunConfig::localize_params() const {
  LocalizeParams lp;
  lp.filter = filter;
  lp.raster = raster;
  lp.queries = queries;
  lp.tau = tau;
  lp.ransac = ransac;
  lp.chunk_size = chunk_size;
  lp.seed = lp.ransac.seed = resolved_seed();
  return lp;
}

synth::SceneParams RunConfig::scene_params(std::uint64_t s) const {
  synth::SceneParams p = synth.scene;
  p.seed = s;
  return p;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto workers = std::size_t(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) pool.emplace_back(work);
  for (std::thread& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------

synth::SynthScene corpus_scene(const RunConfig& cfg, std::uint64_t seed) {
  const int rooms = cfg.synth.n_rooms > 0 ? cfg.synth.n_rooms : 2 + int(seed % 5);
  return synth::make_scene(seed, rooms, cfg.synth.size, cfg.scene_params(seed));
}

bool SceneOutcome::success(double yaw_deg, double pos_frac) const {
  if (!localized || cameras.empty()) return false;
  return std::all_of(cameras.begin(), cameras.end(), [&](const PoseEval& e) {
    return e.yaw_err_deg <= yaw_deg && e.pos_err_frac <= pos_frac;
  });
}

namespace {

OracleBackend oracle_backend(synth::Truth truth, int patch) {
  return OracleBackend(
      [t = std::move(truth)](const DensityMap& dm, const Mat3& r) { return t.density_to_floorplan(dm, r); },
      patch);
}

struct CameraObs {
  int image_id = 0;
  Vec2 position;  // floorplan pixels
  double yaw = 0.0;
};

std::vector<CameraObs> observations(const ChunkResult& c) {
  std::vector<CameraObs> obs;
  for (const CameraPose& p : c.aligned.poses)
    obs.push_back({p.image_id, Vec2(p.center.x(), p.center.z()), camera_yaw(p.rotation)});
  return obs;
}

// Camera errors against the truth, matched by image id. Appends the matched
// predicted and true positions when asked.
void score_cameras(const std::vector<CameraObs>& obs, const synth::Truth& truth, double diagonal,
                   std::vector<PoseEval>& out, std::vector<std::pair<Vec2, Vec2>>* positions = nullptr) {
  if (obs.empty()) return;
  const Points2 gt_all = truth.camera_positions();
  const VecX gy_all = truth.camera_yaws();
  std::map<int, Eigen::Index> row;
  for (std::size_t i = 0; i < truth.true_poses.size(); ++i) row[truth.true_poses[i].image_id] = Eigen::Index(i);
  const auto n = Eigen::Index(obs.size());
  Points2 pred(n, 2), gt(n, 2);
  VecX py(n), gy(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const CameraObs& o = obs[std::size_t(k)];
    const auto it = row.find(o.image_id);
    if (it == row.end()) throw Error(ErrorCode::ParseError, "no truth for image " + std::to_string(o.image_id));
    pred.row(k) = o.position.transpose();
    py[k] = o.yaw;
    gt.row(k) = gt_all.row(it->second);
    gy[k] = gy_all[it->second];
    if (positions) positions->emplace_back(o.position, gt.row(k).transpose());
  }
  const auto evals = evaluate_poses(pred, py, gt, gy, diagonal, 1.0 / truth.world_to_floorplan.s);
  out.insert(out.end(), evals.begin(), evals.end());
}

void sim2_errors(SceneOutcome& o) {
  o.theta_err_deg = std::abs(wrap_angle(o.estimate.theta - o.truth.theta)) * 180.0 / std::numbers::pi;
  o.scale_rel_err = std::abs(o.estimate.s / o.truth.s - 1.0);
  o.translation_err_px = (o.estimate.t - o.truth.t).norm();
}

}  // namespace

SceneOutcome evaluate_scene(const synth::SynthScene& ss, const LocalizeParams& lp, int patch,
                            std::optional<std::size_t> views) {
  SceneOutcome o;
  const std::size_t n = ss.scene.images.size();
  const std::size_t used = views ? std::min(*views, n) : n;
  const ReconstructedScene scene = ss.scene.slice(0, used);
  const Floorplan fp = ss.layout.floorplan();
  const OracleBackend backend = oracle_backend(ss.truth, patch);
  const double diag = fp.diagonal();
  try {
    const LocalizeResult r = localize(scene, fp, backend, lp);
    bool first = true;
    for (const ChunkResult& c : r.chunks) {
      if (!c.ok) {
        o.cameras.insert(o.cameras.end(), c.image_count, PoseEval{180.0, 1.0, {}});
        continue;
      }
      if (first) {
        o.estimate = c.density_to_floorplan;
        o.truth = ss.truth.density_to_floorplan(c.density, c.gravity_rotation);
        sim2_errors(o);
        first = false;
      }
      score_cameras(observations(c), ss.truth, diag, o.cameras);
    }
    o.localized = r.all_ok();
    if (!o.localized) o.failure = "some chunks failed";
  } catch (const StageError& e) {
    o.failure = e.what();
    o.error = e.code();
    o.cameras.assign(used, PoseEval{180.0, 1.0, {}});
  }
  return o;
}

std::vector<SweepRow> run_sweep(const RunConfig& cfg, std::size_t scenes, std::uint64_t first_seed) {
  if (scenes == 0) config_fail("sweep needs at least one scene");
  std::vector<synth::SynthScene> corpus(scenes);
  parallel_for(scenes, cfg.jobs, [&](std::size_t i) { corpus[i] = corpus_scene(cfg, first_seed + i); });

  std::vector<SweepRow> rows;
  for (double rc : kSweepRhoConf)
    for (double xz : kSweepRhoXz)
      for (double g : kSweepGamma) rows.push_back({rc, xz, g, scenes, 0});

  std::vector<char> ok(rows.size() * scenes, 0);
  parallel_for(ok.size(), cfg.jobs, [&](std::size_t task) {
    const SweepRow& row = rows[task / scenes];
    const std::size_t s = task % scenes;
    LocalizeParams lp = cfg.localize_params();
    lp.filter.rho_conf = row.rho_conf;
    lp.filter.rho_xz = row.rho_xz;
    lp.raster.gamma = row.gamma;
    lp.seed = lp.ransac.seed = first_seed + s;
    ok[task] = evaluate_scene(corpus[s], lp, cfg.backend.patch).success();
  });
  for (std::size_t task = 0; task < ok.size(); ++task) rows[task / scenes].successes += std::size_t(ok[task]);
  return rows;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

const std::string& need(const RunConfig& c, const std::string& key) {
  const auto it = c.paths.find(key);
  if (it == c.paths.end() || it->second.empty()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    config_fail("missing --" + flag);
  }
  return it->second;
}

std::optional<fs::path> maybe(const RunConfig& c, const std::string& key) {
  const auto it = c.paths.find(key);
  if (it == c.paths.end() || it->second.empty()) return std::nullopt;
  return fs::path(it->second);
}

synth::Truth load_truth(const fs::path& path) {
  const json j = io::read_json(path);
  try {
    return io::truth_from_json(j.contains("truth") ? j.at("truth") : j);
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

std::unique_ptr<FeatureBackend> make_backend(const RunConfig& c, const std::string& truth_key) {
  if (c.backend.kind == "oracle")
    return std::make_unique<OracleBackend>(oracle_backend(load_truth(need(c, truth_key)), c.backend.patch));
  if (c.backend.kind == "encoder") return std::make_unique<EncoderBackend>(io::load_encoder(need(c, "encoder")));
  return std::make_unique<FileBackend>(need(c, "fmap_density"), need(c, "fmap_floorplan"));
}

// Density map of a whole scene, sized to the floorplan unless the raster size is set.
struct DensityRun {
  DensityMap density;
  Mat3 gravity_rotation;
  std::size_t points_kept = 0;
};

DensityRun make_density(const ReconstructedScene& scene, const RunConfig& c,
                        std::optional<std::pair<Eigen::Index, Eigen::Index>> floorplan_size) {
  RasterOptions ro = c.raster;
  if (ro.height == 0 || ro.width == 0) {
    if (!floorplan_size) config_fail("set raster.height/width or pass --floorplan");
    if (ro.height == 0) ro.height = floorplan_size->first;
    if (ro.width == 0) ro.width = floorplan_size->second;
  }
  const GravityAlignment ga = gravity_align(scene);
  const Points3 kept = filter_points(ga.scene, c.filter);
  return {rasterize(kept, ro), ga.rotation, std::size_t(kept.rows())};
}

json density_meta(const DensityRun& d) {
  return {{"gravity_rotation", [&] {
             const Eigen::Matrix<double, 3, 3, Eigen::RowMajor> r = d.gravity_rotation;
             return std::vector<double>(r.data(), r.data() + 9);
           }()},
          {"points_kept", d.points_kept}};
}

Mat3 meta_rotation(const json& meta) {
  if (!meta.contains("gravity_rotation")) return Mat3::Identity();
  const auto r = meta.at("gravity_rotation").get<std::vector<double>>();
  if (r.size() != 9) throw Error(ErrorCode::ParseError, "gravity_rotation needs 9 numbers");
  return Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(r.data());
}

// Writes scene<tag>.ply/.json, gt<tag>_sim2.json and gt<tag>_corr.json.
void write_synth(const synth::SynthScene& ss, const RunConfig& c, std::uint64_t seed, const fs::path& dir,
                 const std::string& tag) {
  io::save_scene(ss.scene, dir / ("scene" + tag + ".ply"), dir / ("scene" + tag + ".json"));
  const DensityRun d = make_density(ss.scene, c, std::pair{ss.layout.raster.rows(), ss.layout.raster.cols()});
  const Sim2 a2f = ss.truth.aligned_to_floorplan(d.gravity_rotation);
  const Sim2 d2f = compose(a2f, d.density.world_to_grid.inverse());
  json gt = {{"seed", seed},
             {"n_rooms", ss.layout.rooms.size()},
             {"diagonal", ss.layout.floorplan().diagonal()},
             {"aligned_to_floorplan", io::to_json(a2f)},
             {"density_to_floorplan", io::to_json(d2f)},
             {"truth", io::to_json(ss.truth)}};
  gt.update(density_meta(d));
  io::write_json(dir / ("gt" + tag + "_sim2.json"), gt);

  // Truth correspondences for the default density map, for checking matchers.
  const Points2 pd = sample_queries(d.density, c.queries, seed);
  CorrespondenceSet cs;
  for (Eigen::Index i = 0; i < pd.rows(); ++i) {
    const Vec2 p = pd.row(i).transpose();
    cs.push_back({p, d2f(p), 1.0, true, true});
  }
  io::write_json(dir / ("gt" + tag + "_corr.json"),
                 {{"density_to_floorplan", io::to_json(d2f)}, {"correspondences", io::to_json(cs)}});
}

int cmd_synth(const RunConfig& c, bool pair, std::ostream& out) {
  const std::uint64_t seed = c.resolved_seed();
  const fs::path dir = need(c, "out_dir");
  const synth::SynthScene ss = corpus_scene(c, seed);
  io::write_pgm(dir / "floorplan.pgm", ss.layout.raster);
  write_synth(ss, c, seed, dir, "");
  out << "synth seed " << seed << ": " << ss.scene.images.size() << " images, " << ss.scene.point_count()
      << " points, " << ss.layout.rooms.size() << " rooms -> " << dir.string() << "\n";
  if (pair) {
    // A second, independently framed reconstruction of the same building.
    const std::uint64_t seed2 = seed + 0x5eed;
    synth::SynthScene other = synth::gen_scene(ss.layout, c.scene_params(seed2));
    write_synth(other, c, seed2, dir, "2");
    out << "second scene: " << other.scene.images.size() << " images\n";
  }
  return kOk;
}

int cmd_density(const RunConfig& c, std::ostream& out) {
  const ReconstructedScene scene = io::load_scene(need(c, "scene"), need(c, "sidecar"));
  std::optional<std::pair<Eigen::Index, Eigen::Index>> size;
  if (const auto fp = maybe(c, "floorplan")) {
    const Floorplan f = io::read_image(*fp);
    size = std::pair{f.height(), f.width()};
  }
  const DensityRun d = make_density(scene, c, size);
  const fs::path pgm = need(c, "density"), meta = need(c, "density_meta");
  io::save_density(d.density, pgm, meta);
  json j = io::read_json(meta);
  j.update(density_meta(d));
  io::write_json(meta, j);
  out << "density " << d.density.height() << "x" << d.density.width() << " from " << d.points_kept
      << " points -> " << pgm.string() << "\n";
  return kOk;
}

int cmd_match(const RunConfig& c, std::ostream& out) {
  const DensityMap dm = io::load_density(need(c, "density"), need(c, "density_meta"));
  const Mat3 rg = meta_rotation(io::read_json(need(c, "density_meta")));
  const Floorplan fp = io::read_image(need(c, "floorplan"));
  const auto backend = make_backend(c, "truth");
  const fs::path dst = need(c, "out");
  StageReport rep;
  Sim2 model;
  try {
    const CorrespondenceSet cs = match_density(dm, fp, *backend, rg, c.localize_params(), rep, &model);
    io::write_json(dst, {{"ok", true},
                         {"backend", backend->name()},
                         {"density_to_floorplan", io::to_json(model)},
                         {"correspondences", io::to_json(cs)},
                         {"report", io::to_json(rep)}});
  } catch (const StageError&) {
    io::write_json(dst, {{"ok", false}, {"backend", backend->name()}, {"report", io::to_json(rep)}});
    throw;
  }
  out << "match: " << rep.queries << " queries, " << rep.reliable << " reliable, " << rep.inliers
      << " inliers -> " << dst.string() << "\n";
  return kOk;
}

int cmd_align(const RunConfig& c, std::ostream& out) {
  const Floorplan fp = io::read_image(need(c, "floorplan"));
  struct Job {
    std::string scene, sidecar, truth;
  };
  std::vector<Job> jobs{{"scene", "sidecar", "truth"}};
  if (maybe(c, "scene2")) jobs.push_back({"scene2", "sidecar2", "truth2"});

  std::vector<ReconstructedScene> scenes;
  std::vector<std::unique_ptr<FeatureBackend>> backends;
  for (const Job& j : jobs) {
    scenes.push_back(io::load_scene(need(c, j.scene), need(c, j.sidecar)));
    backends.push_back(make_backend(c, j.truth));
  }

  std::vector<std::optional<LocalizeResult>> results(jobs.size());
  std::vector<std::optional<StageError>> errors(jobs.size());
  parallel_for(jobs.size(), c.jobs, [&](std::size_t i) {
    try {
      results[i] = localize(scenes[i], fp, *backends[i], c.localize_params());
    } catch (const StageError& e) {
      errors[i] = e;
    }
  });

  json scenes_json = json::array();
  io::PlyCloud merged;
  std::vector<Points3> blocks;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    json sj = results[i] ? io::to_json(*results[i]) : json{{"all_ok", false}, {"chunks", json::array()}};
    sj["backend"] = backends[i]->name();
    if (errors[i]) sj["error"] = {{"stage", errors[i]->stage()}, {"message", errors[i]->what()}};
    scenes_json.push_back(sj);
    if (results[i])
      for (const ChunkResult& ch : results[i]->chunks)
        if (ch.ok) {
          blocks.push_back(ch.aligned.points);
          merged.image_id.insert(merged.image_id.end(), std::size_t(ch.aligned.points.rows()), int(i));
        }
  }
  const fs::path dst = need(c, "out");
  io::write_json(dst, jobs.size() == 1 ? scenes_json[0] : json{{"frame", "floorplan_pixels"}, {"scenes", scenes_json}});

  if (const auto ply = maybe(c, "aligned_ply"); ply && !blocks.empty()) {
    Eigen::Index total = 0;
    for (const Points3& b : blocks) total += b.rows();
    merged.points.resize(total, 3);
    Eigen::Index at = 0;
    for (const Points3& b : blocks) {
      merged.points.middleRows(at, b.rows()) = b;
      at += b.rows();
    }
    merged.confidence = VecX::Ones(total);
    io::write_ply(*ply, merged);
  }
  if (const auto svg = maybe(c, "svg_out"); svg && results[0])
    for (const ChunkResult& ch : results[0]->chunks)
      if (ch.ok) {
        io::write_svg(*svg, fp, ch);
        break;
      }

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    out << "align scene " << i + 1 << ": ";
    if (errors[i]) out << "failed at " << errors[i]->stage() << "\n";
    else {
      std::size_t ok = 0;
      for (const ChunkResult& ch : results[i]->chunks) ok += ch.ok;
      out << ok << "/" << results[i]->chunks.size() << " chunks aligned\n";
    }
  }
  for (const auto& e : errors)
    if (e) throw *e;
  return kOk;
}

json outcome_json(const std::vector<PoseEval>& cams, const Points2& pred, const Points2& gt, double diag) {
  json j = io::pose_metrics_json(cams);
  if (pred.rows() > 0) j["camera_pck"] = io::pck_json(pck_rmse(pred, gt, diag));
  return j;
}

Sim2 read_sim2(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::ParseError, std::string("result lacks ") + key);
  return io::sim2_from_json(j.at(key));
}

// Scores one localize result (as written by align) against its truth.
json eval_localize(const json& res, const synth::Truth& truth, double diag) {
  std::vector<PoseEval> cams;
  std::vector<std::pair<Vec2, Vec2>> pairs;
  json chunks = json::array();
  for (const json& ch : res.at("chunks")) {
    if (!ch.value("ok", false)) {
      chunks.push_back({{"ok", false}});
      cams.insert(cams.end(), ch.at("image_count").get<std::size_t>(), PoseEval{180.0, 1.0, {}});
      continue;
    }
    SceneOutcome o;
    o.estimate = read_sim2(ch, "density_to_floorplan");
    const Sim2 w2g = read_sim2(ch, "density_world_to_grid");
    o.truth = compose(truth.aligned_to_floorplan(meta_rotation(ch)), w2g.inverse());
    sim2_errors(o);
    chunks.push_back({{"ok", true},
                      {"theta_err_deg", o.theta_err_deg},
                      {"scale_rel_err", o.scale_rel_err},
                      {"translation_err_px", o.translation_err_px},
                      {"exact", o.theta_err_deg <= 0.5 && o.scale_rel_err <= 0.005 && o.translation_err_px <= 1.0}});
    std::vector<CameraObs> obs;
    for (const json& cam : ch.at("cameras")) {
      const auto pos = cam.at("position").get<std::vector<double>>();
      if (pos.size() != 2) throw Error(ErrorCode::ParseError, "camera position needs 2 numbers");
      obs.push_back({cam.at("image_id").get<int>(), Vec2(pos[0], pos[1]), cam.at("yaw_rad").get<double>()});
    }
    score_cameras(obs, truth, diag, cams, &pairs);
  }
  Points2 pred(Eigen::Index(pairs.size()), 2), gtp(Eigen::Index(pairs.size()), 2);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    pred.row(Eigen::Index(k)) = pairs[k].first.transpose();
    gtp.row(Eigen::Index(k)) = pairs[k].second.transpose();
  }
  return {{"chunks", chunks}, {"cameras", outcome_json(cams, pred, gtp, diag)}};
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  const fs::path truth_path = need(c, "truth");
  const json gt = io::read_json(truth_path);
  const synth::Truth truth = load_truth(truth_path);
  double diag = 0.0;
  if (const auto fp = maybe(c, "floorplan")) diag = io::read_image(*fp).diagonal();
  else if (gt.contains("diagonal")) diag = gt.at("diagonal").get<double>();
  else config_fail("pass --floorplan to get the diagonal");

  const json res = io::read_json(need(c, "result"));
  json report = json::object();

  if (res.contains("scenes")) {
    const json& scenes = res.at("scenes");
    if (scenes.size() != 2) throw Error(ErrorCode::ParseError, "expected two scenes");
    report["scenes"] = {eval_localize(scenes[0], truth, diag),
                        eval_localize(scenes[1], load_truth(need(c, "truth2")), diag)};
  } else if (res.contains("chunks")) {
    report = eval_localize(res, truth, diag);
  } else if (res.contains("correspondences")) {
    // Match output: score the reliable predictions against the true map.
    const json meta = io::read_json(need(c, "density_meta"));
    const Sim2 w2g = io::sim2_from_json(meta.at("world_to_grid"));
    const Sim2 d2f = compose(truth.aligned_to_floorplan(meta_rotation(meta)), w2g.inverse());
    const CorrespondenceSet cs = io::correspondences_from_json(res.at("correspondences"));
    std::vector<Eigen::Index> keep;
    for (std::size_t i = 0; i < cs.size(); ++i)
      if (cs[i].reliable) keep.push_back(Eigen::Index(i));
    Points2 pred(Eigen::Index(keep.size()), 2), gtp(Eigen::Index(keep.size()), 2);
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const Correspondence& m = cs[std::size_t(keep[k])];
      pred.row(Eigen::Index(k)) = m.pf.transpose();
      gtp.row(Eigen::Index(k)) = d2f(m.pd).transpose();
    }
    if (!keep.empty()) report["reliable_pck"] = io::pck_json(pck_rmse(pred, gtp, diag));
    if (res.contains("density_to_floorplan")) {
      SceneOutcome o;
      o.estimate = io::sim2_from_json(res.at("density_to_floorplan"));
      o.truth = d2f;
      sim2_errors(o);
      report["model"] = {{"theta_err_deg", o.theta_err_deg},
                         {"scale_rel_err", o.scale_rel_err},
                         {"translation_err_px", o.translation_err_px}};
    }
  } else {
    throw Error(ErrorCode::ParseError, "result has neither chunks nor correspondences");
  }

  if (const auto pred = maybe(c, "pred_ply")) {
    const Cloud p = io::read_ply(*pred).points, g = io::read_ply(need(c, "gt_ply")).points;
    const ReconEval r = chamfer_fscore(p, g, 10000, kFscoreThresholds, c.resolved_seed());
    json f = json::object();
    for (const auto& [t, v] : r.fscore) f[io::json(t).dump()] = v;
    report["reconstruction"] = {{"accuracy", r.accuracy}, {"completeness", r.completeness},
                                {"overall", r.overall}, {"fscore", f}};
  }

  const json::string_t text = report.dump(2);
  if (const auto dst = maybe(c, "out")) io::write_json(*dst, report);
  out << text << "\n";
  return kOk;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  const std::uint64_t seed = c.resolved_seed();
  const fs::path dst = need(c, "out");
  const auto log = maybe(c, "log");
  if (log) {
    if (log->has_parent_path()) fs::create_directories(log->parent_path());
    std::ofstream(*log, std::ios::trunc);
  }
  const auto corpus = make_corpus(c.corpus_samples, seed, c.corpus);
  TrainConfig t = c.train;
  t.loss = c.loss;
  t.seed = seed;
  try {
    const TrainResult r = train_toy(corpus, c.encoder, t, [&](const StepLog& s) {
      if (log) io::append_json_line(*log, io::to_json(s));
    });
    io::save_encoder(dst, r.encoder);
    const auto& l = r.log;
    const std::size_t w = std::min<std::size_t>(50, l.size());
    double head = 0, tail = 0;
    for (std::size_t i = 0; i < w; ++i) head += l[i].feat, tail += l[l.size() - 1 - i].feat;
    out << "train: " << l.size() << " steps, mean feat over first/last " << w << ": " << head / double(w)
        << " / " << tail / double(w) << " -> " << dst.string() << "\n";
  } catch (const NonFiniteLossError& e) {
    io::save_encoder(dst, e.last_good());
    throw;
  }
  return kOk;
}

int cmd_sweep(const RunConfig& c, std::size_t scenes, std::ostream& out) {
  const std::vector<SweepRow> rows = run_sweep(c, scenes, c.resolved_seed());
  std::ostringstream csv;
  csv << "rho_conf,rho_xz,gamma,scenes,successes,success_rate\n";
  double best = 0.0, worst = 1.0;
  for (const SweepRow& r : rows) {
    csv << r.rho_conf << "," << r.rho_xz << "," << r.gamma << "," << r.scenes << "," << r.successes << ","
        << r.rate() << "\n";
    best = std::max(best, r.rate());
    worst = std::min(worst, r.rate());
  }
  if (const auto dst = maybe(c, "out")) {
    if (dst->has_parent_path()) fs::create_directories(dst->parent_path());
    std::ofstream os(*dst);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + dst->string());
    os << csv.str();
  } else {
    out << csv.str();
  }
  out << "sweep: " << rows.size() << " cells, best " << best << ", worst " << worst << "\n";
  return kOk;
}

// --- argument plumbing -------------------------------------------------------

std::optional<std::string> prescan_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

void path_flag(CLI::App* app, RunConfig& c, const std::string& key, const std::string& help) {
  std::string flag = key;
  std::replace(flag.begin(), flag.end(), '_', '-');
  app->add_option("--" + flag, c.paths[key], help);
}

void localize_flags(CLI::App* app, RunConfig& c) {
  app->add_option("--rho-conf", c.filter.rho_conf, "confidence percentile cut");
  app->add_option("--rho-xz", c.filter.rho_xz, "horizontal percentile trim");
  app->add_option("--gamma", c.raster.gamma, "density gamma");
  app->add_option("--height", c.raster.height, "density rows (0: floorplan)");
  app->add_option("--width", c.raster.width, "density cols (0: floorplan)");
  app->add_option("--queries", c.queries, "query count");
  app->add_option("--tau", c.tau, "soft-match temperature");
  app->add_option("--ransac-iters", c.ransac.iterations, "RANSAC iterations");
  app->add_option("--ransac-threshold", c.ransac.inlier_threshold, "inlier threshold, px (0: diagonal fraction)");
  app->add_option("--min-inliers", c.ransac.min_inliers, "minimum consensus");
  app->add_option("--chunk-size", c.chunk_size, "images per chunk");
  app->add_option("--backend", c.backend.kind, "oracle | encoder | files");
  app->add_option("--patch", c.backend.patch, "oracle patch size");
  path_flag(app, c, "truth", "synthetic truth (oracle backend)");
  path_flag(app, c, "encoder", "trained encoder JSON (encoder backend)");
  path_flag(app, c, "fmap_density", "density FMAP (files backend)");
  path_flag(app, c, "fmap_floorplan", "floorplan FMAP (files backend)");
}

void synth_flags(CLI::App* app, RunConfig& c) {
  app->add_option("--rooms", c.synth.n_rooms, "room count (0: 2 + seed % 5)");
  app->add_option("--size", c.synth.size, "floorplan side, px");
  app->add_option("--images", c.synth.scene.n_images, "images per scene");
  app->add_option("--points", c.synth.scene.points_per_image, "points per image");
  app->add_option("--noise", c.synth.scene.noise_sigma_px, "point noise sigma, floorplan px");
  app->add_option("--outliers", c.synth.scene.outlier_frac, "planted outlier fraction");
  app->add_option("--gravity-jitter", c.synth.scene.gravity_jitter_deg, "gravity vote jitter, degrees");
  app->add_option("--gravity-outliers", c.synth.scene.gravity_outlier_frac, "random gravity vote fraction");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    if (const auto path = prescan_config(args)) cfg = load_config(*path);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kConfig;
  }

  CLI::App app{"Align 3D reconstructions to 2D floorplans."};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  std::string config_path;
  app.add_option("--config", config_path, "JSON run config; flags override it");
  app.add_option("--seed", cfg.seed, "seed (default: PLANEALIGN_SEED, then 1)");
  app.add_option("--jobs", cfg.jobs, "worker threads for scene-level work");

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic scene, floorplan and truth");
  path_flag(synth_cmd, cfg, "out_dir", "output directory");
  synth_flags(synth_cmd, cfg);
  synth_cmd->add_option("--queries", cfg.queries, "truth correspondences to write");
  bool synth_pair = false;
  synth_cmd->add_flag("--pair", synth_pair, "also write a second reconstruction of the same layout");

  auto* density_cmd = app.add_subcommand("density", "rasterize a reconstruction into a density map");
  path_flag(density_cmd, cfg, "scene", "points PLY");
  path_flag(density_cmd, cfg, "sidecar", "camera/gravity JSON");
  path_flag(density_cmd, cfg, "floorplan", "floorplan image (sets the raster size)");
  path_flag(density_cmd, cfg, "density", "output 16-bit PGM");
  path_flag(density_cmd, cfg, "density_meta", "output JSON sidecar");
  density_cmd->add_option("--rho-conf", cfg.filter.rho_conf, "confidence percentile cut");
  density_cmd->add_option("--rho-xz", cfg.filter.rho_xz, "horizontal percentile trim");
  density_cmd->add_option("--gamma", cfg.raster.gamma, "density gamma");
  density_cmd->add_option("--height", cfg.raster.height, "rows (0: floorplan)");
  density_cmd->add_option("--width", cfg.raster.width, "cols (0: floorplan)");

  auto* match_cmd = app.add_subcommand("match", "match a density map to a floorplan and fit Sim(2)");
  path_flag(match_cmd, cfg, "density", "density PGM");
  path_flag(match_cmd, cfg, "density_meta", "density JSON sidecar");
  path_flag(match_cmd, cfg, "floorplan", "floorplan image");
  path_flag(match_cmd, cfg, "out", "output JSON");
  localize_flags(match_cmd, cfg);

  auto* align_cmd = app.add_subcommand("align", "localize one or two reconstructions in a floorplan");
  path_flag(align_cmd, cfg, "scene", "points PLY");
  path_flag(align_cmd, cfg, "sidecar", "camera/gravity JSON");
  path_flag(align_cmd, cfg, "scene2", "second reconstruction PLY");
  path_flag(align_cmd, cfg, "sidecar2", "second sidecar JSON");
  path_flag(align_cmd, cfg, "truth2", "truth for the second scene (oracle backend)");
  path_flag(align_cmd, cfg, "floorplan", "floorplan image");
  path_flag(align_cmd, cfg, "out", "output JSON");
  path_flag(align_cmd, cfg, "aligned_ply", "aligned points in floorplan pixels");
  path_flag(align_cmd, cfg, "svg_out", "SVG overlay of the first aligned chunk");
  localize_flags(align_cmd, cfg);

  auto* eval_cmd = app.add_subcommand("eval", "score align or match output against truth");
  path_flag(eval_cmd, cfg, "result", "align or match JSON");
  path_flag(eval_cmd, cfg, "truth", "truth JSON from synth");
  path_flag(eval_cmd, cfg, "truth2", "truth for the second scene of a paired result");
  path_flag(eval_cmd, cfg, "floorplan", "floorplan image (diagonal)");
  path_flag(eval_cmd, cfg, "density_meta", "density sidecar (match results)");
  path_flag(eval_cmd, cfg, "pred_ply", "predicted points for reconstruction metrics");
  path_flag(eval_cmd, cfg, "gt_ply", "reference points for reconstruction metrics");
  path_flag(eval_cmd, cfg, "out", "metrics JSON");

  auto* train_cmd = app.add_subcommand("train", "train the toy encoder on a synthetic corpus");
  path_flag(train_cmd, cfg, "out", "encoder JSON");
  path_flag(train_cmd, cfg, "log", "per-step JSON lines");
  train_cmd->add_option("--steps", cfg.train.steps, "optimizer steps");
  train_cmd->add_option("--lr", cfg.train.lr, "learning rate");
  train_cmd->add_option("--batch", cfg.train.queries, "correspondences per step");
  train_cmd->add_option("--corpus", cfg.corpus_samples, "corpus size");
  train_cmd->add_option("--raster", cfg.corpus.size, "corpus raster side");
  train_cmd->add_option("--enc-patch", cfg.encoder.patch, "encoder patch size");

  std::size_t sweep_scenes = 10;
  auto* sweep_cmd = app.add_subcommand("sweep", "density hyperparameter grid on synthetic scenes");
  sweep_cmd->add_option("--scenes", sweep_scenes, "scenes per cell");
  path_flag(sweep_cmd, cfg, "out", "CSV table (default: stdout)");
  synth_flags(sweep_cmd, cfg);
  sweep_cmd->add_option("--queries", cfg.queries, "query count");
  sweep_cmd->add_option("--ransac-threshold", cfg.ransac.inlier_threshold, "inlier threshold, px");
  sweep_cmd->add_option("--patch", cfg.backend.patch, "oracle patch size");

  auto* config_cmd = app.add_subcommand("config", "print the effective configuration");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    validate(cfg);
    if (*synth_cmd) return cmd_synth(cfg, synth_pair, out);
    if (*density_cmd) return cmd_density(cfg, out);
    if (*match_cmd) return cmd_match(cfg, out);
    if (*align_cmd) return cmd_align(cfg, out);
    if (*eval_cmd) return cmd_eval(cfg, out);
    if (*train_cmd) return cmd_train(cfg, out);
    if (*sweep_cmd) return cmd_sweep(cfg, sweep_scenes, out);
    if (*config_cmd) {
      RunConfig shown = cfg;
      shown.seed = cfg.resolved_seed();
      std::erase_if(shown.paths, [](const auto& kv) { return kv.second.empty(); });
      out << to_json(shown).dump(2) << "\n";
      return kOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const json::exception& e) {
    err << "error: malformed input: " << e.what() << "\n";
    return kInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}

}  // namespace planealign::cli
