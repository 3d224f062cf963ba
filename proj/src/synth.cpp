#include <planealign/synth.hpp>
#include <planealign/rng.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <queue>

namespace planealign::synth {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Stream ids keep independent parts of the generator from sharing draws.
enum Stream : std::uint64_t { kLayout = 1, kPlacement, kRays, kNoise, kOutliers, kGravity, kRecon };

void draw_wall(MatX& raster, const Segment& s) {
  const Eigen::Index n = raster.rows();
  const auto x0 = Eigen::Index(std::lround(std::min(s.a.x(), s.b.x())));
  const auto x1 = Eigen::Index(std::lround(std::max(s.a.x(), s.b.x())));
  const auto y0 = Eigen::Index(std::lround(std::min(s.a.y(), s.b.y())));
  const auto y1 = Eigen::Index(std::lround(std::max(s.a.y(), s.b.y())));
  // Two pixels straddling the center line, extended by one at the ends.
  for (Eigen::Index y = y0 - 1; y <= y1; ++y)
    for (Eigen::Index x = x0 - 1; x <= x1; ++x)
      if (y >= 0 && y < n && x >= 0 && x < n) raster(y, x) = 0.0;
}

}  // namespace

bool Layout::connected() const {
  if (rooms.empty()) return false;
  const Eigen::Index n = raster.rows();
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> seen =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
  auto center = [](const Box& b) {
    const Vec2 c = b.center();
    return std::pair<Eigen::Index, Eigen::Index>(Eigen::Index(c.y()), Eigen::Index(c.x()));
  };
  std::queue<std::pair<Eigen::Index, Eigen::Index>> queue;
  queue.push(center(rooms.front()));
  seen(queue.front().first, queue.front().second) = true;
  while (!queue.empty()) {
    const auto [r, c] = queue.front();
    queue.pop();
    constexpr int dr[] = {1, -1, 0, 0}, dc[] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const Eigen::Index rr = r + dr[k], cc = c + dc[k];
      if (rr < 0 || rr >= n || cc < 0 || cc >= n || seen(rr, cc) || raster(rr, cc) < 0.5) continue;
      seen(rr, cc) = true;
      queue.push({rr, cc});
    }
  }
  return std::all_of(rooms.begin(), rooms.end(), [&](const Box& b) {
    const auto [r, c] = center(b);
    return seen(r, c);
  });
}

std::size_t Layout::wall_pixel_count() const {
  return std::size_t((raster.array() < 0.5).count());
}

std::uint64_t Layout::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (Eigen::Index i = 0; i < raster.size(); ++i) {
    h ^= raster.data()[i] < 0.5 ? 1u : 0u;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Layout gen_layout(std::uint64_t seed, int n_rooms, Eigen::Index size) {
  if (n_rooms < 2 || n_rooms > 8) throw Error(ErrorCode::InvalidArgument, "n_rooms must be in [2, 8]");
  if (size < 64) throw Error(ErrorCode::InvalidArgument, "layout size must be at least 64");
  Rng rng(seed, kLayout);

  const double margin = std::round(0.125 * double(size));
  const double avail = double(size) - 2.0 * margin;
  const double w0 = std::round(avail * rng.uniform(0.75, 1.0));
  const double h0 = std::round(avail * rng.uniform(0.75, 1.0));
  const double ox = margin + std::round(rng.uniform(0.0, avail - w0));
  const double oy = margin + std::round(rng.uniform(0.0, avail - h0));

  Layout layout;
  layout.size = size;
  layout.rooms.push_back(Box(Vec2(ox, oy), Vec2(ox + w0, oy + h0)));
  const Vec2 p00(ox, oy), p10(ox + w0, oy), p11(ox + w0, oy + h0), p01(ox, oy + h0);
  layout.walls = {{p00, p10}, {p10, p11}, {p11, p01}, {p01, p00}};

  const double min_side = std::max(12.0, std::round(double(size) / 12.0));
  const double door = std::max(6.0, std::round(0.06 * double(size)));

  while (int(layout.rooms.size()) < n_rooms) {
    // Split the largest room across its longer side.
    std::size_t pick = 0;
    for (std::size_t i = 1; i < layout.rooms.size(); ++i)
      if (layout.rooms[i].volume() > layout.rooms[pick].volume()) pick = i;
    const Box room = layout.rooms[pick];
    const Vec2 lo = room.min(), hi = room.max();
    const int axis = (hi.x() - lo.x()) >= (hi.y() - lo.y()) ? 0 : 1;
    const double len = hi[axis] - lo[axis];
    if (len < 2.0 * min_side) break;
    const double cut = std::clamp(std::round(lo[axis] + len * rng.uniform(0.35, 0.65)),
                                  lo[axis] + min_side, hi[axis] - min_side);

    Box first = room, second = room;
    first.max()[axis] = cut;
    second.min()[axis] = cut;
    layout.rooms[pick] = first;
    layout.rooms.push_back(second);

    // The split wall runs along the other axis, with one doorway gap.
    const int along = 1 - axis;
    const double a0 = lo[along], a1 = hi[along];
    const double gap0 = std::round(rng.uniform(a0 + 2.0, a1 - 2.0 - door));
    auto point = [&](double a) {
      Vec2 p;
      p[axis] = cut;
      p[along] = a;
      return p;
    };
    if (gap0 > a0) layout.walls.push_back({point(a0), point(gap0)});
    if (gap0 + door < a1) layout.walls.push_back({point(gap0 + door), point(a1)});
  }

  layout.raster = MatX::Ones(size, size);
  for (const Segment& s : layout.walls) draw_wall(layout.raster, s);
  return layout;
}

// ---------------------------------------------------------------------------

namespace {

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

Vec3 random_unit(Rng& rng) {
  Vec3 v(rng.normal(), rng.normal(), rng.normal());
  while (v.norm() < 1e-9) v = Vec3(rng.normal(), rng.normal(), rng.normal());
  return v.normalized();
}

/// Distance along unit direction d from o to the nearest segment, if any.
std::optional<double> cast_ray(const Vec2& o, const Vec2& d, const std::vector<Segment>& walls) {
  std::optional<double> best;
  for (const Segment& s : walls) {
    const Vec2 e = s.b - s.a;
    const double denom = d.x() * e.y() - d.y() * e.x();
    if (std::abs(denom) < 1e-12) continue;
    const Vec2 w = s.a - o;
    const double t = (w.x() * e.y() - w.y() * e.x()) / denom;
    const double u = (w.x() * d.y() - w.y() * d.x()) / denom;
    if (t > 1e-9 && u >= 0.0 && u <= 1.0 && (!best || t < *best)) best = t;
  }
  return best;
}

}  // namespace

Sim2 Truth::aligned_to_floorplan(const Mat3& gravity_rotation) const {
  Points2 src(anchor_points.rows(), 2), dst(anchor_points.rows(), 2);
  const Mat3 r = gravity_rotation * recon_scale * recon_rotation;
  const Vec3 t = gravity_rotation * recon_translation;
  for (Eigen::Index i = 0; i < anchor_points.rows(); ++i) {
    const Vec3 p = anchor_points.row(i).transpose();
    const Vec3 a = r * p + t;
    src.row(i) << a.x(), a.z();
    dst.row(i) = world_to_floorplan(Vec2(p.x(), p.z())).transpose();
  }
  return sim2_umeyama(src, dst);
}

Sim2 Truth::density_to_floorplan(const DensityMap& dm, const Mat3& gravity_rotation) const {
  return compose(aligned_to_floorplan(gravity_rotation), dm.world_to_grid.inverse());
}

Points2 Truth::camera_positions() const {
  Points2 out(Eigen::Index(true_poses.size()), 2);
  for (std::size_t i = 0; i < true_poses.size(); ++i) {
    const Vec3& c = true_poses[i].center;
    out.row(Eigen::Index(i)) = world_to_floorplan(Vec2(c.x(), c.z())).transpose();
  }
  return out;
}

VecX Truth::camera_yaws() const {
  VecX out(Eigen::Index(true_poses.size()));
  for (std::size_t i = 0; i < true_poses.size(); ++i)
    out[Eigen::Index(i)] = wrap_angle(camera_yaw(true_poses[i].rotation) + world_to_floorplan.theta);
  return out;
}

SynthScene gen_scene(const Layout& layout, const SceneParams& p) {
  if (p.n_images < 1) throw Error(ErrorCode::InvalidArgument, "n_images must be >= 1");
  if (p.points_per_image < 1) throw Error(ErrorCode::InvalidArgument, "points_per_image must be >= 1");
  if (!(p.outlier_frac >= 0.0 && p.outlier_frac < 1.0))
    throw Error(ErrorCode::InvalidArgument, "outlier_frac must be in [0, 1)");

  SynthScene out;
  out.layout = layout;
  Truth& truth = out.truth;

  Rng recon_rng(p.seed, kRecon);
  const double px_per_m = recon_rng.uniform(15.0, 25.0);
  const Vec2 world_center(recon_rng.uniform(-5.0, 5.0), recon_rng.uniform(-5.0, 5.0));
  Sim2& a = truth.world_to_floorplan;
  a.s = px_per_m;
  a.theta = wrap_angle(recon_rng.uniform(-std::numbers::pi, std::numbers::pi));
  a.t = Vec2::Constant(0.5 * double(layout.size)) - a.linear() * world_center;
  const Sim2 to_world = a.inverse();

  truth.recon_rotation = random_rotation(recon_rng);
  truth.recon_scale = recon_rng.uniform(0.5, 2.0);
  truth.recon_translation = Vec3(recon_rng.uniform(-3, 3), recon_rng.uniform(-3, 3),
                                 recon_rng.uniform(-3, 3));

  std::vector<Segment> walls;
  walls.reserve(layout.walls.size());
  for (const Segment& s : layout.walls) walls.push_back({to_world(s.a), to_world(s.b)});

  // Planar truth anchors: wall samples every ~0.25 m at three heights.
  {
    std::vector<Vec3> anchors;
    for (const Segment& s : walls) {
      const double len = (s.b - s.a).norm();
      const int n = std::max(2, int(std::ceil(len / 0.25)));
      for (int k = 0; k <= n; ++k) {
        const Vec2 q = s.a + (s.b - s.a) * (double(k) / n);
        for (double y : {0.25, 0.5, 0.75}) anchors.emplace_back(q.x(), y * p.wall_height, q.y());
      }
    }
    truth.anchor_points.resize(Eigen::Index(anchors.size()), 3);
    for (std::size_t i = 0; i < anchors.size(); ++i)
      truth.anchor_points.row(Eigen::Index(i)) = anchors[i].transpose();
  }

  // World box for outliers: the floorplan extent plus 50% per side.
  Box world_box;
  for (double u : {0.0, double(layout.size)})
    for (double v : {0.0, double(layout.size)}) world_box.extend(to_world(Vec2(u, v)));
  const Vec2 pad = 0.5 * world_box.sizes();
  world_box.extend(world_box.min() - pad);
  world_box.extend(world_box.max() + pad);

  Rng place_rng(p.seed, kPlacement), ray_rng(p.seed, kRays), noise_rng(p.seed, kNoise),
      outlier_rng(p.seed, kOutliers), grav_rng(p.seed, kGravity);
  const double sigma_world = p.noise_sigma_px / px_per_m;
  const int n_outliers = int(std::lround(p.outlier_frac * p.points_per_image));
  const int n_inliers = p.points_per_image - n_outliers;
  double total_area = 0.0;
  for (const Box& b : layout.rooms) total_area += b.volume();

  out.scene.frame = Frame::Camera;
  for (int img = 0; img < p.n_images; ++img) {
    // Camera placement: area-weighted room, inner 60% of it.
    double pick = place_rng.uniform(0.0, total_area);
    std::size_t room = 0;
    while (room + 1 < layout.rooms.size() && pick > layout.rooms[room].volume()) {
      pick -= layout.rooms[room].volume();
      ++room;
    }
    const Box& box = layout.rooms[room];
    const Vec2 fp(box.min().x() + box.sizes().x() * place_rng.uniform(0.2, 0.8),
                  box.min().y() + box.sizes().y() * place_rng.uniform(0.2, 0.8));
    const Vec2 cxz = to_world(fp);
    const double cam_h = place_rng.uniform(1.3, 1.7);
    const Vec3 center(cxz.x(), cam_h, cxz.y());
    const double yaw = place_rng.uniform(-std::numbers::pi, std::numbers::pi);
    const Mat3 r_true = yaw_rotation(yaw) *
                        axis_angle(Vec3::UnitX(), place_rng.normal(0.0, 3.0 * kDeg)) *
                        axis_angle(Vec3::UnitZ(), place_rng.normal(0.0, 2.0 * kDeg));
    truth.true_poses.push_back({r_true, center, img});

    const double heading = camera_yaw(r_true);
    std::vector<Vec3> pts;
    std::vector<PointKind> kinds;
    pts.reserve(std::size_t(p.points_per_image));
    while (int(pts.size()) < n_inliers) {
      const double phi = heading + ray_rng.uniform(-0.5, 0.5) * p.fov_deg * kDeg;
      const double elev = ray_rng.uniform(-40.0, 40.0) * kDeg;
      const Vec2 d(std::cos(phi), std::sin(phi));
      const auto hit = cast_ray(cxz, d, walls);
      if (!hit) continue;
      const double h = cam_h + *hit * std::tan(elev);
      Vec3 q;
      PointKind kind;
      if (h < 0.0) {
        const Vec2 f = cxz + d * (cam_h / std::tan(-elev));
        q = Vec3(f.x(), 0.0, f.y());
        kind = PointKind::Floor;
      } else if (h > p.wall_height) {
        const Vec2 f = cxz + d * ((p.wall_height - cam_h) / std::tan(elev));
        q = Vec3(f.x(), p.wall_height, f.y());
        kind = PointKind::Ceiling;
      } else {
        const Vec2 f = cxz + d * *hit;
        q = Vec3(f.x(), h, f.y());
        kind = PointKind::Wall;
      }
      if (sigma_world > 0.0)
        q += Vec3(noise_rng.normal(), noise_rng.normal(), noise_rng.normal()) * sigma_world;
      pts.push_back(q);
      kinds.push_back(kind);
    }
    for (int k = 0; k < n_outliers; ++k) {
      pts.emplace_back(outlier_rng.uniform(world_box.min().x(), world_box.max().x()),
                       outlier_rng.uniform(-3.0, 6.0),
                       outlier_rng.uniform(world_box.min().y(), world_box.max().y()));
      kinds.push_back(PointKind::Outlier);
    }

    ImageData data;
    const Mat3 r_rec = truth.recon_rotation * r_true;
    data.pose = {r_rec, truth.recon_scale * (truth.recon_rotation * center) + truth.recon_translation,
                 img};
    data.points.resize(Eigen::Index(pts.size()), 3);
    data.confidence.resize(Eigen::Index(pts.size()));
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const Vec3 cam = truth.recon_scale * (r_true.transpose() * (pts[k] - center));
      data.points.row(Eigen::Index(k)) = cam.transpose();
      data.confidence[Eigen::Index(k)] = kinds[k] == PointKind::Outlier
                                             ? outlier_rng.uniform(0.0, 0.4)
                                             : noise_rng.uniform(0.6, 1.0);
    }
    out.labels.insert(out.labels.end(), kinds.begin(), kinds.end());

    // Gravity vote: true up in the camera frame, jittered or replaced.
    Vec3 up = r_true.transpose() * Vec3::UnitY();
    if (grav_rng.uniform() < p.gravity_outlier_frac) {
      up = random_unit(grav_rng);
    } else if (p.gravity_jitter_deg > 0.0) {
      Vec3 axis = up.cross(random_unit(grav_rng));
      while (axis.norm() < 1e-6) axis = up.cross(random_unit(grav_rng));
      up = axis_angle(axis, grav_rng.normal(0.0, p.gravity_jitter_deg * kDeg)) * up;
    }
    data.gravity = up.normalized();
    out.scene.images.push_back(std::move(data));
  }
  return out;
}

SynthScene make_scene(std::uint64_t seed, int n_rooms, Eigen::Index size,
                      const SceneParams& params) {
  SceneParams p = params;
  p.seed = seed;
  return gen_scene(gen_layout(seed, n_rooms, size), p);
}

}  // namespace planealign::synth
