#include <planealign/densmap.hpp>
#include <planealign/synth.hpp>

#include <doctest.h>

#include "test_util.hpp"

#include <set>

using namespace planealign;
using namespace planealign::testing;
using namespace planealign::synth;

namespace {

double segment_distance(const Vec2& p, const Segment& s) {
  const Vec2 d = s.b - s.a;
  const double len2 = d.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - s.a).dot(d) / len2, 0.0, 1.0) : 0.0;
  return (p - (s.a + t * d)).norm();
}

double wall_distance(const Vec2& p, const std::vector<Segment>& walls) {
  double best = std::numeric_limits<double>::infinity();
  for (const Segment& s : walls) best = std::min(best, segment_distance(p, s));
  return best;
}

// Floorplan pixels hit by wall points from images [0, n_images), via planar truth.
std::set<std::pair<long, long>> covered_pixels(const SynthScene& ss, std::size_t n_images) {
  const GravityAlignment ga = gravity_align(ss.scene);
  const Sim2 a2f = ss.truth.aligned_to_floorplan(ga.rotation);
  std::set<std::pair<long, long>> hit;
  std::size_t row = 0;
  for (std::size_t i = 0; i < ga.scene.images.size(); ++i) {
    const Points3& p = ga.scene.images[i].points;
    for (Eigen::Index k = 0; k < p.rows(); ++k, ++row) {
      if (i >= n_images || ss.labels[row] != PointKind::Wall) continue;
      const Vec2 f = a2f(Vec2(p(k, 0), p(k, 2)));
      hit.insert({long(std::floor(f.x())), long(std::floor(f.y()))});
    }
  }
  return hit;
}

}  // namespace

TEST_CASE("layouts are seed-deterministic and connected") {
  const Layout a = gen_layout(11, 4, 128), b = gen_layout(11, 4, 128);
  CHECK(a.raster == b.raster);
  CHECK(a.hash() == b.hash());
  CHECK(a.rooms.size() == 4);
  CHECK(a.raster.rows() == 128);
  CHECK(a.wall_pixel_count() > 0);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CHECK(gen_layout(seed, 2, 96).connected());
    CHECK(gen_layout(seed, 6, 160).connected());
  }

  std::set<std::uint64_t> hashes;
  for (std::uint64_t seed = 0; seed < 100; ++seed) hashes.insert(gen_layout(seed, 4, 128).hash());
  CHECK(hashes.size() == 100);

  CHECK_THROWS_AS(gen_layout(1, 0, 128), Error);
  CHECK_THROWS_AS(gen_layout(1, 3, 32), Error);
}

TEST_CASE("scenes are seed-deterministic") {
  SceneParams p;
  p.n_images = 4;
  p.points_per_image = 300;
  p.noise_sigma_px = 0.5;
  p.outlier_frac = 0.05;
  const SynthScene a = make_scene(3, 3, 128, p), b = make_scene(3, 3, 128, p);
  CHECK(a.scene.all_points() == b.scene.all_points());
  CHECK(a.scene.all_confidences() == b.scene.all_confidences());
  CHECK(a.labels == b.labels);
  CHECK(a.scene.frame == Frame::Camera);
  CHECK(a.labels.size() == a.scene.point_count());
  CHECK(a.truth.true_poses.size() == 4);

  p.seed = 4;
  CHECK(gen_scene(a.layout, p).scene.all_points() != a.scene.all_points());
}

TEST_CASE("noise-free wall points land on the walls under planar truth") {
  SceneParams p;
  p.n_images = 6;
  p.points_per_image = 800;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const SynthScene ss = make_scene(seed, 4, 192, p);
    const GravityAlignment ga = gravity_align(ss.scene);
    const Sim2 a2f = ss.truth.aligned_to_floorplan(ga.rotation);
    const Points3 pts = ga.scene.all_points();
    double worst = 0.0;
    int walls = 0;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      if (ss.labels[std::size_t(i)] != PointKind::Wall) continue;
      worst = std::max(worst, wall_distance(a2f(Vec2(pts(i, 0), pts(i, 2))), ss.layout.walls));
      ++walls;
    }
    CHECK(walls > 100);
    CHECK(worst <= 1.0);
  }
}

TEST_CASE("default filtering removes nearly all planted outliers") {
  SceneParams p;
  p.n_images = 8;
  p.points_per_image = 1000;
  p.noise_sigma_px = 0.5;
  p.outlier_frac = 0.1;
  const SynthScene ss = make_scene(5, 4, 160, p);
  const GravityAlignment ga = gravity_align(ss.scene);
  const auto keep = filter_indices(ga.scene.all_points(), ga.scene.all_confidences(), FilterParams{});
  REQUIRE(!keep.empty());
  std::size_t outliers = 0;
  for (Eigen::Index i : keep) outliers += ss.labels[std::size_t(i)] == PointKind::Outlier;
  CHECK(double(outliers) / double(keep.size()) < 0.01);
}

TEST_CASE("one view sees less wall than all views") {
  SceneParams p;
  p.n_images = 10;
  p.points_per_image = 1000;
  const SynthScene ss = make_scene(8, 5, 192, p);
  const auto one = covered_pixels(ss, 1), all = covered_pixels(ss, ss.scene.images.size());
  CHECK(one.size() < all.size());
  CHECK(double(one.size()) < 0.6 * double(all.size()));
}

TEST_CASE("gravity votes follow the planted jitter and outliers") {
  SceneParams p;
  p.n_images = 40;
  p.points_per_image = 50;
  p.gravity_outlier_frac = 0.25;
  const SynthScene ss = make_scene(9, 3, 128, p);
  // A vote is clean when it agrees with the true up direction in the reference frame.
  const GravityAlignment ga = gravity_align(ss.scene);
  int clean = 0;
  for (const ImageData& img : ss.scene.images)
    clean += (ga.rotation * img.pose.rotation * img.gravity - Vec3::UnitY()).norm() < 1e-6;
  CHECK(clean >= 20);
  CHECK(clean < 40);
}
