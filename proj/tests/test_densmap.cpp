#include <planealign/densmap.hpp>
#include <planealign/synth.hpp>

#include <doctest.h>

#include "test_util.hpp"

#include <algorithm>

using namespace planealign;
using namespace planealign::testing;

namespace {

// Straight three-pass filter with sorted copies and explicit ranks.
std::vector<Eigen::Index> reference_filter(const Points3& p, const VecX& conf, const FilterParams& f) {
  auto rank_value = [](std::vector<double> v, double pct) {
    std::sort(v.begin(), v.end());
    const auto n = double(v.size());
    const auto rank = std::clamp<long>(long(std::ceil(pct / 100.0 * n)), 1L, long(n));
    return v[std::size_t(rank - 1)];
  };
  std::vector<Eigen::Index> a, b, c;
  std::vector<double> cs(conf.data(), conf.data() + conf.size());
  const double cmin = rank_value(cs, f.rho_conf);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    if (conf[i] >= cmin) a.push_back(i);
  std::vector<double> xs, zs;
  for (auto i : a) xs.push_back(p(i, 0)), zs.push_back(p(i, 2));
  const double xlo = rank_value(xs, f.rho_xz), xhi = rank_value(xs, 100 - f.rho_xz);
  const double zlo = rank_value(zs, f.rho_xz), zhi = rank_value(zs, 100 - f.rho_xz);
  for (auto i : a)
    if (p(i, 0) >= xlo && p(i, 0) <= xhi && p(i, 2) >= zlo && p(i, 2) <= zhi) b.push_back(i);
  std::vector<double> ys;
  for (auto i : b) ys.push_back(p(i, 1));
  const double ylo = rank_value(ys, f.rho_y_min), yhi = rank_value(ys, f.rho_y_max);
  for (auto i : b)
    if (p(i, 1) >= ylo && p(i, 1) <= yhi) c.push_back(i);
  return c;
}

Points3 random_cloud(Rng& rng, Eigen::Index n, VecX& conf) {
  Points3 p(n, 3);
  conf.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.row(i) << rng.uniform(-5, 5), rng.uniform(0, 3), rng.uniform(-4, 4);
    conf[i] = rng.uniform(0.6, 1.0);
    if (i % 10 == 0) {  // planted outliers: far away or low confidence
      p.row(i) *= 20.0;
      conf[i] = rng.uniform(0.0, 0.4);
    }
  }
  return p;
}

}  // namespace

TEST_CASE("nearest-rank percentile") {
  std::vector<double> v{5, 1, 4, 2, 3};
  CHECK(percentile_nearest_rank(v, 0) == 1);
  CHECK(percentile_nearest_rank(v, 20) == 1);
  CHECK(percentile_nearest_rank(v, 21) == 2);
  CHECK(percentile_nearest_rank(v, 100) == 5);
  std::vector<double> none;
  CHECK_THROWS_AS(percentile_nearest_rank(none, 50), Error);
}

TEST_CASE("filter defaults") {
  const FilterParams f;
  CHECK(f.rho_conf == 45.0);
  CHECK(f.rho_xz == 2.5);
  CHECK(f.rho_y_min == 20.0);
  CHECK(f.rho_y_max == 95.0);
  CHECK_THROWS_AS((FilterParams{100, 2.5, 20, 95}.validate()), Error);
  CHECK_THROWS_AS((FilterParams{45, 50, 20, 95}.validate()), Error);
  CHECK_THROWS_AS((FilterParams{45, 2.5, 95, 20}.validate()), Error);
}

TEST_CASE("zero thresholds keep everything") {
  Rng rng(1);
  VecX conf;
  const Points3 p = random_cloud(rng, 500, conf);
  const auto idx = filter_indices(p, conf, {0, 0, 0, 100});
  CHECK(idx.size() == 500);
}

TEST_CASE("three-pass filter matches an independent reference") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed, 1);
    VecX conf;
    const Points3 p = random_cloud(rng, 1000, conf);
    for (const FilterParams f : {FilterParams{}, FilterParams{30, 0, 10, 90}, FilterParams{75, 5, 0, 100}})
      CHECK(filter_indices(p, conf, f) == reference_filter(p, conf, f));
  }
}

TEST_CASE("raising the confidence percentile never adds survivors") {
  Rng rng(2);
  VecX conf;
  const Points3 p = random_cloud(rng, 2000, conf);
  for (double xz : {0.0, 2.5, 5.0}) {
    std::size_t prev = p.rows();
    for (double rc : {30.0, 45.0, 60.0, 75.0, 90.0}) {
      const std::size_t n = filter_indices(p, conf, {rc, xz, 20, 95}).size();
      CHECK(n <= prev);
      prev = n;
    }
  }
}

TEST_CASE("filter_points needs an aligned scene and survivors") {
  ReconstructedScene s;
  ImageData img;
  img.points = Points3::Random(10, 3);
  img.confidence = VecX::Ones(10);
  s.images.push_back(img);
  CHECK_THROWS_AS(filter_points(s, {}), Error);
  s.frame = Frame::GravityAligned;
  CHECK(filter_points(s, {0, 0, 0, 100}).rows() == 10);
  CHECK_THROWS_AS(filter_indices(Points3(0, 3), VecX(0), {}), Error);
}

TEST_CASE("gamma on hand counts") {
  // One point in cell A, four in cell B, none elsewhere.
  Points3 p(5, 3);
  p << 0.5, 0, 0.5, 2.5, 0, 0.5, 2.5, 0, 0.5, 2.5, 0, 0.5, 2.5, 0, 0.5;
  const Sim2 w2g(1.0, 0.0, Vec2::Zero());
  const MatX counts = count_grid(p, w2g, 1, 3);
  CHECK(counts(0, 0) == 1);
  CHECK(counts(0, 1) == 0);
  CHECK(counts(0, 2) == 4);

  DensityMap half = rasterize(p, {1, 3, 0.5, 0.0});
  // Bbox is [0.5, 2.5] in x; three cells along x, one in z.
  std::vector<double> cells(half.grid.data(), half.grid.data() + 3);
  std::sort(cells.begin(), cells.end());
  CHECK(cells[0] == 0.0);
  CHECK(cells[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(cells[2] == 1.0);
  const DensityMap lin = rasterize(p, {1, 3, 1.0, 0.0});
  CHECK(lin.grid.maxCoeff() == 1.0);
  CHECK(lin.grid.sum() == doctest::Approx(1.25));
}

TEST_CASE("rasterization invariants") {
  Rng rng(4);
  VecX conf;
  const Points3 p = random_cloud(rng, 3000, conf);
  const DensityMap a = rasterize(p, {64, 96, 0.5, 0.05});
  CHECK(a.grid.maxCoeff() == 1.0);
  CHECK(a.grid.minCoeff() >= 0.0);
  CHECK(a.world_to_grid.theta == 0.0);

  Points3 moved = p;
  moved.col(0).array() += 123.25;
  moved.col(2).array() -= 7.5;
  CHECK(rasterize(moved, {64, 96, 0.5, 0.05}).grid == a.grid);

  const DensityMap bright = rasterize(p, {64, 96, 0.25, 0.05});
  const DensityMap dim = rasterize(p, {64, 96, 0.75, 0.05});
  CHECK((bright.grid.array() >= dim.grid.array()).all());

  CHECK_THROWS_AS(rasterize(Points3(0, 3)), Error);
  CHECK_THROWS_AS(rasterize(p, {64, 64, 0.0, 0.05}), Error);
  CHECK_THROWS_AS(rasterize(p, {64, 64, 0.5, 0.3}), Error);
}

TEST_CASE("bbox fit is centred and aspect preserving") {
  Points3 p(2, 3);
  p << -2, 0, -1, 2, 1, 1;  // 4 x 2 in (x, z)
  const Sim2 m = fit_world_to_grid(p, 50, 100, 0.0);
  CHECK(m.theta == 0.0);
  CHECK(m.s == doctest::Approx(25.0));
  CHECK((m(Vec2(0, 0)) - Vec2(50, 25)).norm() < 1e-12);
}

TEST_CASE("camera_to_grid") {
  Rng rng(6);
  VecX conf;
  const Points3 p = random_cloud(rng, 400, conf);
  const DensityMap dm = rasterize(p, {80, 80, 0.5, 0.0});
  const Vec3 lo = p.colwise().minCoeff(), hi = p.colwise().maxCoeff();
  CameraPose centre;
  centre.center = (lo + hi) / 2.0;
  CHECK((camera_to_grid(dm, centre) - Vec2(40, 40)).norm() < 1e-9);

  for (int k = 0; k < 50; ++k) {
    CameraPose pose;
    pose.center = Vec3(rng.uniform(-5, 5), rng.uniform(0, 2), rng.uniform(-5, 5));
    const Vec2 g = camera_to_grid(dm, pose);
    const Vec2 manual = dm.world_to_grid.s * Vec2(pose.center.x(), pose.center.z()) + dm.world_to_grid.t;
    CHECK((g - manual).norm() < 1e-9);
    const Vec2 back = dm.world_to_grid.inverse()(g);
    CHECK((back - Vec2(pose.center.x(), pose.center.z())).norm() < 1e-9);
  }
}

TEST_CASE("gravity alignment undoes a planted tilt") {
  const synth::SynthScene ss = synth::make_scene(3, 3, 128, synth::SceneParams{});
  const GravityAlignment ga = gravity_align(ss.scene);
  CHECK(ga.scene.frame == Frame::GravityAligned);
  CHECK(ga.scene.point_count() == ss.scene.point_count());
  // Without jitter every vote, taken to the reference frame and rotated, points up.
  for (const ImageData& img : ss.scene.images)
    CHECK((ga.rotation * img.pose.rotation * img.gravity - Vec3::UnitY()).norm() < 1e-6);
  // Already-aligned input is passed through.
  const GravityAlignment again = gravity_align(ga.scene);
  CHECK(again.rotation == Mat3::Identity());
  CHECK_THROWS_AS(gravity_align(ReconstructedScene{}), Error);
}

TEST_CASE("floorplan gray and ink") {
  Floorplan rgb{{MatX::Constant(2, 2, 0.3), MatX::Constant(2, 2, 0.6), MatX::Constant(2, 2, 0.9)}};
  CHECK(rgb.gray()(1, 1) == doctest::Approx(0.6));
  CHECK(rgb.ink()(0, 0) == doctest::Approx(0.4));
  CHECK(rgb.diagonal() == doctest::Approx(std::sqrt(8.0)));
  CHECK_THROWS_AS(Floorplan{}.gray(), Error);
}
