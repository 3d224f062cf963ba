#include <planealign/features.hpp>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "test_util.hpp"

#include <fstream>
#include <sstream>

using namespace planealign;
using namespace planealign::testing;

namespace {

FeatureMap random_map(Rng& rng, Eigen::Index h, Eigen::Index w, int patch, Eigen::Index c) {
  FeatureMap fm = FeatureMap::zeros(h, w, patch, c);
  for (Eigen::Index i = 0; i < fm.data.size(); ++i) fm.data.data()[i] = rng.normal();
  return fm;
}

// Four-tap interpolation written out scalar by scalar, with edge clamping.
VecX reference_sample(const FeatureMap& fm, const Vec2& p) {
  const double gx = p.x() / fm.patch - 0.5, gy = p.y() / fm.patch - 0.5;
  const double x0 = std::floor(gx), y0 = std::floor(gy);
  const double fx = gx - x0, fy = gy - y0;
  VecX out = VecX::Zero(fm.channels());
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
      const auto r = std::clamp<Eigen::Index>(Eigen::Index(y0) + dy, 0, fm.grid_h - 1);
      const auto c = std::clamp<Eigen::Index>(Eigen::Index(x0) + dx, 0, fm.grid_w - 1);
      for (Eigen::Index k = 0; k < fm.channels(); ++k) out[k] += w * fm.data(fm.cell_index(r, c), k);
    }
  return out.normalized();
}

ErrorCode read_error(const std::string& bytes) {
  std::istringstream is(bytes);
  try {
    read_features(is);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a parse error");
  return ErrorCode::IoError;
}

std::string serialized(const FeatureMap& fm) {
  std::ostringstream os;
  write_features(os, fm);
  return os.str();
}

}  // namespace

TEST_CASE("grid shape follows the ceil law") {
  const FeatureMap fm = FeatureMap::zeros(70, 64, 16, 4);
  CHECK(fm.grid_h == 5);
  CHECK(fm.grid_w == 4);
  CHECK(fm.cells() == 20);
  CHECK(fm.centroid(fm.cell_index(1, 2)).isApprox(Vec2(40, 24)));
  CHECK(fm.cell_at(Vec2(63.9, 79.9)) == fm.cell_index(4, 3));
}

TEST_CASE("sampling at a patch centre returns that patch") {
  Rng rng(1);
  const FeatureMap fm = random_map(rng, 64, 48, 16, 6);
  for (Eigen::Index cell = 0; cell < fm.cells(); ++cell) {
    const SampledFeature s = sample_feature(fm, fm.centroid(cell));
    CHECK((s.feature - fm.data.row(cell).transpose().normalized()).norm() < 1e-12);
  }
}

TEST_CASE("constant map samples one vector everywhere") {
  FeatureMap fm = FeatureMap::zeros(32, 32, 8, 3);
  fm.data.rowwise() = Eigen::RowVector3d(1, 2, 2);
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    const Vec2 p(rng.uniform(0, 32), rng.uniform(0, 32));
    CHECK((sample_feature(fm, p).feature - Vec3(1, 2, 2) / 3.0).norm() < 1e-12);
  }
}

TEST_CASE("sampling matches the four-tap reference") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMap fm = random_map(rng, 50, 70, 8, 5);
    Points2 pts = random_points2(rng, 40, 0.0, 50.0);
    pts.col(0) *= 70.0 / 50.0;
    const MatX batch = sample_features(fm, pts);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const VecX ref = reference_sample(fm, pts.row(i).transpose());
      CHECK((batch.row(i).transpose() - ref).norm() < 1e-12);
      CHECK(batch.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("sampling errors and degenerate vectors") {
  const FeatureMap zero = FeatureMap::zeros(32, 32, 16, 4);
  const SampledFeature s = sample_feature(zero, Vec2(5, 5));
  CHECK(s.degenerate);
  CHECK(s.feature.norm() == 0.0);
  try {
    sample_feature(zero, Vec2(33, 5));
    FAIL("expected OutOfBounds");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OutOfBounds);
  }
  CHECK_NOTHROW(sample_feature(zero, Vec2(32, 32)));
}

TEST_CASE("encoder shape, determinism and bias-only output") {
  EncoderConfig cfg;
  cfg.patch = 16;
  const ToyEncoder enc(cfg, 9);
  CHECK(enc.parameter_count() <= 100000);
  Rng rng(4);
  MatX img(64, 64);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = rng.uniform();
  const FeatureMap a = enc.encode(img), b = enc.encode(img);
  CHECK(a.grid_h == 4);
  CHECK(a.grid_w == 4);
  CHECK(a.channels() == cfg.channels);
  CHECK(a.data == b.data);

  ToyEncoder biased = enc;
  biased.params()[ToyEncoder::kHeadW].setZero();
  biased.params()[ToyEncoder::kHeadB].row(0).setLinSpaced(1.0, 2.0);
  const FeatureMap z = biased.encode(MatX::Zero(64, 64));
  for (Eigen::Index cell = 0; cell < z.cells(); ++cell)
    CHECK(z.data.row(cell) == biased.params()[ToyEncoder::kHeadB].row(0));

  EncoderConfig bad = cfg;
  bad.dilations = {};
  CHECK_THROWS_AS(ToyEncoder(bad, 0), Error);
  bad.dilations = {0};
  CHECK_THROWS_AS(ToyEncoder(bad, 0), Error);
}

TEST_CASE("shifting the input by one patch shifts interior features by one cell") {
  EncoderConfig cfg;
  cfg.patch = 4;
  cfg.dilations = {1, 2};
  const ToyEncoder enc(cfg, 5);
  Rng rng(6);
  MatX img = MatX::Zero(64, 64);
  for (Eigen::Index r = 0; r < 64; ++r)
    for (Eigen::Index c = 0; c < 60; ++c) img(r, c) = rng.uniform();
  MatX shifted = MatX::Zero(64, 64);
  shifted.rightCols(60) = img.leftCols(60);

  const FeatureMap a = enc.encode(img), b = enc.encode(shifted);
  const int reach = cfg.context * 2;  // widest dilation
  for (Eigen::Index r = reach; r < a.grid_h - reach; ++r)
    for (Eigen::Index c = reach + 1; c < a.grid_w - reach; ++c)
      CHECK((b.data.row(b.cell_index(r, c)) - a.data.row(a.cell_index(r, c - 1))).norm() < 1e-12);
}

TEST_CASE("oracle features agree at corresponding points") {
  const Sim2 d2f(1.3, 0.4, Vec2(10, -5));
  const auto [fd, ff] = oracle_features(d2f, 128, 128, 160, 160, 8);
  Rng rng(7);
  int checked = 0;
  for (int k = 0; k < 200; ++k) {
    const Vec2 pd(rng.uniform(0, 128), rng.uniform(0, 128));
    const Vec2 pf = d2f(pd);
    if (pf.minCoeff() < 0 || pf.maxCoeff() > 160) continue;
    // Density features live on the density grid: compare at cell centres.
    const Eigen::Index cell = fd.cell_at(pd);
    const Vec2 pc = fd.centroid(cell), qf = d2f(pc);
    if (qf.minCoeff() < 0 || qf.maxCoeff() > 160) continue;
    const VecX a = fd.data.row(cell).normalized().transpose();
    FeatureMap one = ff;
    const VecX b = sample_feature(one, qf).feature;
    CHECK(a.dot(b) > 0.97);  // bilinear blend of neighbouring cells
    ++checked;
  }
  CHECK(checked > 50);

  // Floorplan features at two far-apart points are dissimilar.
  const VecX near_corner = sample_feature(ff, Vec2(10, 10)).feature;
  const VecX far_corner = sample_feature(ff, Vec2(150, 150)).feature;
  CHECK(near_corner.dot(far_corner) < 0.5);

  // Identity truth: each cell equals its counterpart exactly.
  const auto [gd, gf] = oracle_features(Sim2(), 64, 64, 64, 64, 8);
  CHECK((normalized_rows(gd.data) - normalized_rows(gf.data)).norm() < 1e-9);
}

TEST_CASE("FMAP round trip is bitwise") {
  Rng rng(8);
  FeatureMap fm = random_map(rng, 48, 80, 16, 7);
  fm.data = fm.data.cast<float>().cast<double>();  // representable payload
  const std::string bytes = serialized(fm);
  CHECK(bytes.size() == 20 + 3 * 5 * 7 * 4);
  std::istringstream is(bytes);
  const FeatureMap back = read_features(is);
  CHECK(back.data == fm.data);
  CHECK(back.patch == 16);
  CHECK(back.grid_h == 3);
  CHECK(back.grid_w == 5);
  CHECK(serialized(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "planealign_roundtrip.fmap";
  write_features(path, fm);
  CHECK(read_features(path).data == fm.data);
  std::filesystem::remove(path);
}

TEST_CASE("FMAP parse errors are distinct") {
  FeatureMap fm = FeatureMap::zeros(32, 32, 16, 2);
  const std::string good = serialized(fm);

  CHECK(read_error(good.substr(0, good.size() - 1)) == ErrorCode::TruncatedFile);
  CHECK(read_error(good.substr(0, 10)) == ErrorCode::TruncatedFile);
  CHECK(read_error("FMA") == ErrorCode::TruncatedFile);

  std::string magic = good;
  magic[0] = 'X';
  CHECK(read_error(magic) == ErrorCode::BadMagic);

  std::string version = good;
  version[4] = 2;
  CHECK(read_error(version) == ErrorCode::BadVersion);

  std::string huge = good;
  for (int i = 8; i < 20; ++i) huge[std::size_t(i)] = char(0xff);  // H', W', C at u32 max
  CHECK(read_error(huge) == ErrorCode::DimOverflow);

  CHECK(read_error(good + "x") == ErrorCode::ParseError);
}

TEST_CASE("exporter fixture: 512 px image at patch 16, C = 768") {
  const std::filesystem::path dir = PLANEALIGN_TEST_DATA;
  const FeatureMap fm = read_features(dir / "bridge_512.fmap");
  CHECK(fm.grid_h == 32);
  CHECK(fm.grid_w == 32);
  CHECK(fm.channels() == 768);
  CHECK(fm.patch == 16);
  CHECK(fm.source_h == 512);
  CHECK(fm.data.allFinite());

  std::ifstream js(dir / "bridge_512_norms.json");
  const auto meta = nlohmann::json::parse(js);
  const auto norms = meta.at("norms").get<std::vector<double>>();
  REQUIRE(norms.size() == 1024);
  for (Eigen::Index cell = 0; cell < fm.cells(); ++cell)
    CHECK(fm.data.row(cell).norm() == doctest::Approx(norms[std::size_t(cell)]).epsilon(1e-12));
}
