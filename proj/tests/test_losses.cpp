#include <doctest.h>

#include <planealign/losses.hpp>
#include <planealign/train.hpp>

#include "gradcheck.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

using namespace planealign;
using planealign::testing::check_gradient;

namespace {

MatX random_unit_rows(Eigen::Index n, Eigen::Index c, Rng& rng) {
  MatX m(n, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return normalized_rows(m);
}

MatX random_points(Eigen::Index n, double extent, Rng& rng) {
  MatX m(n, 2);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(0.0, extent);
  return m;
}

double huber_ref(double r, double d) {
  return std::abs(r) <= d ? 0.5 * r * r : d * (std::abs(r) - 0.5 * d);
}

SoftMatchResult make_pred(const MatX& coords, double w = 1.0) {
  return {Points2(coords), VecX::Constant(coords.rows(), w)};
}

}  // namespace

TEST_CASE("InfoNCE closed form for two pairs") {
  const MatX id = MatX::Identity(2, 2);
  CHECK(loss_feat(id, id, 1.0) == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(std::abs(loss_feat(id, id, 1.0) - 0.313262) < 1e-6);
}

TEST_CASE("InfoNCE is invariant to a shared permutation") {
  Rng rng(3);
  const MatX fd = random_unit_rows(9, 5, rng), ff = random_unit_rows(9, 5, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(9);
  perm.setIdentity();
  for (int i = 8; i > 0; --i) std::swap(perm.indices()[i], perm.indices()[int(rng.below(i + 1))]);
  CHECK(loss_feat(perm * fd, perm * ff, 0.07) == doctest::Approx(loss_feat(fd, ff, 0.07)).epsilon(1e-12));
}

TEST_CASE("InfoNCE rejects a single pair") {
  const MatX one = MatX::Identity(1, 3);
  CHECK_THROWS_AS(loss_feat(one, one, 0.07), Error);
}

TEST_CASE("soft match: saturated row picks one centroid, uniform row picks the centre") {
  FeatureMap fm = FeatureMap::zeros(32, 48, 16, 6);
  for (Eigen::Index k = 0; k < fm.cells(); ++k) fm.data(k, k) = 1.0;
  MatX fd = MatX::Zero(2, 6);
  fd(0, 4) = 1.0;
  const SoftMatchResult sharp = soft_match(fd.topRows(1), fm, 1e-4);
  CHECK((sharp.coords.row(0) - fm.centroid(4).transpose()).norm() < 1e-9);
  CHECK(sharp.weights[0] == doctest::Approx(1.0));

  const SoftMatchResult flat = soft_match(fd.bottomRows(1), fm, 0.07);
  CHECK(flat.coords(0, 0) == doctest::Approx(24.0));
  CHECK(flat.coords(0, 1) == doctest::Approx(16.0));
  CHECK(flat.weights[0] == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("soft match agrees with a direct-sum reference") {
  Rng rng(11);
  FeatureMap fm = FeatureMap::zeros(40, 56, 8, 7);
  fm.data = random_unit_rows(fm.cells(), 7, rng) * 1.7;
  const MatX fd = random_unit_rows(5, 7, rng);
  const SoftMatchResult got = soft_match(fd, fm, 0.2);
  const MatX fu = normalized_rows(fm.data);
  for (Eigen::Index i = 0; i < fd.rows(); ++i) {
    double z = 0.0, best = 0.0;
    Vec2 acc = Vec2::Zero();
    for (Eigen::Index k = 0; k < fm.cells(); ++k) z += std::exp(fd.row(i).dot(fu.row(k)) / 0.2);
    for (Eigen::Index k = 0; k < fm.cells(); ++k) {
      const double p = std::exp(fd.row(i).dot(fu.row(k)) / 0.2) / z;
      acc += p * fm.centroid(k);
      best = std::max(best, p);
    }
    CHECK((got.coords.row(i).transpose() - acc).norm() < 1e-9);
    CHECK(got.weights[i] == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("regression loss values") {
  const MatX gt = (MatX(3, 2) << 1, 2, 3, 4, 5, 6).finished();
  CHECK(loss_regr(make_pred(gt), Points2(gt), 1.0) == 0.0);

  const double delta = 0.8;
  MatX off = gt.topRows(1);
  off(0, 0) += 0.5 * delta;
  CHECK(loss_regr(make_pred(off, 0.3), Points2(gt.topRows(1)), delta) ==
        doctest::Approx(0.5 * 0.25 * delta * delta).epsilon(1e-12));

  Rng rng(5);
  const MatX pred = random_points(6, 10.0, rng), truth = random_points(6, 10.0, rng);
  double mean = 0.0;
  for (Eigen::Index i = 0; i < 6; ++i) mean += huber_ref((pred.row(i) - truth.row(i)).norm(), 1.0) / 6.0;
  CHECK(loss_regr(make_pred(pred, 0.4), Points2(truth), 1.0) == doctest::Approx(mean).epsilon(1e-12));
  CHECK_THROWS_AS(loss_regr(make_pred(pred, 0.0), Points2(truth), 1.0), Error);
}

TEST_CASE("structural losses vanish under similarities and flag reflections") {
  Rng rng(17);
  const MatX src = random_points(20, 30.0, rng);
  const Sim2 m(2.3, 1.1, Vec2(4.0, -7.0));
  const MatX pred = sim2_apply(m, Points2(src));
  Rng r1(1), r2(1);
  CHECK(loss_topo(make_pred(pred, 0.5), Points2(src), 20, 0.1, r1) <= 1e-9);
  CHECK(loss_geo(make_pred(pred, 0.5), Points2(src), 20, 0.1, r2) <= 1e-9);

  MatX mirrored = src;
  mirrored.col(0) *= -1.0;
  Rng r3(2);
  CHECK(loss_topo(make_pred(mirrored), Points2(src), 20, 0.1, r3) > 1e-3);
}

TEST_CASE("topology loss on one hand-built triplet") {
  // src right angle at vertex 0; pred opens it to 45 degrees.
  const MatX src = (MatX(3, 2) << 0, 0, 1, 0, 0, 1).finished();
  const MatX pred = (MatX(3, 2) << 0, 0, 1, 0, 1, 1).finished();
  ad::Tape t;
  const SoftMatchVars v{t.constant(pred), t.constant(MatX::Ones(3, 1))};
  const double got = loss_topo(v, src, {{0, 1, 2}}, 0.1).item();
  const double dc = std::sqrt(0.5) - 0.0, ds = std::sqrt(0.5) - 1.0;
  CHECK(got == doctest::Approx(huber_ref(dc, 0.1) + huber_ref(ds, 0.1)).epsilon(1e-12));
}

TEST_CASE("geometry loss on three points with one stretched pair") {
  const MatX src = (MatX(3, 2) << 0, 0, 1, 0, 0, 1).finished();
  const MatX pred = (MatX(3, 2) << 0, 0, 2, 0, 0, 1).finished();
  const std::vector<Pair> pairs{{0, 1}, {0, 2}, {1, 2}};
  ad::Tape t;
  const SoftMatchVars v{t.constant(pred), t.constant(MatX::Ones(3, 1))};
  const double got = loss_geo(v, src, pairs, 0.1).item();
  const double d[3] = {std::log(2.0), 0.0, std::log(std::sqrt(5.0) / std::sqrt(2.0))};
  const double mean = (d[0] + d[1] + d[2]) / 3.0;
  double want = 0.0;
  for (double x : d) want += huber_ref(x - mean, 0.1) / 3.0;
  CHECK(got == doctest::Approx(want).epsilon(1e-12));

  // Uniform scaling leaves every log-ratio equal.
  ad::Tape t2;
  const SoftMatchVars s{t2.constant(MatX(src * 2.0)), t2.constant(MatX::Ones(3, 1))};
  CHECK(loss_geo(s, src, pairs, 0.1).item() <= 1e-12);
}

TEST_CASE("curriculum boundaries") {
  CHECK(curriculum_stage(0.0) == CurriculumStage::FeatOnly);
  CHECK(curriculum_stage(std::nextafter(0.10, 0.0)) == CurriculumStage::FeatOnly);
  CHECK(curriculum_stage(0.10) == CurriculumStage::FeatRegr);
  CHECK(curriculum_stage(std::nextafter(0.20, 0.0)) == CurriculumStage::FeatRegr);
  CHECK(curriculum_stage(0.20) == CurriculumStage::Full);
  const LossConfig cfg;
  CHECK(cfg.lambda_feat == 1.0);
  CHECK(cfg.lambda_regr == 50.0);
  CHECK(cfg.lambda_topo == 10.0);
  CHECK(cfg.lambda_geo == 10.0);
  CHECK(cfg.tau == 0.07);
}

TEST_CASE("total loss: gating and weighted sum") {
  ad::Tape t;
  const ad::Var f = t.variable(MatX::Constant(1, 1, 0.3)), r = t.variable(MatX::Constant(1, 1, 0.2));
  const ad::Var p = t.variable(MatX::Constant(1, 1, 0.7)), g = t.variable(MatX::Constant(1, 1, 0.4));
  const LossConfig cfg;
  CHECK(total_loss(0.5, {f, r, p, g}, cfg).item() ==
        doctest::Approx(0.3 + 50 * 0.2 + 10 * 0.7 + 10 * 0.4).epsilon(1e-12));
  const ad::Var early = total_loss(0.05, {f, r, p, g}, cfg);
  CHECK(early.item() == doctest::Approx(0.3));
  t.backward(early);
  CHECK(r.grad()(0, 0) == 0.0);
  CHECK(p.grad()(0, 0) == 0.0);
  CHECK(g.grad()(0, 0) == 0.0);
  CHECK(f.grad()(0, 0) == 1.0);
}

// ---------------------------------------------------------------------------
// Gradients with respect to features

namespace {

struct Fixture {
  MatX fd, ff, grid_f, centroids, src, gt;
  std::vector<Triplet> triplets;
  std::vector<Pair> pairs;
};

Fixture fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture x;
  const int q = 12, c = 6, cells = 16;
  x.fd = random_unit_rows(q, c, rng);
  x.ff = random_unit_rows(q, c, rng);
  x.grid_f = random_unit_rows(cells, c, rng);
  x.centroids = random_points(cells, 4.0, rng);
  x.src = random_points(q, 4.0, rng);
  x.gt = random_points(q, 4.0, rng);
  x.triplets = sample_triplets(x.src, q, rng);
  x.pairs = sample_pairs(x.src, q, rng);
  return x;
}

// Features enter unnormalized and are normalized on the tape, as in training.
SoftMatchVars pred_of(const Fixture& x, const std::vector<ad::Var>& v, double tau) {
  return soft_match(ad::normalize_rows(v[0]), ad::normalize_rows(v[2]), x.centroids, tau);
}

}  // namespace

TEST_CASE("feature gradients match central differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Fixture x = fixture(seed);
    const double tau = 0.5;
    const std::vector<MatX> in{x.fd * 1.3, x.ff * 0.8, x.grid_f * 1.1};
    const std::vector<bool> all{true, true, true};

    const auto feat = check_gradient(
        [&](ad::Tape&, const std::vector<ad::Var>& v) {
          return loss_feat(ad::normalize_rows(v[0]), ad::normalize_rows(v[1]), tau);
        },
        in, all, seed);
    const auto regr = check_gradient(
        [&](ad::Tape&, const std::vector<ad::Var>& v) {
          return loss_regr(pred_of(x, v, tau), x.gt, 1.0);
        },
        in, all, seed);
    const auto topo = check_gradient(
        [&](ad::Tape&, const std::vector<ad::Var>& v) {
          return loss_topo(pred_of(x, v, tau), x.src, x.triplets, 0.1);
        },
        in, all, seed);
    // The mean log-ratio is held at its unperturbed value, as the stop-gradient demands.
    ad::Tape probe;
    std::vector<ad::Var> cv;
    for (const MatX& m : in) cv.push_back(probe.constant(m));
    const double mean = geo_mean_log_ratio(pred_of(x, cv, tau), x.src, x.pairs);
    const auto geo = check_gradient(
        [&](ad::Tape&, const std::vector<ad::Var>& v) {
          return loss_geo(pred_of(x, v, tau), x.src, x.pairs, 0.1, mean);
        },
        in, all, seed);
    CAPTURE(seed);
    CHECK(feat.rel_err < 1e-4);
    CHECK(regr.rel_err < 1e-4);
    CHECK(topo.rel_err < 1e-4);
    CHECK(geo.rel_err < 1e-4);
    CHECK(regr.analytic_norm > 0.0);
  }
}

TEST_CASE("geometry loss gradient treats the mean log-ratio as a constant") {
  Rng rng(23);
  const MatX src = random_points(8, 5.0, rng);
  const MatX pred0 = random_points(8, 5.0, rng);
  const MatX w = (MatX::Random(8, 1).array().abs() + 0.2).matrix();
  const std::vector<Pair> pairs = sample_pairs(src, 12, rng);

  ad::Tape tape;
  const ad::Var p = tape.variable(pred0);
  tape.backward(loss_geo({p, tape.constant(w)}, src, pairs, 0.1));
  const MatX analytic = p.grad();

  // Finite differences with the mean frozen at its value for pred0, and live.
  auto deltas = [&](const MatX& pr) {
    VecX d(Eigen::Index(pairs.size())), ww(Eigen::Index(pairs.size()));
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto [i, j] = pairs[k];
      d[Eigen::Index(k)] = std::log((pr.row(i) - pr.row(j)).norm() + 1e-12) -
                           std::log((src.row(i) - src.row(j)).norm());
      ww[Eigen::Index(k)] = w(i, 0) * w(j, 0);
    }
    return std::pair{d, ww};
  };
  auto value = [&](const MatX& pr, std::optional<double> frozen) {
    const auto [d, ww] = deltas(pr);
    const double mean = frozen ? *frozen : ww.dot(d) / ww.sum();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < d.size(); ++k) acc += ww[k] * huber_ref(d[k] - mean, 0.1);
    return acc / ww.sum();
  };
  const auto [d0, w0] = deltas(pred0);
  const double frozen_mean = w0.dot(d0) / w0.sum();

  MatX fd_frozen(8, 2), fd_live(8, 2);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < pred0.size(); ++i) {
    MatX up = pred0, down = pred0;
    up.data()[i] += h;
    down.data()[i] -= h;
    fd_frozen.data()[i] = (value(up, frozen_mean) - value(down, frozen_mean)) / (2 * h);
    fd_live.data()[i] = (value(up, std::nullopt) - value(down, std::nullopt)) / (2 * h);
  }
  CHECK((analytic - fd_frozen).norm() / fd_frozen.norm() < 1e-5);
  CHECK((analytic - fd_live).norm() / fd_live.norm() > 1e-3);
}

// ---------------------------------------------------------------------------
// Gradients with respect to encoder parameters

namespace {

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.patch = 8;
  c.embed = 4;
  c.context = 1;
  c.dilations = {1, 2};
  c.hidden = 6;
  c.channels = 4;
  return c;
}

TrainingSample random_sample(Rng& rng) {
  TrainingSample s;
  s.density = MatX(32, 32);
  s.floorplan = MatX(32, 32);
  for (Eigen::Index i = 0; i < s.density.size(); ++i) {
    s.density.data()[i] = rng.uniform();
    s.floorplan.data()[i] = rng.uniform();
  }
  s.density_to_floorplan = Sim2(1.0, rng.uniform(-0.2, 0.2), Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1)));
  return s;
}

Batch inside_batch(const TrainingSample& s, int q, Rng& rng) {
  Batch b{Points2(q, 2), Points2(q, 2)};
  for (int i = 0; i < q;) {
    const Vec2 pd(rng.uniform(4, 28), rng.uniform(4, 28));
    const Vec2 pf = sim2_apply(s.density_to_floorplan, pd);
    if (pf.minCoeff() < 0 || pf.maxCoeff() > 32) continue;
    b.pd.row(i) = pd.transpose();
    b.pf.row(i++) = pf.transpose();
  }
  return b;
}

// Smallest gap between the two largest soft-match logits over all queries.
double max_logit_gap(const ToyEncoder& enc, const TrainingSample& s, const Batch& b, double tau) {
  const MatX fd = sample_features(enc.encode(s.density), b.pd);
  const MatX logits = fd * normalized_rows(enc.encode(s.floorplan).data).transpose() / tau;
  double gap = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    VecX r = logits.row(i).transpose();
    std::partial_sort(r.data(), r.data() + 2, r.data() + r.size(), std::greater<>());
    gap = std::min(gap, r[0] - r[1]);
  }
  return gap;
}

}  // namespace

TEST_CASE("encoder parameter gradients match central differences for every loss") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    // The confidence weight is a row max; instances whose top two logits sit
    // within reach of the difference step straddle a kink and are redrawn.
    Rng rng(seed, 77);
    const ToyEncoder enc(small_encoder(), seed);
    TrainingSample sample = random_sample(rng);
    Batch batch = inside_batch(sample, 10, rng);
    while (max_logit_gap(enc, sample, batch, LossConfig{}.tau) < 0.05) {
      sample = random_sample(rng);
      batch = inside_batch(sample, 10, rng);
    }
    const LossConfig cfg;
    double mean = 0.0;
    {
      ad::Tape probe;
      Rng draws(seed, 5);
      mean = build_losses(enc, enc.bind(probe, false), sample, batch, 0.5, cfg, draws).geo_mean;
    }

    for (double frac : {0.05, 0.15, 0.5}) {
      for (int term = 0; term < 5; ++term) {
        auto f = [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
          Rng draws(seed, 5);  // identical triplets and pairs on every evaluation
          (void)tape;
          const LossGraph g = build_losses(enc, v, sample, batch, frac, cfg, draws, mean);
          switch (term) {
            case 0: return g.parts.feat;
            case 1: return g.parts.regr;
            case 2: return g.parts.topo;
            case 3: return g.parts.geo;
            default: return g.total;
          }
        };
        std::vector<MatX> in = enc.params();
        const auto res = check_gradient(f, in, std::vector<bool>(in.size(), true), seed * 31 + term, 6);
        CAPTURE(seed);
        CAPTURE(term);
        CAPTURE(frac);
        CHECK(res.rel_err < 1e-4);
        if (term < 4 && frac > 0.05) continue;  // parts do not depend on the gate
        if (term < 4) CHECK(res.analytic_norm > 0.0);
      }
    }
  }
}
