#include <planealign/features.hpp>
#include <planealign/rng.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace planealign {

namespace {

Eigen::Index ceil_div(Eigen::Index a, Eigen::Index b) { return (a + b - 1) / b; }

}  // namespace

FeatureMap FeatureMap::zeros(Eigen::Index source_h, Eigen::Index source_w, int patch,
                             Eigen::Index channels) {
  FeatureMap fm;
  fm.patch = patch;
  fm.source_h = source_h;
  fm.source_w = source_w;
  fm.grid_h = ceil_div(source_h, patch);
  fm.grid_w = ceil_div(source_w, patch);
  fm.data = MatX::Zero(fm.grid_h * fm.grid_w, channels);
  return fm;
}

Vec2 FeatureMap::centroid(Eigen::Index cell) const {
  const Eigen::Index r = cell / grid_w, c = cell % grid_w;
  return {(double(c) + 0.5) * patch, (double(r) + 0.5) * patch};
}

Points2 FeatureMap::centroids() const {
  Points2 out(cells(), 2);
  for (Eigen::Index k = 0; k < cells(); ++k) out.row(k) = centroid(k).transpose();
  return out;
}

Eigen::Index FeatureMap::cell_at(const Vec2& p) const {
  const auto c = std::clamp<Eigen::Index>(Eigen::Index(std::floor(p.x() / patch)), 0, grid_w - 1);
  const auto r = std::clamp<Eigen::Index>(Eigen::Index(std::floor(p.y() / patch)), 0, grid_h - 1);
  return cell_index(r, c);
}

void FeatureMap::validate() const {
  if (patch <= 0) throw Error(ErrorCode::InvalidArgument, "patch must be positive");
  if (grid_h != ceil_div(source_h, patch) || grid_w != ceil_div(source_w, patch))
    throw Error(ErrorCode::InvalidArgument, "grid size does not match ceil(source / patch)");
  if (data.rows() != grid_h * grid_w)
    throw Error(ErrorCode::InvalidArgument, "feature rows do not match grid cells");
  if (data.cols() < 2) throw Error(ErrorCode::InvalidArgument, "need at least two channels");
}

SparseRows bilinear_weights(const FeatureMap& fm, const Points2& points) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(std::size_t(points.rows()) * 4);
  const double w_px = double(fm.source_w), h_px = double(fm.source_h);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const double x = points(i, 0), y = points(i, 1);
    if (!(x >= 0.0 && x <= w_px && y >= 0.0 && y <= h_px))
      throw Error(ErrorCode::OutOfBounds, "sample point outside the source image");
    const double u = x / fm.patch - 0.5, v = y / fm.patch - 0.5;
    const double u0 = std::floor(u), v0 = std::floor(v);
    const double au = u - u0, av = v - v0;
    const auto clamp_c = [&](double c) { return std::clamp<Eigen::Index>(Eigen::Index(c), 0, fm.grid_w - 1); };
    const auto clamp_r = [&](double r) { return std::clamp<Eigen::Index>(Eigen::Index(r), 0, fm.grid_h - 1); };
    const Eigen::Index c0 = clamp_c(u0), c1 = clamp_c(u0 + 1);
    const Eigen::Index r0 = clamp_r(v0), r1 = clamp_r(v0 + 1);
    trip.emplace_back(i, fm.cell_index(r0, c0), (1 - au) * (1 - av));
    trip.emplace_back(i, fm.cell_index(r0, c1), au * (1 - av));
    trip.emplace_back(i, fm.cell_index(r1, c0), (1 - au) * av);
    trip.emplace_back(i, fm.cell_index(r1, c1), au * av);
  }
  SparseRows w(points.rows(), fm.cells());
  w.setFromTriplets(trip.begin(), trip.end());  // duplicates (clamped taps) are summed
  return w;
}

SampledFeature sample_feature(const FeatureMap& fm, const Vec2& p) {
  Points2 q(1, 2);
  q.row(0) = p.transpose();
  const VecX raw = (bilinear_weights(fm, q) * fm.data).row(0).transpose();
  const double n = raw.norm();
  if (!(n > 1e-12)) return {VecX::Zero(raw.size()), true};
  return {raw / n, false};
}

MatX normalized_rows(const MatX& features) {
  MatX out = features;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 1e-12)
      out.row(i) /= n;
    else
      out.row(i).setZero();
  }
  return out;
}

MatX sample_features(const FeatureMap& fm, const Points2& points) {
  return normalized_rows(bilinear_weights(fm, points) * fm.data);
}

// ---------------------------------------------------------------------------

MatX im2patch(const MatX& image, int patch) {
  const Eigen::Index gh = ceil_div(image.rows(), patch), gw = ceil_div(image.cols(), patch);
  MatX x = MatX::Zero(gh * gw, Eigen::Index(patch) * patch);
  for (Eigen::Index r = 0; r < gh; ++r)
    for (Eigen::Index c = 0; c < gw; ++c)
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx) {
          const Eigen::Index py = r * patch + dy, px = c * patch + dx;
          if (py < image.rows() && px < image.cols())
            x(r * gw + c, Eigen::Index(dy) * patch + dx) = image(py, px);
        }
  return x;
}

namespace {

/// Cell offsets of the (2r+1)^2 window at every dilation; the centre only once.
std::vector<std::pair<int, int>> context_offsets(int radius, const std::vector<int>& dilations) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t k = 0; k < dilations.size(); ++k)
    for (int dr = -radius; dr <= radius; ++dr)
      for (int dc = -radius; dc <= radius; ++dc)
        if (k == 0 || dr != 0 || dc != 0) out.emplace_back(dr * dilations[k], dc * dilations[k]);
  return out;
}

/// Cell index for each (cell, offset); -1 outside the grid.
Eigen::MatrixXi neighbour_table(Eigen::Index gh, Eigen::Index gw,
                                const std::vector<std::pair<int, int>>& offsets) {
  Eigen::MatrixXi table(gh * gw, Eigen::Index(offsets.size()));
  for (Eigen::Index r = 0; r < gh; ++r)
    for (Eigen::Index c = 0; c < gw; ++c)
      for (std::size_t k = 0; k < offsets.size(); ++k) {
        const Eigen::Index rr = r + offsets[k].first, cc = c + offsets[k].second;
        const bool inside = rr >= 0 && rr < gh && cc >= 0 && cc < gw;
        table(r * gw + c, Eigen::Index(k)) = inside ? int(rr * gw + cc) : -1;
      }
  return table;
}

/// Row i of the output concatenates rows table(i, k) of `e` (zeros for -1).
ad::Var context_concat(const ad::Var& e, const Eigen::MatrixXi& table) {
  const MatX& ev = e.value();
  const Eigen::Index width = ev.cols(), k_count = table.cols();
  MatX out = MatX::Zero(table.rows(), width * k_count);
  for (Eigen::Index i = 0; i < table.rows(); ++i)
    for (Eigen::Index k = 0; k < k_count; ++k)
      if (table(i, k) >= 0) out.block(i, k * width, 1, width) = ev.row(table(i, k));
  const auto ie = e.id();
  return e.tape().record(std::move(out), {e}, [ie, table, width](ad::Tape& t, const MatX& g) {
    MatX de = MatX::Zero(t.value(ie).rows(), width);
    for (Eigen::Index i = 0; i < table.rows(); ++i)
      for (Eigen::Index k = 0; k < table.cols(); ++k)
        if (table(i, k) >= 0) de.row(table(i, k)) += g.block(i, k * width, 1, width);
    t.accumulate(ie, de);
  });
}

MatX xavier(Rng& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
  const double a = std::sqrt(6.0 / double(fan_in + fan_out));
  MatX w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
  return w;
}

}  // namespace

const char* ToyEncoder::group_name(int g) {
  static constexpr std::array<const char*, kGroups> names = {
      "embed.w", "embed.b", "hidden1.w", "hidden1.b", "hidden2.w", "hidden2.b", "head.w", "head.b"};
  return names.at(std::size_t(g));
}

ToyEncoder::ToyEncoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.patch < 1 || cfg.embed < 1 || cfg.context < 0 || cfg.hidden < 1 || cfg.channels < 2 ||
      cfg.dilations.empty() ||
      std::any_of(cfg.dilations.begin(), cfg.dilations.end(), [](int d) { return d < 1; }))
    throw Error(ErrorCode::InvalidArgument, "bad encoder configuration");
  Rng rng(seed, 0xe7c0de);
  const Eigen::Index in = Eigen::Index(cfg.patch) * cfg.patch;
  const auto ctx = Eigen::Index(context_offsets(cfg.context, cfg.dilations).size()) * cfg.embed;
  params_ = {xavier(rng, in, cfg.embed),          MatX::Zero(1, cfg.embed),
             xavier(rng, ctx, cfg.hidden),        MatX::Zero(1, cfg.hidden),
             xavier(rng, cfg.hidden, cfg.hidden), MatX::Zero(1, cfg.hidden),
             xavier(rng, cfg.hidden, cfg.channels), MatX::Zero(1, cfg.channels)};
  if (parameter_count() > 100000)
    throw Error(ErrorCode::InvalidArgument, "encoder exceeds 1e5 parameters");
}

std::size_t ToyEncoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += std::size_t(p.size());
  return n;
}

bool ToyEncoder::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](const MatX& p) { return p.allFinite(); });
}

std::vector<ad::Var> ToyEncoder::bind(ad::Tape& tape, bool trainable) const {
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(trainable ? tape.variable(p) : tape.constant(p));
  return vars;
}

ad::Var ToyEncoder::encode(ad::Tape& tape, const std::vector<ad::Var>& pv,
                           const MatX& image) const {
  const Eigen::Index gh = ceil_div(image.rows(), cfg_.patch);
  const Eigen::Index gw = ceil_div(image.cols(), cfg_.patch);
  const ad::Var x = tape.constant(im2patch(image, cfg_.patch));
  const ad::Var e = ad::add_row(ad::matmul(x, pv[kEmbedW]), pv[kEmbedB]);
  const ad::Var ctx = context_concat(e, neighbour_table(gh, gw, context_offsets(cfg_.context, cfg_.dilations)));
  const ad::Var h1 = ad::tanh(ad::add_row(ad::matmul(ctx, pv[kHidden1W]), pv[kHidden1B]));
  const ad::Var h2 = ad::tanh(ad::add_row(ad::matmul(h1, pv[kHidden2W]), pv[kHidden2B]));
  return ad::add_row(ad::matmul(h2, pv[kHeadW]), pv[kHeadB]);
}

FeatureMap ToyEncoder::encode(const MatX& image) const {
  ad::Tape tape;
  const ad::Var f = encode(tape, bind(tape, false), image);
  FeatureMap fm = FeatureMap::zeros(image.rows(), image.cols(), cfg_.patch, cfg_.channels);
  fm.data = f.value();
  return fm;
}

// ---------------------------------------------------------------------------

std::pair<FeatureMap, FeatureMap> oracle_features(
    const Sim2& density_to_floorplan, Eigen::Index density_h, Eigen::Index density_w,
    Eigen::Index floorplan_h, Eigen::Index floorplan_w, int patch,
    const OracleParams& params) {
  // A bank of Gaussian bumps of width rho has inner-product kernel
  // exp(-d^2 / (4 rho^2)), so rho = kernel / sqrt(2).
  const double rho = params.kernel_patches * patch / std::sqrt(2.0);
  const double pitch = params.anchor_spacing * patch;
  const double reach = 3.0 * rho;
  const auto nx = Eigen::Index(std::ceil((double(floorplan_w) + 2 * reach) / pitch)) + 1;
  const auto ny = Eigen::Index(std::ceil((double(floorplan_h) + 2 * reach) / pitch)) + 1;

  Rng rng(params.seed, 0x0dac1e);
  Points2 anchors(nx * ny, 2);
  for (Eigen::Index j = 0; j < ny; ++j)
    for (Eigen::Index i = 0; i < nx; ++i) {
      const double jx = rng.uniform(-1.0, 1.0) * params.anchor_jitter * pitch;
      const double jy = rng.uniform(-1.0, 1.0) * params.anchor_jitter * pitch;
      anchors.row(j * nx + i) << -reach + double(i) * pitch + jx, -reach + double(j) * pitch + jy;
    }

  auto embed = [&](const Points2& pts) {
    MatX f(pts.rows(), anchors.rows());
    const double inv = 1.0 / (2.0 * rho * rho);
    for (Eigen::Index p = 0; p < pts.rows(); ++p)
      for (Eigen::Index a = 0; a < anchors.rows(); ++a)
        f(p, a) = std::exp(-(anchors.row(a) - pts.row(p)).squaredNorm() * inv);
    return f;
  };

  FeatureMap fd = FeatureMap::zeros(density_h, density_w, patch, anchors.rows());
  FeatureMap ff = FeatureMap::zeros(floorplan_h, floorplan_w, patch, anchors.rows());
  fd.data = embed(sim2_apply(density_to_floorplan, fd.centroids()));
  ff.data = embed(ff.centroids());
  return {std::move(fd), std::move(ff)};
}

std::pair<FeatureMap, FeatureMap> OracleBackend::extract(const FeatureContext& ctx) const {
  const Sim2 gt = truth_(ctx.density, ctx.gravity_rotation);
  return oracle_features(gt, ctx.density.height(), ctx.density.width(),
                         ctx.floorplan.height(), ctx.floorplan.width(), patch_, params_);
}

std::pair<FeatureMap, FeatureMap> EncoderBackend::extract(const FeatureContext& ctx) const {
  return {encoder_.encode(ctx.density.grid), encoder_.encode(ctx.floorplan.ink())};
}

std::pair<FeatureMap, FeatureMap> FileBackend::extract(const FeatureContext& ctx) const {
  FeatureMap fd = read_features(density_);
  FeatureMap ff = read_features(floorplan_);
  // The file carries only the grid; the rasters give the true source size.
  auto attach = [](FeatureMap& fm, Eigen::Index h, Eigen::Index w) {
    if (ceil_div(h, fm.patch) == fm.grid_h && ceil_div(w, fm.patch) == fm.grid_w) {
      fm.source_h = h;
      fm.source_w = w;
    }
  };
  attach(fd, ctx.density.height(), ctx.density.width());
  attach(ff, ctx.floorplan.height(), ctx.floorplan.width());
  if (fd.channels() != ff.channels())
    throw Error(ErrorCode::InvalidArgument, "feature files disagree on channel count");
  return {std::move(fd), std::move(ff)};
}

// ---------------------------------------------------------------------------

namespace {

template <class T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) os.put(char((v >> (8 * i)) & 0xff));
}

template <class T>
T get_le(std::istream& is) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof())
      throw Error(ErrorCode::TruncatedFile, "feature file header is truncated");
    v |= T(std::uint8_t(c)) << (8 * i);
  }
  return v;
}

}  // namespace

void write_features(std::ostream& os, const FeatureMap& fm) {
  if (fm.patch <= 0 || fm.patch > 0xffff)
    throw Error(ErrorCode::InvalidArgument, "patch does not fit in u16");
  os.write("FMAP", 4);
  put_le<std::uint16_t>(os, kFmapVersion);
  put_le<std::uint16_t>(os, std::uint16_t(fm.patch));
  put_le<std::uint32_t>(os, std::uint32_t(fm.grid_h));
  put_le<std::uint32_t>(os, std::uint32_t(fm.grid_w));
  put_le<std::uint32_t>(os, std::uint32_t(fm.channels()));
  for (Eigen::Index i = 0; i < fm.data.rows(); ++i)
    for (Eigen::Index c = 0; c < fm.data.cols(); ++c)
      put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(float(fm.data(i, c))));
  if (!os) throw Error(ErrorCode::IoError, "failed writing feature file");
}

FeatureMap read_features(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4) throw Error(ErrorCode::TruncatedFile, "feature file is truncated");
  if (std::memcmp(magic, "FMAP", 4) != 0) throw Error(ErrorCode::BadMagic, "not an FMAP file");
  const auto version = get_le<std::uint16_t>(is);
  if (version != kFmapVersion)
    throw Error(ErrorCode::BadVersion, "unsupported FMAP version " + std::to_string(version));
  const auto patch = get_le<std::uint16_t>(is);
  const auto gh = get_le<std::uint32_t>(is);
  const auto gw = get_le<std::uint32_t>(is);
  const auto ch = get_le<std::uint32_t>(is);
  if (patch == 0 || gh == 0 || gw == 0 || ch == 0)
    throw Error(ErrorCode::ParseError, "zero dimension in FMAP header");
  const std::uint64_t count = std::uint64_t(gh) * gw * ch;  // < 2^96 cannot wrap in two steps
  if (std::uint64_t(gh) * gw > std::uint64_t(std::numeric_limits<std::int32_t>::max()) ||
      count > std::uint64_t(std::numeric_limits<std::int32_t>::max()))
    throw Error(ErrorCode::DimOverflow, "FMAP dimensions exceed the supported size");

  FeatureMap fm;
  fm.patch = patch;
  fm.grid_h = gh;
  fm.grid_w = gw;
  fm.source_h = Eigen::Index(gh) * patch;
  fm.source_w = Eigen::Index(gw) * patch;
  fm.data.resize(Eigen::Index(gh) * gw, ch);

  std::vector<char> payload(std::size_t(count) * 4);
  is.read(payload.data(), std::streamsize(payload.size()));
  if (std::size_t(is.gcount()) != payload.size())
    throw Error(ErrorCode::TruncatedFile, "FMAP payload is truncated");
  if (is.peek() != std::char_traits<char>::eof())
    throw Error(ErrorCode::ParseError, "trailing bytes after FMAP payload");

  const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint32_t bits = std::uint32_t(bytes[4 * k]) | std::uint32_t(bytes[4 * k + 1]) << 8 |
                               std::uint32_t(bytes[4 * k + 2]) << 16 |
                               std::uint32_t(bytes[4 * k + 3]) << 24;
    fm.data(Eigen::Index(k / ch), Eigen::Index(k % ch)) = double(std::bit_cast<float>(bits));
  }
  return fm;
}

void write_features(const std::filesystem::path& path, const FeatureMap& fm) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  write_features(os, fm);
}

FeatureMap read_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return read_features(is);
}

}  // namespace planealign
