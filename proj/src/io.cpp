#include <planealign/io.hpp>

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace planealign::io {

namespace {

[[noreturn]] void parse_fail(const fs::path& path, const std::string& what) {
  throw Error(ErrorCode::ParseError, path.string() + ": " + what);
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream is(path, mode);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return is;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, mode);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return os;
}

// Shortest text that reads back to the same double.
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T get(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw Error(ErrorCode::ParseError, std::string("missing key \"") + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("key \"") + key + "\": " + e.what());
  }
}

json vec_json(const Eigen::Ref<const VecX>& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec3 vec3_from(const json& j, const char* key) {
  const auto v = get<std::vector<double>>(j, key);
  if (v.size() != 3) throw Error(ErrorCode::ParseError, std::string(key) + " needs 3 numbers");
  return Vec3(v[0], v[1], v[2]);
}

json mat3_json(const Mat3& m) {
  const Eigen::Matrix<double, 3, 3, Eigen::RowMajor> r = m;
  return std::vector<double>(r.data(), r.data() + 9);
}

Mat3 mat3_from(const json& j, const char* key) {
  const auto r = get<std::vector<double>>(j, key);
  if (r.size() != 9) throw Error(ErrorCode::ParseError, std::string(key) + " needs 9 numbers");
  return Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(r.data());
}

}  // namespace

json read_json(const fs::path& path) {
  std::ifstream is = open_in(path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    parse_fail(path, e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os = open_out(path);
  os << j.dump(2) << '\n';
}

void append_json_line(const fs::path& path, const json& j) {
  std::ofstream os = open_out(path, std::ios::app);
  os << j.dump() << '\n';
}

// ---------------------------------------------------------------------------

void write_ply(const fs::path& path, const PlyCloud& cloud) {
  const Eigen::Index n = cloud.points.rows();
  if (cloud.confidence.size() != n || Eigen::Index(cloud.image_id.size()) != n)
    throw Error(ErrorCode::InvalidArgument, "point cloud attribute sizes differ");
  std::ofstream os = open_out(path);
  os << "ply\nformat ascii 1.0\nelement vertex " << n
     << "\nproperty double x\nproperty double y\nproperty double z\n"
        "property double confidence\nproperty int image_id\nend_header\n";
  for (Eigen::Index i = 0; i < n; ++i)
    os << num(cloud.points(i, 0)) << ' ' << num(cloud.points(i, 1)) << ' '
       << num(cloud.points(i, 2)) << ' ' << num(cloud.confidence[i]) << ' '
       << cloud.image_id[std::size_t(i)] << '\n';
}

PlyCloud read_ply(const fs::path& path) {
  std::ifstream is = open_in(path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("ply", 0) != 0) parse_fail(path, "not a PLY file");

  long long count = -1;
  bool in_vertex = false;
  std::vector<std::string> props;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") parse_fail(path, "only ASCII PLY is supported");
    } else if (key == "element") {
      std::string name;
      long long c = -1;
      ls >> name >> c;
      in_vertex = name == "vertex";
      if (in_vertex) count = c;
      else if (count < 0) parse_fail(path, "vertex element must come first");
    } else if (key == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      if (type == "list") parse_fail(path, "list properties on vertices are not supported");
      props.push_back(name);
    } else if (key == "end_header") {
      break;
    }
  }
  if (count < 0) parse_fail(path, "no vertex element");

  auto column = [&](const std::string& name) {
    const auto it = std::find(props.begin(), props.end(), name);
    return it == props.end() ? -1 : int(it - props.begin());
  };
  const int cx = column("x"), cy = column("y"), cz = column("z");
  const int cc = column("confidence"), ci = column("image_id");
  if (cx < 0 || cy < 0 || cz < 0) parse_fail(path, "vertices need x, y and z");

  PlyCloud out{Points3(count, 3), VecX::Ones(count), std::vector<int>(std::size_t(count), 0)};
  std::vector<double> row(props.size());
  for (long long i = 0; i < count; ++i) {
    for (double& v : row)
      if (!(is >> v)) parse_fail(path, "truncated vertex list at vertex " + std::to_string(i));
    out.points.row(i) << row[std::size_t(cx)], row[std::size_t(cy)], row[std::size_t(cz)];
    if (cc >= 0) out.confidence[i] = row[std::size_t(cc)];
    if (ci >= 0) out.image_id[std::size_t(i)] = int(std::lround(row[std::size_t(ci)]));
  }
  if (!out.points.allFinite() || !out.confidence.allFinite()) parse_fail(path, "non-finite vertex");
  return out;
}

json scene_sidecar(const ReconstructedScene& scene) {
  json images = json::array();
  for (const ImageData& img : scene.images) {
    const Eigen::Matrix<double, 3, 3, Eigen::RowMajor> r = img.pose.rotation;
    images.push_back({{"image_id", img.pose.image_id},
                      {"rotation", std::vector<double>(r.data(), r.data() + 9)},
                      {"center", vec_json(img.pose.center)},
                      {"gravity", vec_json(img.gravity)}});
  }
  return {{"frame", scene.frame == Frame::Camera ? "camera" : "gravity_aligned"},
          {"images", images}};
}

void save_scene(const ReconstructedScene& scene, const fs::path& ply, const fs::path& sidecar) {
  scene.validate();
  PlyCloud cloud{scene.all_points(), scene.all_confidences(), {}};
  for (const ImageData& img : scene.images)
    cloud.image_id.insert(cloud.image_id.end(), std::size_t(img.points.rows()), img.pose.image_id);
  write_ply(ply, cloud);
  write_json(sidecar, scene_sidecar(scene));
}

ReconstructedScene load_scene(const fs::path& ply, const fs::path& sidecar) {
  const json meta = read_json(sidecar);
  ReconstructedScene scene;
  std::map<int, std::size_t> slot;
  try {
    const auto frame = get<std::string>(meta, "frame");
    if (frame == "camera") scene.frame = Frame::Camera;
    else if (frame == "gravity_aligned") scene.frame = Frame::GravityAligned;
    else throw Error(ErrorCode::ParseError, "unknown frame \"" + frame + "\"");
    for (const json& im : get<json>(meta, "images")) {
      ImageData img;
      img.pose.image_id = get<int>(im, "image_id");
      const auto r = get<std::vector<double>>(im, "rotation");
      if (r.size() != 9) throw Error(ErrorCode::ParseError, "rotation needs 9 numbers");
      img.pose.rotation = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(r.data());
      img.pose.center = vec3_from(im, "center");
      img.gravity = im.contains("gravity") ? vec3_from(im, "gravity") : Vec3::UnitY();
      if (!slot.emplace(img.pose.image_id, scene.images.size()).second)
        throw Error(ErrorCode::ParseError, "duplicate image_id " + std::to_string(img.pose.image_id));
      scene.images.push_back(std::move(img));
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ParseError) throw;
    parse_fail(sidecar, e.what());
  }

  const PlyCloud cloud = read_ply(ply);
  std::vector<std::vector<Eigen::Index>> rows(scene.images.size());
  for (std::size_t i = 0; i < cloud.image_id.size(); ++i) {
    const auto it = slot.find(cloud.image_id[i]);
    if (it == slot.end())
      parse_fail(ply, "vertex image_id " + std::to_string(cloud.image_id[i]) + " not in sidecar");
    rows[it->second].push_back(Eigen::Index(i));
  }
  for (std::size_t k = 0; k < scene.images.size(); ++k) {
    ImageData& img = scene.images[k];
    const auto n = Eigen::Index(rows[k].size());
    img.points.resize(n, 3);
    img.confidence.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      img.points.row(i) = cloud.points.row(rows[k][std::size_t(i)]);
      img.confidence[i] = cloud.confidence[rows[k][std::size_t(i)]];
    }
  }
  try {
    scene.validate();
  } catch (const Error& e) {
    parse_fail(sidecar, e.what());
  }
  return scene;
}

// ---------------------------------------------------------------------------

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
long long pnm_token(std::istream& is, const fs::path& path) {
  std::string tok;
  while (is >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(is, rest);
      continue;
    }
    try {
      return std::stoll(tok);
    } catch (const std::exception&) {
      parse_fail(path, "bad header token \"" + tok + "\"");
    }
  }
  parse_fail(path, "truncated header");
}

Floorplan read_pnm(const fs::path& path) {
  std::ifstream is = open_in(path, std::ios::binary);
  std::string magic(2, '\0');
  is.read(magic.data(), 2);
  const bool binary = magic == "P5" || magic == "P6";
  const int nc = magic == "P5" || magic == "P2" ? 1 : magic == "P6" || magic == "P3" ? 3 : 0;
  if (nc == 0) parse_fail(path, "unsupported image type");
  const long long w = pnm_token(is, path), h = pnm_token(is, path), maxval = pnm_token(is, path);
  if (w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16) parse_fail(path, "bad image size");
  if (maxval <= 0 || maxval > 65535) parse_fail(path, "bad maxval");
  if (binary) is.get();  // single whitespace before the raster

  Floorplan fp;
  fp.channels.assign(std::size_t(nc), MatX(h, w));
  const bool wide = maxval > 255;
  for (long long r = 0; r < h; ++r)
    for (long long c = 0; c < w; ++c)
      for (int k = 0; k < nc; ++k) {
        long long v = 0;
        if (binary) {
          unsigned char b[2] = {0, 0};
          if (!is.read(reinterpret_cast<char*>(b), wide ? 2 : 1)) parse_fail(path, "truncated raster");
          v = wide ? (b[0] << 8) | b[1] : b[0];
        } else if (!(is >> v)) {
          parse_fail(path, "truncated raster");
        }
        if (v > maxval) parse_fail(path, "sample exceeds maxval");
        fp.channels[std::size_t(k)](r, c) = double(v) / double(maxval);
      }
  return fp;
}

Floorplan read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) parse_fail(path, img.message);
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    parse_fail(path, img.message);
  }
  const int nc = color ? 3 : 1;
  const Eigen::Index h = img.height, w = img.width;
  Floorplan fp;
  fp.channels.assign(std::size_t(nc), MatX(h, w));
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w; ++c)
      for (int k = 0; k < nc; ++k)
        fp.channels[std::size_t(k)](r, c) = buf[std::size_t((r * w + c) * nc + k)] / 255.0;
  return fp;
}

}  // namespace

Floorplan read_image(const fs::path& path) {
  char head[8] = {};
  {
    std::ifstream is = open_in(path, std::ios::binary);
    is.read(head, sizeof head);
  }
  static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (std::equal(head, head + 8, reinterpret_cast<const char*>(png_sig))) return read_png(path);
  if (head[0] == 'P') return read_pnm(path);
  parse_fail(path, "unrecognized image format");
}

void write_pgm(const fs::path& path, const MatX& gray, int maxval) {
  if (maxval != 255 && maxval != 65535)
    throw Error(ErrorCode::InvalidArgument, "maxval must be 255 or 65535");
  std::ofstream os = open_out(path, std::ios::binary);
  os << "P5\n" << gray.cols() << ' ' << gray.rows() << '\n' << maxval << '\n';
  for (Eigen::Index r = 0; r < gray.rows(); ++r)
    for (Eigen::Index c = 0; c < gray.cols(); ++c) {
      const auto v = unsigned(std::lround(std::clamp(gray(r, c), 0.0, 1.0) * maxval));
      if (maxval > 255) os.put(char(v >> 8));
      os.put(char(v & 0xff));
    }
}

void write_png(const fs::path& path, const Floorplan& image) {
  const std::size_t nc = image.channels.size();
  if (nc != 1 && nc != 3) throw Error(ErrorCode::InvalidArgument, "need 1 or 3 channels");
  const Eigen::Index h = image.height(), w = image.width();
  std::vector<png_byte> buf(std::size_t(h * w) * nc);
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w; ++c)
      for (std::size_t k = 0; k < nc; ++k)
        buf[std::size_t(r * w + c) * nc + k] =
            png_byte(std::lround(std::clamp(image.channels[k](r, c), 0.0, 1.0) * 255.0));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = png_uint_32(w);
  img.height = png_uint_32(h);
  img.format = nc == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw Error(ErrorCode::IoError, path.string() + ": " + img.message);
}

void save_density(const DensityMap& dm, const fs::path& pgm, const fs::path& sidecar) {
  write_pgm(pgm, dm.grid, 65535);
  write_json(sidecar, {{"gamma", dm.gamma},
                       {"world_to_grid", to_json(dm.world_to_grid)},
                       {"height", dm.height()},
                       {"width", dm.width()}});
}

DensityMap load_density(const fs::path& pgm, const fs::path& sidecar) {
  const json meta = read_json(sidecar);
  DensityMap dm;
  dm.grid = read_image(pgm).gray();
  try {
    dm.gamma = get<double>(meta, "gamma");
    dm.world_to_grid = sim2_from_json(get<json>(meta, "world_to_grid"));
    if (get<Eigen::Index>(meta, "height") != dm.height() ||
        get<Eigen::Index>(meta, "width") != dm.width())
      throw Error(ErrorCode::ParseError, "size differs from the raster");
  } catch (const Error& e) {
    parse_fail(sidecar, e.what());
  }
  return dm;
}

// ---------------------------------------------------------------------------

json to_json(const Sim2& m) { return {{"s", m.s}, {"theta_rad", m.theta}, {"t", {m.t.x(), m.t.y()}}}; }

Sim2 sim2_from_json(const json& j) {
  const auto t = get<std::vector<double>>(j, "t");
  if (t.size() != 2) throw Error(ErrorCode::ParseError, "t needs 2 numbers");
  const Sim2 m(get<double>(j, "s"), get<double>(j, "theta_rad"), Vec2(t[0], t[1]));
  if (!(m.s > 0.0) || !std::isfinite(m.theta) || !m.t.allFinite())
    throw Error(ErrorCode::ParseError, "Sim2 needs a positive scale and finite parameters");
  return m;
}

json to_json(const CorrespondenceSet& cs) {
  json out = json::array();
  for (const Correspondence& c : cs)
    out.push_back({{"pd", {c.pd.x(), c.pd.y()}},
                   {"pf", {c.pf.x(), c.pf.y()}},
                   {"w", c.w},
                   {"reliable", c.reliable},
                   {"inlier", c.inlier}});
  return out;
}

CorrespondenceSet correspondences_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ParseError, "correspondences must be a list");
  CorrespondenceSet out;
  for (const json& e : j) {
    const auto pd = get<std::vector<double>>(e, "pd"), pf = get<std::vector<double>>(e, "pf");
    if (pd.size() != 2 || pf.size() != 2) throw Error(ErrorCode::ParseError, "points need 2 numbers");
    out.push_back({Vec2(pd[0], pd[1]), Vec2(pf[0], pf[1]), get<double>(e, "w"),
                   e.value("reliable", false), e.value("inlier", false)});
  }
  return out;
}

json to_json(const StageReport& r) {
  json j = {{"timings_ms", r.timings_ms},   {"queries", r.queries},
            {"reliable", r.reliable},       {"inliers", r.inliers},
            {"inlier_ratio", r.inlier_ratio}, {"mnn_scope", r.mnn_scope}};
  if (!r.failed_stage.empty()) {
    j["failed_stage"] = r.failed_stage;
    j["error"] = r.error;
    if (r.error_code) j["error_code"] = std::string(to_string(*r.error_code));
  }
  return j;
}

json to_json(const ChunkResult& c) {
  json j = {{"first_image", c.first_image},
            {"image_count", c.image_count},
            {"ok", c.ok},
            {"report", to_json(c.report)}};
  if (!c.ok) return j;
  j["gravity_rotation"] = mat3_json(c.gravity_rotation);
  j["density_to_floorplan"] = to_json(c.density_to_floorplan);
  j["density_world_to_grid"] = to_json(c.density.world_to_grid);
  j["world_to_floorplan"] = to_json(c.world_to_floorplan);
  json cams = json::array();
  for (const CameraPose& p : c.aligned.poses)
    cams.push_back({{"image_id", p.image_id},
                    {"position", {p.center.x(), p.center.z()}},
                    {"yaw_rad", camera_yaw(p.rotation)}});
  j["cameras"] = cams;
  return j;
}

json to_json(const LocalizeResult& r) {
  json chunks = json::array();
  for (const ChunkResult& c : r.chunks) chunks.push_back(to_json(c));
  return {{"all_ok", r.all_ok()}, {"chunks", chunks}};
}

json to_json(const StepLog& s) {
  return {{"step", s.step}, {"frac", s.frac}, {"feat", s.feat},   {"regr", s.regr},
          {"topo", s.topo}, {"geo", s.geo},   {"total", s.total}, {"grad_norm", s.grad_norm}};
}

json to_json(const synth::Truth& t) {
  json poses = json::array();
  for (const CameraPose& p : t.true_poses)
    poses.push_back({{"image_id", p.image_id}, {"rotation", mat3_json(p.rotation)}, {"center", vec_json(p.center)}});
  json anchors = json::array();
  for (Eigen::Index i = 0; i < t.anchor_points.rows(); ++i)
    anchors.push_back({t.anchor_points(i, 0), t.anchor_points(i, 1), t.anchor_points(i, 2)});
  return {{"world_to_floorplan", to_json(t.world_to_floorplan)},
          {"recon_scale", t.recon_scale},
          {"recon_rotation", mat3_json(t.recon_rotation)},
          {"recon_translation", vec_json(t.recon_translation)},
          {"true_poses", poses},
          {"anchor_points", anchors}};
}

synth::Truth truth_from_json(const json& j) {
  synth::Truth t;
  t.world_to_floorplan = sim2_from_json(get<json>(j, "world_to_floorplan"));
  t.recon_scale = get<double>(j, "recon_scale");
  t.recon_rotation = mat3_from(j, "recon_rotation");
  t.recon_translation = vec3_from(j, "recon_translation");
  for (const json& p : get<json>(j, "true_poses"))
    t.true_poses.push_back({mat3_from(p, "rotation"), vec3_from(p, "center"), get<int>(p, "image_id")});
  const auto anchors = get<std::vector<std::vector<double>>>(j, "anchor_points");
  if (anchors.size() < 2) throw Error(ErrorCode::ParseError, "need at least 2 anchor points");
  t.anchor_points.resize(Eigen::Index(anchors.size()), 3);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (anchors[i].size() != 3) throw Error(ErrorCode::ParseError, "anchor points need 3 numbers");
    t.anchor_points.row(Eigen::Index(i)) << anchors[i][0], anchors[i][1], anchors[i][2];
  }
  return t;
}

json to_json(const EncoderConfig& c) {
  return {{"patch", c.patch},       {"embed", c.embed},   {"context", c.context},
          {"dilations", c.dilations}, {"hidden", c.hidden}, {"channels", c.channels}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.patch = get<int>(j, "patch");
  c.embed = get<int>(j, "embed");
  c.context = get<int>(j, "context");
  c.dilations = get<std::vector<int>>(j, "dilations");
  c.hidden = get<int>(j, "hidden");
  c.channels = get<int>(j, "channels");
  return c;
}

void save_encoder(const fs::path& path, const ToyEncoder& enc) {
  json params = json::array();
  for (int g = 0; g < ToyEncoder::kGroups; ++g) {
    const MatX& p = enc.params()[std::size_t(g)];
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = p;
    params.push_back({{"name", ToyEncoder::group_name(g)},
                      {"rows", p.rows()},
                      {"cols", p.cols()},
                      {"data", std::vector<double>(rm.data(), rm.data() + rm.size())}});
  }
  // Floorplans enter the encoder as ink (1 - gray), RGB collapsed to gray first.
  write_json(path, {{"config", to_json(enc.config())}, {"floorplan_input", "ink"}, {"params", params}});
}

ToyEncoder load_encoder(const fs::path& path) {
  const json j = read_json(path);
  try {
    ToyEncoder enc(encoder_config_from_json(get<json>(j, "config")), 0);
    const json& params = get<json>(j, "params");
    if (!params.is_array() || params.size() != std::size_t(ToyEncoder::kGroups))
      throw Error(ErrorCode::ParseError, "wrong number of parameter groups");
    for (int g = 0; g < ToyEncoder::kGroups; ++g) {
      MatX& p = enc.params()[std::size_t(g)];
      const json& e = params[std::size_t(g)];
      const auto data = get<std::vector<double>>(e, "data");
      if (get<Eigen::Index>(e, "rows") != p.rows() || get<Eigen::Index>(e, "cols") != p.cols() ||
          Eigen::Index(data.size()) != p.size())
        throw Error(ErrorCode::ParseError,
                    std::string("shape mismatch in ") + ToyEncoder::group_name(g));
      p = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          data.data(), p.rows(), p.cols());
    }
    if (!enc.all_finite()) throw Error(ErrorCode::ParseError, "non-finite weights");
    return enc;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ParseError || e.code() == ErrorCode::InvalidArgument)
      parse_fail(path, e.what());
    throw;
  }
}

json pose_metrics_json(std::span<const PoseEval> evals) {
  std::vector<double> yaw, pos;
  for (const PoseEval& e : evals) {
    yaw.push_back(e.yaw_err_deg);
    pos.push_back(e.pos_err_frac);
  }
  json ang, posj;
  const auto ar = angular_recall(yaw);
  const auto pr = positional_recall(pos);
  for (std::size_t k = 0; k < kAngularThresholdsDeg.size(); ++k)
    ang[num(kAngularThresholdsDeg[k])] = 100.0 * ar[k];
  for (std::size_t k = 0; k < kPositionalThresholds.size(); ++k)
    posj[num(100.0 * kPositionalThresholds[k])] = 100.0 * pr[k];
  return {{"cameras", evals.size()},
          {"angular_recall_pct", ang},
          {"positional_recall_pct", posj},
          {"joint_recall_pct_30deg_20pct", 100.0 * joint_recall(evals)}};
}

json pck_json(const PckResult& r) {
  json pck;
  for (const auto& [t, v] : r.pck) pck[num(t)] = 100.0 * v;
  return {{"pck_pct", pck}, {"rmse", r.rmse}};
}

// ---------------------------------------------------------------------------

void write_svg(const fs::path& path, const Floorplan& floorplan, const ChunkResult& chunk,
               double contour_level) {
  const Eigen::Index h = floorplan.height(), w = floorplan.width();
  std::ofstream os = open_out(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n"
     << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";

  // Floorplan ink as horizontal runs of dark pixels.
  const MatX gray = floorplan.gray();
  os << "<g fill=\"#333\">\n";
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w;) {
      if (gray(r, c) >= 0.5) {
        ++c;
        continue;
      }
      const Eigen::Index start = c;
      while (c < w && gray(r, c) < 0.5) ++c;
      os << "<rect x=\"" << start << "\" y=\"" << r << "\" width=\"" << c - start
         << "\" height=\"1\"/>\n";
    }
  os << "</g>\n";

  if (chunk.ok) {
    // Boundary edges of the thresholded density mask, mapped into the floorplan.
    const MatX& d = chunk.density.grid;
    const Sim2& m = chunk.density_to_floorplan;
    auto above = [&](Eigen::Index r, Eigen::Index c) {
      return r >= 0 && c >= 0 && r < d.rows() && c < d.cols() && d(r, c) >= contour_level;
    };
    auto edge = [&](double x0, double y0, double x1, double y1) {
      const Vec2 a = sim2_apply(m, Vec2(x0, y0)), b = sim2_apply(m, Vec2(x1, y1));
      os << "M" << a.x() << ' ' << a.y() << "L" << b.x() << ' ' << b.y();
    };
    os << "<path fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"0.6\" d=\"";
    for (Eigen::Index r = 0; r <= d.rows(); ++r)
      for (Eigen::Index c = 0; c <= d.cols(); ++c) {
        if (above(r, c) != above(r - 1, c)) edge(double(c), double(r), double(c + 1), double(r));
        if (above(r, c) != above(r, c - 1)) edge(double(c), double(r), double(c), double(r + 1));
      }
    os << "\"/>\n";
  }

  for (const Correspondence& c : chunk.correspondences) {
    if (!c.reliable) continue;
    const Vec2 a = chunk.ok ? sim2_apply(chunk.density_to_floorplan, c.pd) : c.pd;
    os << "<line x1=\"" << a.x() << "\" y1=\"" << a.y() << "\" x2=\"" << c.pf.x() << "\" y2=\""
       << c.pf.y() << "\" stroke=\"" << (c.inlier ? "#2ca02c" : "#d62728")
       << "\" stroke-width=\"0.8\"/>\n";
  }

  for (const CameraPose& p : chunk.aligned.poses) {
    const double yaw = camera_yaw(p.rotation);
    const double x = p.center.x(), y = p.center.z();
    os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"2.5\" fill=\"#ff7f0e\"/>"
       << "<line x1=\"" << x << "\" y1=\"" << y << "\" x2=\"" << x + 8.0 * std::cos(yaw)
       << "\" y2=\"" << y + 8.0 * std::sin(yaw) << "\" stroke=\"#ff7f0e\" stroke-width=\"1.2\"/>\n";
  }
  os << "</svg>\n";
}

}  // namespace planealign::io
