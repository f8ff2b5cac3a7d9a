#include "gca/pcio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace gca {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

// Line cursor over a text buffer that tracks 1-based line numbers.
class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  bool next(std::string_view& line) {
    if (pos_ >= text_.size()) return false;
    const std::size_t end = text_.find('\n', pos_);
    const std::size_t stop = end == std::string_view::npos ? text_.size() : end;
    line = text_.substr(pos_, stop - pos_);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos_ = stop + 1;
    ++line_no_;
    return true;
  }

  // Next line with content, skipping blanks and '#' comments.
  bool next_content(std::vector<std::string_view>& tokens) {
    std::string_view line;
    while (next(line)) {
      tokens = split_ws(line);
      if (tokens.empty() || tokens.front().front() == '#') continue;
      return true;
    }
    return false;
  }

  std::size_t line_no() const { return line_no_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

double parse_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const char* first = tok.data();
  if (!tok.empty() && tok.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size())
    throw ParseError("invalid number '" + std::string(tok) + "'", line);
  if (!std::isfinite(v)) throw ParseError("non-finite coordinate '" + std::string(tok) + "'", line);
  return v;
}

std::size_t parse_count(std::string_view tok, std::size_t line) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size())
    throw ParseError("invalid count '" + std::string(tok) + "'", line);
  return v;
}

Vec3 parse_point(const std::vector<std::string_view>& tok, std::size_t ix, std::size_t iy,
                 std::size_t iz, std::size_t line) {
  return {parse_double(tok[ix], line), parse_double(tok[iy], line), parse_double(tok[iz], line)};
}

PointCloud parse_xyz(std::string_view text) {
  LineReader reader(text);
  PointCloud cloud;
  std::vector<std::string_view> tok;
  while (reader.next_content(tok)) {
    if (tok.size() != 3)
      throw ParseError("expected 3 coordinates, got " + std::to_string(tok.size()), reader.line_no());
    cloud.points.push_back(parse_point(tok, 0, 1, 2, reader.line_no()));
  }
  return cloud;
}

PointCloud parse_off(std::string_view text) {
  LineReader reader(text);
  std::vector<std::string_view> tok;
  if (!reader.next_content(tok) || tok.front() != "OFF")
    throw ParseError("missing OFF header", reader.line_no());
  std::vector<std::string_view> counts(tok.begin() + 1, tok.end());
  if (counts.empty()) {
    if (!reader.next_content(tok)) throw ParseError("missing OFF counts line", reader.line_no());
    counts = tok;
  }
  if (counts.size() < 2) throw ParseError("OFF counts line needs vertex and face counts", reader.line_no());
  const std::size_t nv = parse_count(counts[0], reader.line_no());

  PointCloud cloud;
  cloud.points.reserve(nv);
  while (cloud.points.size() < nv) {
    if (!reader.next_content(tok)) {
      throw ParseError("vertex count mismatch: header declares " + std::to_string(nv) +
                           ", found " + std::to_string(cloud.points.size()),
                       reader.line_no());
    }
    if (tok.size() < 3) throw ParseError("vertex line needs 3 coordinates", reader.line_no());
    cloud.points.push_back(parse_point(tok, 0, 1, 2, reader.line_no()));
  }
  return cloud;
}

PointCloud parse_ply(std::string_view text) {
  LineReader reader(text);
  std::string_view line;
  if (!reader.next(line) || split_ws(line) != std::vector<std::string_view>{"ply"})
    throw ParseError("missing ply magic", reader.line_no());

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> properties;
  };
  std::vector<Element> elements;
  bool ascii = false;
  bool ended = false;
  while (reader.next(line)) {
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii")
        throw ParseError("only ASCII PLY is supported", reader.line_no());
      ascii = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError("malformed element line", reader.line_no());
      elements.push_back({std::string(tok[1]), parse_count(tok[2], reader.line_no()), {}});
    } else if (tok[0] == "property") {
      if (elements.empty() || tok.size() < 3)
        throw ParseError("property outside element", reader.line_no());
      if (tok[1] == "list" && elements.back().name == "vertex")
        throw ParseError("list properties on vertices are not supported", reader.line_no());
      elements.back().properties.emplace_back(tok.back());
    } else if (tok[0] == "end_header") {
      ended = true;
      break;
    } else {
      throw ParseError("unexpected header keyword '" + std::string(tok[0]) + "'", reader.line_no());
    }
  }
  if (!ascii) throw ParseError("missing format line", reader.line_no());
  if (!ended) throw ParseError("missing end_header", reader.line_no());

  const auto vertex = std::find_if(elements.begin(), elements.end(),
                                   [](const Element& e) { return e.name == "vertex"; });
  if (vertex == elements.end()) throw ParseError("no vertex element", reader.line_no());
  auto prop_index = [&](const char* name) {
    const auto it = std::find(vertex->properties.begin(), vertex->properties.end(), name);
    if (it == vertex->properties.end())
      throw ParseError(std::string("vertex element lacks property ") + name, 0);
    return static_cast<std::size_t>(it - vertex->properties.begin());
  };
  const std::size_t ix = prop_index("x"), iy = prop_index("y"), iz = prop_index("z");

  std::size_t skip = 0;
  for (auto it = elements.begin(); it != vertex; ++it) skip += it->count;
  std::vector<std::string_view> tok;
  for (std::size_t i = 0; i < skip; ++i)
    if (!reader.next_content(tok)) throw ParseError("truncated element data", reader.line_no());

  PointCloud cloud;
  cloud.points.reserve(vertex->count);
  while (cloud.points.size() < vertex->count) {
    if (!reader.next_content(tok)) {
      throw ParseError("vertex count mismatch: header declares " + std::to_string(vertex->count) +
                           ", found " + std::to_string(cloud.points.size()),
                       reader.line_no());
    }
    if (tok.size() != vertex->properties.size())
      throw ParseError("vertex line has " + std::to_string(tok.size()) + " values, expected " +
                           std::to_string(vertex->properties.size()),
                       reader.line_no());
    cloud.points.push_back(parse_point(tok, ix, iy, iz, reader.line_no()));
  }
  return cloud;
}

void append_point(std::string& out, const Vec3& p) {
  char buf[96];
  const int n = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p.x, p.y, p.z);
  out.append(buf, static_cast<std::size_t>(n));
}

}  // namespace

CloudFormat format_from_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".xyz" || ext == ".txt" || ext == ".pts") return CloudFormat::XYZ;
  if (ext == ".off") return CloudFormat::OFF;
  if (ext == ".ply") return CloudFormat::PLY;
  throw std::invalid_argument("cannot infer point cloud format from '" + path.string() + "'");
}

CloudFormat parse_cloud_format(std::string_view name) {
  if (name == "xyz" || name == "XYZ") return CloudFormat::XYZ;
  if (name == "off" || name == "OFF") return CloudFormat::OFF;
  if (name == "ply" || name == "PLY") return CloudFormat::PLY;
  throw std::invalid_argument("unknown cloud format '" + std::string(name) + "'");
}

PointCloud parse_cloud(std::string_view text, CloudFormat format) {
  PointCloud cloud;
  switch (format) {
    case CloudFormat::XYZ: cloud = parse_xyz(text); break;
    case CloudFormat::OFF: cloud = parse_off(text); break;
    case CloudFormat::PLY: cloud = parse_ply(text); break;
  }
  if (cloud.points.empty()) throw ParseError("point cloud has no points", 0);
  return cloud;
}

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    PointCloud cloud = parse_cloud(ss.str(), format);
    cloud.source = path.string();
    return cloud;
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.line());
  }
}

PointCloud load_cloud(const std::filesystem::path& path) {
  return load_cloud(path, format_from_path(path));
}

std::string format_cloud(const PointCloud& cloud, CloudFormat format) {
  std::string out;
  out.reserve(cloud.points.size() * 64 + 128);
  switch (format) {
    case CloudFormat::XYZ: break;
    case CloudFormat::OFF: out += "OFF\n" + std::to_string(cloud.points.size()) + " 0 0\n"; break;
    case CloudFormat::PLY:
      out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.points.size()) +
             "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
      break;
  }
  for (const Vec3& p : cloud.points) append_point(out, p);
  return out;
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << format_cloud(cloud, format);
}

std::string_view shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Box: return "box";
    case ShapeKind::Cylinder: return "cylinder";
    case ShapeKind::Torus: return "torus";
    case ShapeKind::Cone: return "cone";
  }
  return "?";
}

ShapeKind parse_shape_kind(std::string_view name) {
  for (ShapeKind k : kAllShapes)
    if (shape_name(k) == name) return k;
  throw std::invalid_argument("unknown shape '" + std::string(name) + "'");
}

PointCloud generate_shape(ShapeKind kind, std::size_t n, double jitter, std::uint64_t seed) {
  if (n < 8) throw std::invalid_argument("generate_shape: n must be >= 8");
  if (!(jitter >= 0.0)) throw std::invalid_argument("generate_shape: jitter must be >= 0");
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p;
    switch (kind) {
      case ShapeKind::Sphere: {
        Vec3 g;
        do {
          g = {gauss(rng), gauss(rng), gauss(rng)};
        } while (squared_norm(g) < 1e-20);
        p = g * (1.0 / norm(g));
        break;
      }
      case ShapeKind::Box: {
        const auto face = static_cast<int>(unit(rng) * 6.0) % 6;
        const double s = sym(rng), t = sym(rng);
        const double side = face % 2 == 0 ? 1.0 : -1.0;
        switch (face / 2) {
          case 0: p = {side, s, t}; break;
          case 1: p = {s, side, t}; break;
          default: p = {s, t, side}; break;
        }
        break;
      }
      case ShapeKind::Cylinder: {
        // radius 1, height 2: lateral area 4pi, caps 2pi
        const double a = kTwoPi * unit(rng);
        if (unit(rng) < 2.0 / 3.0) {
          p = {std::cos(a), std::sin(a), sym(rng)};
        } else {
          const double r = std::sqrt(unit(rng));
          p = {r * std::cos(a), r * std::sin(a), unit(rng) < 0.5 ? 1.0 : -1.0};
        }
        break;
      }
      case ShapeKind::Torus: {
        constexpr double R = 0.7, r = 0.3;
        double v = 0.0;
        do {
          v = kTwoPi * unit(rng);
        } while (unit(rng) * (R + r) > R + r * std::cos(v));
        const double u = kTwoPi * unit(rng);
        const double ring = R + r * std::cos(v);
        p = {ring * std::cos(u), ring * std::sin(u), r * std::sin(v)};
        break;
      }
      case ShapeKind::Cone: {
        // apex (0,0,1), base radius 1 at z=-1; lateral area pi*sqrt5, base pi
        const double a = kTwoPi * unit(rng);
        const double slant = std::sqrt(5.0);
        if (unit(rng) < slant / (1.0 + slant)) {
          const double t = std::sqrt(unit(rng));
          p = {t * std::cos(a), t * std::sin(a), 1.0 - 2.0 * t};
        } else {
          const double r = std::sqrt(unit(rng));
          p = {r * std::cos(a), r * std::sin(a), -1.0};
        }
        break;
      }
    }
    if (jitter > 0.0) p += Vec3{gauss(rng), gauss(rng), gauss(rng)} * jitter;
    cloud.points.push_back(p);
  }
  cloud.source = std::string(shape_name(kind));
  return cloud;
}

PointCloud generate_bumpy_sphere(std::size_t n, std::size_t bumps, std::uint64_t seed) {
  if (n < 8) throw std::invalid_argument("generate_bumpy_sphere: n must be >= 8");
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto direction = [&] {
    Vec3 g;
    do {
      g = {gauss(rng), gauss(rng), gauss(rng)};
    } while (squared_norm(g) < 1e-20);
    return g * (1.0 / norm(g));
  };
  struct Bump {
    Vec3 dir;
    double height;
    double width;
  };
  std::vector<Bump> bs;
  for (std::size_t b = 0; b < bumps; ++b)
    bs.push_back({direction(), 0.15 + 0.2 * unit(rng), 0.25 + 0.2 * unit(rng)});

  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 u = direction();
    double r = 1.0;
    for (const Bump& b : bs) r += b.height * std::exp(-squared_distance(u, b.dir) / (2.0 * b.width * b.width));
    cloud.points.push_back(u * r);
  }
  cloud.source = "bumpy_sphere";
  return cloud;
}

PointCloud asymmetric_warp(const PointCloud& cloud, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::array<Vec3, 4> dirs;
  for (Vec3& d : dirs) {
    do {
      d = {gauss(rng), gauss(rng), gauss(rng)};
    } while (squared_norm(d) < 1e-20);
    d = d * (1.0 / norm(d));
  }
  PointCloud out = cloud;
  for (Vec3& p : out.points) {
    const double r = norm(p);
    const Vec3 u = r > 1e-12 ? p * (1.0 / r) : Vec3{0.0, 0.0, 0.0};
    double s = 1.0;
    for (const Vec3& d : dirs) s += 0.25 * std::exp(-squared_distance(u, d) / 0.18);
    p = Vec3{p.x * s, 0.8 * p.y * s, 0.6 * p.z * s} + Vec3{0.2 * p.y * p.y, 0.1 * p.z * p.x, 0.15 * p.x * p.x};
  }
  out.source = "warped_" + cloud.source;
  return out;
}

std::string_view rotation_mode_name(RotationMode mode) {
  switch (mode) {
    case RotationMode::None: return "none";
    case RotationMode::AroundZ: return "z";
    case RotationMode::SO3: return "so3";
  }
  return "?";
}

RotationMode parse_rotation_mode(std::string_view name) {
  if (name == "none" || name == "None") return RotationMode::None;
  if (name == "z" || name == "Z" || name == "AroundZ") return RotationMode::AroundZ;
  if (name == "so3" || name == "SO3") return RotationMode::SO3;
  throw std::invalid_argument("unknown rotation mode '" + std::string(name) + "'");
}

Rotation sample_rotation(RotationMode mode, Rng& rng) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  switch (mode) {
    case RotationMode::None: return Rotation::identity();
    case RotationMode::AroundZ: return Rotation::about_z(kTwoPi * unit(rng));
    case RotationMode::SO3: {
      // uniform unit quaternion (Shoemake)
      const double u1 = unit(rng), u2 = unit(rng), u3 = unit(rng);
      const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
      return Rotation::from_quaternion(b * std::cos(kTwoPi * u3), a * std::sin(kTwoPi * u2),
                                       a * std::cos(kTwoPi * u2), b * std::sin(kTwoPi * u3));
    }
  }
  return Rotation::identity();
}

PointCloud rotated(const PointCloud& cloud, const Rotation& r) {
  PointCloud out;
  out.points = apply_rotation(cloud.points, r);
  out.label = cloud.label;
  out.source = cloud.source;
  return out;
}

ShapeDataset make_shape_dataset(const ShapeDatasetConfig& config) {
  ShapeDataset data;
  for (ShapeKind k : kAllShapes) data.classes.emplace_back(shape_name(k));
  auto fill = [&](std::vector<PointCloud>& split, std::uint64_t split_tag, std::size_t per_class) {
    for (std::size_t c = 0; c < std::size(kAllShapes); ++c) {
      for (std::size_t i = 0; i < per_class; ++i) {
        PointCloud cloud = generate_shape(kAllShapes[c], config.points_per_cloud, config.jitter,
                                          derive_seed(config.seed, {split_tag, c, i}));
        cloud.label = static_cast<int>(c);
        split.push_back(std::move(cloud));
      }
    }
  };
  fill(data.train, 0, config.train_per_class);
  fill(data.test, 1, config.test_per_class);
  return data;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  nlohmann::json j;
  j["seed"] = manifest.seed;
  j["classes"] = manifest.classes;
  j["points_per_cloud"] = manifest.points_per_cloud;
  j["jitter"] = manifest.jitter;
  j["entries"] = nlohmann::json::array();
  for (const ManifestEntry& e : manifest.entries)
    j["entries"].push_back({{"path", e.path}, {"label", e.label}, {"class", e.class_name}, {"split", e.split}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  const nlohmann::json j = nlohmann::json::parse(in);
  DatasetManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.classes = j.at("classes").get<std::vector<std::string>>();
  m.points_per_cloud = j.value("points_per_cloud", std::size_t{0});
  m.jitter = j.value("jitter", 0.0);
  std::vector<char> seen(m.classes.size(), 0);
  for (const auto& e : j.at("entries")) {
    ManifestEntry entry;
    entry.path = e.at("path").get<std::string>();
    entry.label = e.at("label").get<int>();
    entry.class_name = e.value("class", std::string{});
    entry.split = e.value("split", std::string{});
    if (entry.label < 0 || static_cast<std::size_t>(entry.label) >= m.classes.size())
      throw std::runtime_error("manifest label " + std::to_string(entry.label) + " out of range");
    seen[static_cast<std::size_t>(entry.label)] = 1;
    const std::filesystem::path resolved = path.parent_path() / entry.path;
    if (!std::filesystem::exists(resolved))
      throw std::runtime_error("manifest references missing file '" + resolved.string() + "'");
    m.entries.push_back(std::move(entry));
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw std::runtime_error("manifest class ids are not dense");
  return m;
}

DatasetManifest write_shape_dataset(const ShapeDataset& data, const ShapeDatasetConfig& config,
                                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  m.seed = config.seed;
  m.classes = data.classes;
  m.points_per_cloud = config.points_per_cloud;
  m.jitter = config.jitter;
  auto write_split = [&](const std::vector<PointCloud>& split, const char* name) {
    std::vector<std::size_t> counter(data.classes.size(), 0);
    for (const PointCloud& c : split) {
      const auto label = static_cast<std::size_t>(c.label.value_or(0));
      char file[128];
      std::snprintf(file, sizeof file, "%s_%s_%04zu.xyz", name, data.classes[label].c_str(),
                    counter[label]++);
      save_cloud(c, dir / file, CloudFormat::XYZ);
      m.entries.push_back({file, static_cast<int>(label), data.classes[label], name});
    }
  };
  write_split(data.train, "train");
  write_split(data.test, "test");
  save_manifest(m, dir / "manifest.json");
  return m;
}

}  // namespace gca
