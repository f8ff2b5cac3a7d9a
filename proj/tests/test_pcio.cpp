#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "gca/pcio.hpp"

using namespace gca;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gca_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::size_t parse_error_line(const std::string& text, CloudFormat format) {
  try {
    parse_cloud(text, format);
  } catch (const ParseError& e) {
    return e.line();
  }
  return static_cast<std::size_t>(-1);
}

}  // namespace

TEST_CASE("xyz parsing") {
  const PointCloud c = parse_cloud("0 0 0\n1 0 0\n", CloudFormat::XYZ);
  REQUIRE(c.size() == 2);
  CHECK(c.points[1] == Vec3{1, 0, 0});

  const PointCloud commented = parse_cloud("# header\n\n1.5 -2 3e-1\n", CloudFormat::XYZ);
  REQUIRE(commented.size() == 1);
  CHECK(commented.points[0] == Vec3{1.5, -2, 0.3});

  CHECK(parse_error_line("0 0 0\n1 0\n", CloudFormat::XYZ) == 2);
  CHECK(parse_error_line("0 0 0\n1 0 abc\n", CloudFormat::XYZ) == 2);
  CHECK(parse_error_line("0 0 0\n0 0 0\n1 nan 0\n", CloudFormat::XYZ) == 3);
  CHECK(parse_error_line("1 inf 0\n", CloudFormat::XYZ) == 1);
  CHECK_THROWS_AS(parse_cloud("", CloudFormat::XYZ), ParseError);
}

TEST_CASE("off parsing") {
  const PointCloud c = parse_cloud("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n", CloudFormat::OFF);
  REQUIRE(c.size() == 3);
  CHECK(c.points[2] == Vec3{0, 1, 0});

  const PointCloud inline_header = parse_cloud("OFF 2 0 0\n0 0 1\n0 0 2\n", CloudFormat::OFF);
  CHECK(inline_header.size() == 2);

  try {
    parse_cloud("OFF\n5 0 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n", CloudFormat::OFF);
    FAIL("expected a count mismatch");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("vertex count mismatch") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_cloud("COFF\n1 0 0\n0 0 0\n", CloudFormat::OFF), ParseError);
}

TEST_CASE("ply parsing") {
  const std::string ply =
      "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar red\nelement face 0\nproperty list uchar int vertex_indices\n"
      "end_header\n1 2 3 255\n4 5 6 0\n";
  const PointCloud c = parse_cloud(ply, CloudFormat::PLY);
  REQUIRE(c.size() == 2);
  CHECK(c.points[1] == Vec3{4, 5, 6});

  CHECK_THROWS_AS(parse_cloud("ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n", CloudFormat::PLY),
                  ParseError);
  CHECK_THROWS_AS(parse_cloud("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                              "property float z\nend_header\n0 0 0\n1 1 1\n",
                              CloudFormat::PLY),
                  ParseError);
}

TEST_CASE("file round trip keeps coordinates and reports paths") {
  const fs::path dir = temp_dir("pcio");
  const PointCloud cloud = generate_shape(ShapeKind::Torus, 64, 0.01, 5);
  for (CloudFormat f : {CloudFormat::XYZ, CloudFormat::OFF, CloudFormat::PLY}) {
    const fs::path path = dir / (std::string("cloud.") + (f == CloudFormat::XYZ ? "xyz" : f == CloudFormat::OFF ? "off" : "ply"));
    save_cloud(cloud, path, f);
    CHECK(format_from_path(path) == f);
    const PointCloud back = load_cloud(path);
    REQUIRE(back.size() == cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) CHECK(back.points[i] == cloud.points[i]);
  }

  write_file(dir / "bad.xyz", "0 0 0\n0 0\n");
  try {
    load_cloud(dir / "bad.xyz");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("bad.xyz") != std::string::npos);
  }
  CHECK_THROWS(load_cloud(dir / "missing.xyz"));
  CHECK_THROWS_AS(format_from_path("cloud.obj"), std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("generated shapes are normalized and deterministic") {
  const PointCloud sphere = generate_shape(ShapeKind::Sphere, 256, 0.0, 1);
  for (const Vec3& p : sphere.points) CHECK(std::abs(norm(p) - 1.0) < 1e-12);

  const PointCloud box = generate_shape(ShapeKind::Box, 256, 0.0, 1);
  for (const Vec3& p : box.points)
    CHECK(std::abs(std::max({std::abs(p.x), std::abs(p.y), std::abs(p.z)}) - 1.0) < 1e-12);

  for (ShapeKind k : kAllShapes) {
    const PointCloud a = generate_shape(k, 128, 0.01, 42);
    const PointCloud b = generate_shape(k, 128, 0.01, 42);
    CHECK(format_cloud(a, CloudFormat::XYZ) == format_cloud(b, CloudFormat::XYZ));
    CHECK(a.size() == 128);
    const PointCloud clean = generate_shape(k, 512, 0.0, 3);
    // inscribed in [-1, 1]^3 with the bounding box centred on the origin
    Vec3 lo{1e9, 1e9, 1e9}, hi{-1e9, -1e9, -1e9};
    for (const Vec3& p : clean.points)
      for (std::size_t a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
    for (std::size_t a = 0; a < 3; ++a) {
      CHECK(lo[a] >= -1.0 - 1e-12);
      CHECK(hi[a] <= 1.0 + 1e-12);
      CHECK(std::abs(lo[a] + hi[a]) < 0.1);
    }
    CHECK(parse_shape_kind(shape_name(k)) == k);
  }
  CHECK_THROWS_AS(generate_shape(ShapeKind::Cone, 7, 0.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(generate_shape(ShapeKind::Cone, 16, -1.0, 0), std::invalid_argument);
}

TEST_CASE("rotation sampling") {
  Rng rng(99);
  CHECK(sample_rotation(RotationMode::None, rng).matrix() == Mat3::identity());
  for (int i = 0; i < 100; ++i) {
    const Rotation z = sample_rotation(RotationMode::AroundZ, rng);
    CHECK(norm(z.apply({0, 0, 1}) - Vec3{0, 0, 1}) < 1e-15);
    const Mat3 m = sample_rotation(RotationMode::SO3, rng).matrix();
    CHECK(max_abs_difference(m * m.transposed(), Mat3::identity()) < 1e-12);
    CHECK(std::abs(m.determinant() - 1.0) < 1e-12);
  }
  Vec3 mean{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) mean += sample_rotation(RotationMode::SO3, rng).apply({1, 0, 0}) * (1.0 / n);
  CHECK(norm(mean) < 0.05);
  CHECK(parse_rotation_mode("so3") == RotationMode::SO3);
  CHECK_THROWS_AS(parse_rotation_mode("xy"), std::invalid_argument);
}

TEST_CASE("dataset manifest round trip") {
  ShapeDatasetConfig cfg;
  cfg.train_per_class = 2;
  cfg.test_per_class = 1;
  cfg.points_per_cloud = 32;
  cfg.seed = 7;
  const ShapeDataset data = make_shape_dataset(cfg);
  CHECK(data.classes.size() == 5);
  CHECK(data.train.size() == 10);
  CHECK(data.test.size() == 5);

  const fs::path dir = temp_dir("manifest");
  const DatasetManifest written = write_shape_dataset(data, cfg, dir);
  const DatasetManifest loaded = load_manifest(dir / "manifest.json");
  CHECK(loaded.seed == 7);
  CHECK(loaded.classes == data.classes);
  REQUIRE(loaded.entries.size() == 15);
  const PointCloud first = load_cloud(dir / loaded.entries[0].path);
  CHECK(first.size() == 32);

  fs::remove(dir / loaded.entries[3].path);
  CHECK_THROWS(load_manifest(dir / "manifest.json"));
  fs::remove_all(dir);
}
