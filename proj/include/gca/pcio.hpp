#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gca/geometry.hpp"
#include "gca/rng.hpp"

namespace gca {

struct PointCloud {
  std::vector<Vec3> points;
  std::optional<int> label;
  std::string source;

  std::size_t size() const { return points.size(); }
};

/// Malformed input file. line() is 1-based, 0 when not tied to a line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
        message_(what),
        line_(line) {}
  std::size_t line() const { return line_; }
  const std::string& message() const { return message_; }

 private:
  std::string message_;
  std::size_t line_;
};

enum class CloudFormat { XYZ, OFF, PLY };

CloudFormat format_from_path(const std::filesystem::path& path);
CloudFormat parse_cloud_format(std::string_view name);

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format);
PointCloud load_cloud(const std::filesystem::path& path);
PointCloud parse_cloud(std::string_view text, CloudFormat format);

/// Writes ASCII with 17 significant digits so coordinates round-trip exactly.
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format);
std::string format_cloud(const PointCloud& cloud, CloudFormat format);

enum class ShapeKind { Sphere, Box, Cylinder, Torus, Cone };

inline constexpr ShapeKind kAllShapes[] = {ShapeKind::Sphere, ShapeKind::Box, ShapeKind::Cylinder,
                                           ShapeKind::Torus, ShapeKind::Cone};

std::string_view shape_name(ShapeKind kind);
ShapeKind parse_shape_kind(std::string_view name);

// Uniform surface samples of the analytic shape inscribed in [-1,1]^3 and
// centred on its bounding box, plus isotropic Gaussian jitter of stddev
// `jitter` per coordinate.
PointCloud generate_shape(ShapeKind kind, std::size_t n, double jitter, std::uint64_t seed);

// Unit sphere with `bumps` smooth radial Gaussian bumps at random directions.
PointCloud generate_bumpy_sphere(std::size_t n, std::size_t bumps, std::uint64_t seed);

/// Breaks the symmetries of a generated shape: four random radial bumps,
/// anisotropic scaling 1 / 0.8 / 0.6 and a quadratic bend.
PointCloud asymmetric_warp(const PointCloud& cloud, std::uint64_t seed);

enum class RotationMode { None, AroundZ, SO3 };

std::string_view rotation_mode_name(RotationMode mode);
RotationMode parse_rotation_mode(std::string_view name);

Rotation sample_rotation(RotationMode mode, Rng& rng);

PointCloud rotated(const PointCloud& cloud, const Rotation& r);

struct ManifestEntry {
  std::string path;
  int label = 0;
  std::string class_name;
  std::string split;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> classes;
  std::vector<ManifestEntry> entries;
  std::size_t points_per_cloud = 0;
  double jitter = 0.0;
};

struct ShapeDatasetConfig {
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 40;
  std::size_t points_per_cloud = 256;
  double jitter = 0.01;
  std::uint64_t seed = 0;
};

struct ShapeDataset {
  std::vector<std::string> classes;
  std::vector<PointCloud> train;
  std::vector<PointCloud> test;
};

/// The five-class synthetic suite, one class per ShapeKind.
ShapeDataset make_shape_dataset(const ShapeDatasetConfig& config);

/// Writes every cloud as XYZ under `dir` and returns the manifest (also
/// written to dir/manifest.json).
DatasetManifest write_shape_dataset(const ShapeDataset& data, const ShapeDatasetConfig& config,
                                    const std::filesystem::path& dir);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
/// Paths in the manifest are resolved relative to the manifest's directory.
/// Throws when class ids are not dense or a referenced file is missing.
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace gca
