#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gca/geometry.hpp"
#include "gca/pcio.hpp"

namespace gca {

/// Local reference frame at a keypoint. Columns of `axes` are e1, e2, e3.
struct Lrf {
  Vec3 origin;
  Mat3 axes = Mat3::identity();
  bool degenerate = false;
  bool o_fallback_used = false;
};

struct LrfConfig {
  // true: distance-weighted covariance over the keypoint set.
  // false: plain covariance over the local neighbourhood.
  bool weighted = true;
  // true: orient e1, e2 toward the main orientation vector.
  // false: orient each so its first nonzero global component is >= 0.
  bool use_o_vector = true;
};

class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// w_i = (m - |q_i - p|) / sum_j (m - |q_j - p|), m the largest distance.
/// Throws DegenerateInputError when every q_i coincides with p.
std::vector<double> distance_weights(std::span<const Vec3> q_points, const Vec3& p);

Mat3 weighted_covariance(std::span<const Vec3> q_points, const Vec3& p, std::span<const double> weights);

Mat3 local_covariance(std::span<const Vec3> points, const Vec3& p);

Vec3 main_orientation(std::span<const Vec3> q_points, const Vec3& p, std::span<const double> weights);

/// Frame from the eigenvectors of the covariance of `q_points` around `p`,
/// ordered by descending eigenvalue, sign-disambiguated, right-handed.
/// A degenerate spectrum yields an identity frame with `degenerate` set.
Lrf build_lrf(std::span<const Vec3> q_points, const Vec3& p, const LrfConfig& config);

/// Frame at `p` using the support implied by `config`: the keypoint set
/// (plus p) when weighted, the k nearest cloud points otherwise.
Lrf build_keypoint_lrf(std::span<const Vec3> cloud, std::span<const Vec3> keypoints, const Vec3& p,
                       const LrfConfig& config, std::size_t k_neighbors);

/// Relative-rotation angle between two frames in degrees, in [0, 180].
double frame_angle_degrees(const Mat3& a, const Mat3& b);

/// frame_angle_degrees on the axes; throws std::invalid_argument when either
/// frame is degenerate.
double lrf_error(const Lrf& a, const Lrf& b);

struct AngleHistogram {
  static constexpr std::size_t kBins = 18;
  static constexpr double kBinWidth = 10.0;
  std::vector<std::size_t> counts = std::vector<std::size_t>(kBins, 0);

  void add(double degrees);
  void merge(const AngleHistogram& other);
  std::size_t total() const;
  /// "bin_start_deg,bin_end_deg,count,fraction" with one row per bin.
  std::string to_csv() const;
};

struct RepeatabilityConfig {
  double subsample_ratio = 0.5;
  double noise_sigma_factor = 0.1;
  std::size_t n_pairs = 1000;
  std::uint64_t seed = 0;
  LrfConfig lrf;
  std::size_t k_neighbors = 32;
  std::size_t weighted_keypoints = 512;
};

struct RepeatabilityResult {
  AngleHistogram histogram;
  std::vector<double> errors;  // non-degenerate pairs only
  std::size_t pairs = 0;
  std::size_t degenerate_count = 0;
  double mean_error = 0.0;
  double mesh_resolution = 0.0;
  double noise_sigma = 0.0;
  std::size_t scene_size = 0;
};

/// Compares frames at model points against frames at their nearest points in
/// a subsampled, noise-perturbed copy of the model.
RepeatabilityResult repeatability_experiment(const PointCloud& model, const RepeatabilityConfig& config);

}  // namespace gca
