#include "gca/lrf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "gca/rng.hpp"

namespace gca {

std::vector<double> distance_weights(std::span<const Vec3> q_points, const Vec3& p) {
  if (q_points.size() < 2) throw std::invalid_argument("distance_weights: need at least 2 points");
  std::vector<double> dist(q_points.size());
  double m = 0.0;
  for (std::size_t i = 0; i < q_points.size(); ++i) {
    dist[i] = norm(q_points[i] - p);
    m = std::max(m, dist[i]);
  }
  if (!(m > 0.0)) throw DegenerateInputError("distance_weights: all points coincide with p");
  double total = 0.0;
  for (double& d : dist) {
    d = m - d;
    total += d;
  }
  for (double& d : dist) d /= total;
  return dist;
}

Mat3 weighted_covariance(std::span<const Vec3> q_points, const Vec3& p, std::span<const double> weights) {
  if (weights.size() != q_points.size())
    throw std::invalid_argument("weighted_covariance: weight count mismatch");
  double xx = 0, xy = 0, xz = 0, yy = 0, yz = 0, zz = 0;
  for (std::size_t i = 0; i < q_points.size(); ++i) {
    const Vec3 d = q_points[i] - p;
    const double w = weights[i];
    xx += w * d.x * d.x;
    xy += w * d.x * d.y;
    xz += w * d.x * d.z;
    yy += w * d.y * d.y;
    yz += w * d.y * d.z;
    zz += w * d.z * d.z;
  }
  return Mat3{{xx, xy, xz, xy, yy, yz, xz, yz, zz}};
}

Mat3 local_covariance(std::span<const Vec3> points, const Vec3& p) {
  const std::vector<double> ones(points.size(), 1.0);
  return weighted_covariance(points, p, ones);
}

Vec3 main_orientation(std::span<const Vec3> q_points, const Vec3& p, std::span<const double> weights) {
  if (weights.size() != q_points.size())
    throw std::invalid_argument("main_orientation: weight count mismatch");
  Vec3 o;
  for (std::size_t i = 0; i < q_points.size(); ++i) o += (q_points[i] - p) * weights[i];
  return o;
}

namespace {

// Flips `axis` toward the support point with the largest |projection|,
// lowest index on ties.
Vec3 orient_by_extent(const Vec3& axis, std::span<const Vec3> q_points, const Vec3& p) {
  double best = 0.0;
  double best_proj = 0.0;
  for (const Vec3& q : q_points) {
    const double proj = dot(axis, q - p);
    if (std::abs(proj) > best) {
      best = std::abs(proj);
      best_proj = proj;
    }
  }
  return best_proj < 0.0 ? -axis : axis;
}

Vec3 orient_by_first_component(const Vec3& axis) {
  for (std::size_t i = 0; i < 3; ++i) {
    if (axis[i] != 0.0) return axis[i] < 0.0 ? -axis : axis;
  }
  return axis;
}

}  // namespace

Lrf build_lrf(std::span<const Vec3> q_points, const Vec3& p, const LrfConfig& config) {
  Lrf frame;
  frame.origin = p;

  std::vector<double> weights;
  Mat3 cov;
  if (config.weighted) {
    try {
      weights = distance_weights(q_points, p);
    } catch (const DegenerateInputError&) {
      frame.degenerate = true;
      return frame;
    } catch (const std::invalid_argument&) {
      frame.degenerate = true;
      return frame;
    }
    cov = weighted_covariance(q_points, p, weights);
  } else {
    if (q_points.empty()) {
      frame.degenerate = true;
      return frame;
    }
    cov = local_covariance(q_points, p);
    weights.assign(q_points.size(), 1.0 / static_cast<double>(q_points.size()));
  }

  const SymEig3 eig = sym_eig3(cov);
  if (eig.degenerate) {
    frame.degenerate = true;
    return frame;
  }

  Vec3 e1 = eig.eigenvectors.column(0);
  Vec3 e2 = eig.eigenvectors.column(1);
  if (config.use_o_vector) {
    const Vec3 o = main_orientation(q_points, p, weights);
    const double o_norm = norm(o);
    auto orient = [&](const Vec3& e) {
      const double d = dot(e, o);
      if (o_norm < 1e-12 || std::abs(d) < 1e-9 * o_norm) {
        frame.o_fallback_used = true;
        return orient_by_extent(e, q_points, p);
      }
      return d < 0.0 ? -e : e;
    };
    e1 = orient(e1);
    e2 = orient(e2);
  } else {
    e1 = orient_by_first_component(e1);
    e2 = orient_by_first_component(e2);
  }
  frame.axes = Mat3::from_columns(e1, e2, cross(e1, e2));
  return frame;
}

Lrf build_keypoint_lrf(std::span<const Vec3> cloud, std::span<const Vec3> keypoints, const Vec3& p,
                       const LrfConfig& config, std::size_t k_neighbors) {
  if (config.weighted) {
    if (std::find(keypoints.begin(), keypoints.end(), p) != keypoints.end())
      return build_lrf(keypoints, p, config);
    std::vector<Vec3> support(keypoints.begin(), keypoints.end());
    support.push_back(p);
    return build_lrf(support, p, config);
  }
  const Neighborhood nb = knn(cloud, p, std::min(k_neighbors, cloud.size()));
  std::vector<Vec3> support;
  support.reserve(nb.indices.size());
  for (std::size_t i : nb.indices) support.push_back(cloud[i]);
  return build_lrf(support, p, config);
}

double frame_angle_degrees(const Mat3& a, const Mat3& b) {
  // angle of R = a^T b via atan2(sin, cos): same value as
  // acos((tr R - 1) / 2) but well conditioned near 0 and 180 degrees.
  const Mat3 r = a.transposed() * b;
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  const Vec3 axis{r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)};
  const double s = 0.5 * norm(axis);
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

double lrf_error(const Lrf& a, const Lrf& b) {
  if (a.degenerate || b.degenerate) throw std::invalid_argument("lrf_error: degenerate frame");
  return frame_angle_degrees(a.axes, b.axes);
}

void AngleHistogram::add(double degrees) {
  const auto bin = static_cast<std::size_t>(std::max(0.0, degrees) / kBinWidth);
  ++counts[std::min(bin, kBins - 1)];
}

void AngleHistogram::merge(const AngleHistogram& other) {
  for (std::size_t i = 0; i < kBins; ++i) counts[i] += other.counts[i];
}

std::size_t AngleHistogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::string AngleHistogram::to_csv() const {
  std::string out = "bin_start_deg,bin_end_deg,count,fraction\n";
  const std::size_t n = total();
  char buf[128];
  for (std::size_t i = 0; i < kBins; ++i) {
    const double frac = n ? static_cast<double>(counts[i]) / static_cast<double>(n) : 0.0;
    std::snprintf(buf, sizeof buf, "%g,%g,%zu,%.6f\n", i * kBinWidth, (i + 1) * kBinWidth, counts[i], frac);
    out += buf;
  }
  return out;
}

RepeatabilityResult repeatability_experiment(const PointCloud& model, const RepeatabilityConfig& config) {
  const std::size_t n = model.size();
  if (n < 2) throw std::invalid_argument("repeatability_experiment: model needs >= 2 points");
  if (!(config.subsample_ratio > 0.0 && config.subsample_ratio <= 1.0))
    throw std::invalid_argument("repeatability_experiment: subsample_ratio must be in (0, 1]");

  RepeatabilityResult result;
  result.mesh_resolution = mean_nearest_neighbor_distance(model.points);
  result.noise_sigma = config.noise_sigma_factor * result.mesh_resolution;

  Rng rng = make_rng(config.seed, {0x5ce7e});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto keep = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(config.subsample_ratio * static_cast<double>(n))), 1, n);
  std::vector<std::size_t> kept(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(kept.begin(), kept.end());

  std::vector<Vec3> scene;
  scene.reserve(keep);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t i : kept) {
    Vec3 q = model.points[i];
    if (result.noise_sigma > 0.0) q += Vec3{gauss(rng), gauss(rng), gauss(rng)} * result.noise_sigma;
    scene.push_back(q);
  }
  result.scene_size = scene.size();

  result.pairs = std::min(config.n_pairs, std::max<std::size_t>(1, n / 2));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  auto keypoint_coords = [&](std::span<const Vec3> cloud) {
    std::vector<Vec3> kp;
    if (!config.lrf.weighted) return kp;
    const KeypointSet ks = farthest_point_sampling(cloud, std::min(config.weighted_keypoints, cloud.size()));
    kp.reserve(ks.indices.size());
    for (std::size_t i : ks.indices) kp.push_back(cloud[i]);
    return kp;
  };
  const std::vector<Vec3> model_kp = keypoint_coords(model.points);
  const std::vector<Vec3> scene_kp = keypoint_coords(scene);

  double total = 0.0;
  for (std::size_t pi = 0; pi < result.pairs; ++pi) {
    const Vec3& pm = model.points[order[pi]];
    const Vec3& ps = scene[knn(scene, pm, 1).indices.front()];
    const Lrf fm = build_keypoint_lrf(model.points, model_kp, pm, config.lrf, config.k_neighbors);
    const Lrf fs = build_keypoint_lrf(scene, scene_kp, ps, config.lrf, config.k_neighbors);
    if (fm.degenerate || fs.degenerate) {
      ++result.degenerate_count;
      continue;
    }
    const double e = lrf_error(fs, fm);
    result.errors.push_back(e);
    result.histogram.add(e);
    total += e;
  }
  result.mean_error = result.errors.empty() ? 0.0 : total / static_cast<double>(result.errors.size());
  return result;
}

}  // namespace gca
