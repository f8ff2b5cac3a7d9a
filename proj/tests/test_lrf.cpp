#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gca/lrf.hpp"

using namespace gca;

namespace {

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> pts(n);
  for (Vec3& p : pts) p = {u(rng), u(rng), u(rng)};
  return pts;
}

void check_frame_legal(const Lrf& f) {
  const Mat3& a = f.axes;
  CHECK(max_abs_difference(a.transposed() * a, Mat3::identity()) < 1e-9);
  CHECK(std::abs(a.determinant() - 1.0) < 1e-9);
}

const std::vector<Vec3> kQ{{0, 0, 0}, {1, 0, 0}, {0, 2, 0}};

}  // namespace

TEST_CASE("distance weights") {
  const auto w = distance_weights(kQ, {0, 0, 0});
  REQUIRE(w.size() == 3);
  CHECK(w[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(w[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(w[2] == 0.0);

  const std::vector<Vec3> same(4, Vec3{1, 1, 1});
  CHECK_THROWS_AS(distance_weights(same, {1, 1, 1}), DegenerateInputError);
  CHECK_THROWS_AS(distance_weights(std::vector<Vec3>{{1, 0, 0}}, {0, 0, 0}), std::invalid_argument);

  const auto pts = random_points(50, 1);
  const auto rw = distance_weights(pts, pts[3]);
  double sum = 0.0, far = 0.0;
  std::size_t far_i = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    sum += rw[i];
    CHECK(rw[i] >= 0.0);
    if (norm(pts[i] - pts[3]) > far) {
      far = norm(pts[i] - pts[3]);
      far_i = i;
    }
  }
  CHECK(std::abs(sum - 1.0) < 1e-12);
  CHECK(rw[far_i] == 0.0);
}

TEST_CASE("weighted covariance and main orientation by hand") {
  const auto w = distance_weights(kQ, {0, 0, 0});
  const Mat3 cov = weighted_covariance(kQ, {0, 0, 0}, w);
  CHECK(max_abs_difference(cov, Mat3::diagonal(1.0 / 3.0, 0, 0)) < 1e-15);
  const Vec3 o = main_orientation(kQ, {0, 0, 0}, w);
  CHECK(norm(o - Vec3{1.0 / 3.0, 0, 0}) < 1e-15);

  // all weight on p itself
  const std::vector<double> on_p{1.0, 0.0, 0.0};
  CHECK(weighted_covariance(kQ, {0, 0, 0}, on_p) == Mat3{});

  // the same set gives a degenerate spectrum, so the frame is flagged
  CHECK(build_lrf(kQ, {0, 0, 0}, {}).degenerate);
}

TEST_CASE("local covariance of two points") {
  const std::vector<Vec3> two{{1, 2, 0}, {0, 0, 3}};
  const Mat3 expect{{1, 2, 0, 2, 4, 0, 0, 0, 9}};
  CHECK(max_abs_difference(local_covariance(two, {0, 0, 0}), expect) < 1e-15);
  const std::vector<double> ones{1.0, 1.0};
  CHECK(local_covariance(two, {0, 0, 0}) == weighted_covariance(two, {0, 0, 0}, ones));
}

TEST_CASE("covariance conjugation and orientation linearity") {
  Rng rng(5);
  const auto pts = random_points(30, 2);
  const Rotation r = sample_rotation(RotationMode::SO3, rng);
  const auto rp = apply_rotation(pts, r);
  const auto w = distance_weights(pts, pts[0]);
  const Mat3 m = r.matrix();
  CHECK(max_abs_difference(weighted_covariance(rp, rp[0], w), m * weighted_covariance(pts, pts[0], w) * m.transposed()) <
        1e-12);
  CHECK(max_abs_difference(local_covariance(rp, rp[0]), m * local_covariance(pts, pts[0]) * m.transposed()) < 1e-12);
  CHECK(norm(main_orientation(rp, rp[0], w) - r.apply(main_orientation(pts, pts[0], w))) < 1e-12);

  // point-symmetric support around p cancels
  const std::vector<Vec3> sym{{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 2, 0}, {0, -2, 0}};
  const auto sw = distance_weights(sym, {0, 0, 0});
  CHECK(norm(main_orientation(sym, {0, 0, 0}, sw)) < 1e-15);
}

TEST_CASE("frames are right handed and rotation equivariant") {
  Rng rng(11);
  std::size_t checked = 0;
  for (int t = 0; t < 100; ++t) {
    const auto pts = random_points(64, 1000 + t);
    const Rotation r = sample_rotation(RotationMode::SO3, rng);
    const auto rp = apply_rotation(pts, r);
    for (const LrfConfig cfg : {LrfConfig{true, true}, LrfConfig{false, true}}) {
      const Lrf a = build_keypoint_lrf(pts, pts, pts[t % 64], cfg, 16);
      const Lrf b = build_keypoint_lrf(rp, rp, rp[t % 64], cfg, 16);
      REQUIRE_FALSE(a.degenerate);
      check_frame_legal(a);
      check_frame_legal(b);
      if (a.o_fallback_used || b.o_fallback_used) continue;
      CHECK(max_abs_difference(b.axes, r.matrix() * a.axes) < 1e-9);
      // local coordinates agree
      for (std::size_t i = 0; i < 5; ++i) {
        const Vec3 la = transpose_times(a.axes, pts[i] - a.origin);
        const Vec3 lb = transpose_times(b.axes, rp[i] - b.origin);
        CHECK(norm(la - lb) < 1e-9);
      }
      ++checked;
    }
  }
  CHECK(checked >= 190);
}

TEST_CASE("fallback sign rule on a point-symmetric support") {
  const std::vector<Vec3> sym{{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 2, 0}, {0, -2, 0}, {0, 0, 3}, {0, 0, -3}};
  const Lrf f = build_lrf(sym, {0, 0, 0}, {});
  CHECK_FALSE(f.degenerate);
  CHECK(f.o_fallback_used);
  check_frame_legal(f);
  // largest |projection| ties go to the first point: (0,2,0) for the y axis
  CHECK(f.axes(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("first-component sign rule without the orientation vector") {
  const auto pts = random_points(40, 77);
  const Lrf f = build_lrf(pts, pts[0], {false, false});
  REQUIRE_FALSE(f.degenerate);
  CHECK_FALSE(f.o_fallback_used);
  check_frame_legal(f);
  for (std::size_t c = 0; c < 2; ++c) {
    const Vec3 e = f.axes.column(c);
    const double first = e.x != 0.0 ? e.x : (e.y != 0.0 ? e.y : e.z);
    CHECK(first > 0.0);
  }
}

TEST_CASE("lrf error on reference frame pairs") {
  Lrf a;
  Lrf b;
  CHECK(lrf_error(a, b) == 0.0);
  b.axes = Rotation::about_z(std::numbers::pi / 2).matrix();
  CHECK(std::abs(lrf_error(a, b) - 90.0) < 1e-9);
  b.axes = Rotation::about_z(std::numbers::pi).matrix();
  CHECK(std::abs(lrf_error(a, b) - 180.0) < 1e-9);

  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    Lrf x, y;
    x.axes = sample_rotation(RotationMode::SO3, rng).matrix();
    y.axes = sample_rotation(RotationMode::SO3, rng).matrix();
    const double e = lrf_error(x, y);
    CHECK(e >= 0.0);
    CHECK(e <= 180.0);
    CHECK(std::abs(e - lrf_error(y, x)) < 1e-9);
    const Mat3 r = sample_rotation(RotationMode::SO3, rng).matrix();
    Lrf rx = x, ry = y;
    rx.axes = r * x.axes;
    ry.axes = r * y.axes;
    CHECK(std::abs(e - lrf_error(rx, ry)) < 1e-9);
    // agrees with the arccos form away from the endpoints
    const double tr = (x.axes.transposed() * y.axes).trace();
    const double acos_form = std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0)) * 180.0 / std::numbers::pi;
    if (e > 1.0 && e < 179.0) CHECK(std::abs(e - acos_form) < 1e-9);
  }
  Lrf bad;
  bad.degenerate = true;
  CHECK_THROWS_AS(lrf_error(a, bad), std::invalid_argument);
}

TEST_CASE("angle histogram") {
  AngleHistogram h;
  h.add(0.0);
  h.add(9.999);
  h.add(10.0);
  h.add(180.0);
  CHECK(h.counts[0] == 2);
  CHECK(h.counts[1] == 1);
  CHECK(h.counts[17] == 1);
  CHECK(h.total() == 4);
  AngleHistogram g;
  g.add(95.0);
  h.merge(g);
  CHECK(h.counts[9] == 1);

  std::istringstream csv(h.to_csv());
  std::string line;
  std::getline(csv, line);
  CHECK(line == "bin_start_deg,bin_end_deg,count,fraction");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 18);
}

TEST_CASE("repeatability experiment") {
  const PointCloud model = generate_bumpy_sphere(1024, 5, 4);

  RepeatabilityConfig exact;
  exact.subsample_ratio = 1.0;
  exact.noise_sigma_factor = 0.0;
  exact.n_pairs = 200;
  exact.weighted_keypoints = 128;
  for (const LrfConfig lrf : {LrfConfig{true, true}, LrfConfig{false, true}, LrfConfig{false, false}}) {
    exact.lrf = lrf;
    const RepeatabilityResult r = repeatability_experiment(model, exact);
    CHECK(r.pairs == 200);
    CHECK(r.histogram.counts[0] == r.pairs - r.degenerate_count);
    for (std::size_t b = 1; b < AngleHistogram::kBins; ++b) CHECK(r.histogram.counts[b] == 0);
    for (double e : r.errors) CHECK(e == 0.0);
  }

  RepeatabilityConfig noisy;
  noisy.n_pairs = 300;
  noisy.weighted_keypoints = 256;
  const RepeatabilityResult r = repeatability_experiment(model, noisy);
  CHECK(r.histogram.total() == r.pairs - r.degenerate_count);
  CHECK(r.scene_size == 512);
  CHECK(r.noise_sigma == doctest::Approx(0.1 * mean_nearest_neighbor_distance(model.points)));
  const RepeatabilityResult again = repeatability_experiment(model, noisy);
  CHECK(again.errors == r.errors);

  // pairs are capped at half the model size
  RepeatabilityConfig capped = noisy;
  capped.n_pairs = 5000;
  CHECK(repeatability_experiment(generate_bumpy_sphere(64, 3, 1), capped).pairs == 32);
}
