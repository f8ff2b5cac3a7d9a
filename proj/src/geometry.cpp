#include "gca/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

namespace gca {

Mat3 Mat3::transposed() const {
  return Mat3{{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}};
}

double Mat3::determinant() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

double Mat3::frobenius_norm() const {
  double s = 0.0;
  for (double v : m) s += v * v;
  return std::sqrt(s);
}

Mat3 operator*(const Mat3& a, const Mat3& b) {
  Mat3 c;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      c(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j) + a(i, 2) * b(2, j);
  return c;
}

Vec3 operator*(const Mat3& a, const Vec3& v) {
  return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
          a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
          a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

Vec3 transpose_times(const Mat3& a, const Vec3& v) {
  return {a(0, 0) * v.x + a(1, 0) * v.y + a(2, 0) * v.z,
          a(0, 1) * v.x + a(1, 1) * v.y + a(2, 1) * v.z,
          a(0, 2) * v.x + a(1, 2) * v.y + a(2, 2) * v.z};
}

Mat3 operator+(const Mat3& a, const Mat3& b) {
  Mat3 c;
  for (std::size_t i = 0; i < 9; ++i) c.m[i] = a.m[i] + b.m[i];
  return c;
}

Mat3 operator-(const Mat3& a, const Mat3& b) {
  Mat3 c;
  for (std::size_t i = 0; i < 9; ++i) c.m[i] = a.m[i] - b.m[i];
  return c;
}

Mat3 operator*(double s, const Mat3& a) {
  Mat3 c;
  for (std::size_t i = 0; i < 9; ++i) c.m[i] = s * a.m[i];
  return c;
}

double max_abs_difference(const Mat3& a, const Mat3& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < 9; ++i) d = std::max(d, std::abs(a.m[i] - b.m[i]));
  return d;
}

Rotation::Rotation(const Mat3& matrix) : matrix_(matrix) {
  const double orth = max_abs_difference(matrix * matrix.transposed(), Mat3::identity());
  const double det = matrix.determinant();
  if (!(orth <= 1e-10) || !(std::abs(det - 1.0) <= 1e-10)) {
    throw std::invalid_argument("rotation matrix is not proper orthogonal (orthogonality error " +
                                std::to_string(orth) + ", det " + std::to_string(det) + ")");
  }
}

Rotation Rotation::about_z(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return Rotation(Mat3{{c, -s, 0, s, c, 0, 0, 0, 1}}, Unchecked{});
}

Rotation Rotation::from_quaternion(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (!(n > 0.0)) throw std::invalid_argument("zero quaternion");
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  return Rotation(Mat3{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
                        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
                        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}},
                  Unchecked{});
}

Rotation Rotation::then(const Rotation& next) const {
  return Rotation(next.matrix_ * matrix_, Unchecked{});
}

KeypointSet farthest_point_sampling(std::span<const Vec3> points, std::size_t m) {
  const std::size_t n = points.size();
  if (m < 1 || m > n) {
    throw std::invalid_argument("farthest_point_sampling: m=" + std::to_string(m) +
                                " outside [1, " + std::to_string(n) + "]");
  }
  KeypointSet out;
  out.indices.reserve(m);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  std::size_t current = 0;
  for (std::size_t s = 0; s < m; ++s) {
    out.indices.push_back(current);
    taken[current] = 1;
    const Vec3 c = points[current];
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double d = squared_distance(points[i], c);
      if (d < min_d2[i]) min_d2[i] = d;
      // strict '>' keeps the lowest index on ties
      if (min_d2[i] > best_d) {
        best_d = min_d2[i];
        best = i;
      }
    }
    current = best;
  }
  return out;
}

Neighborhood knn(std::span<const Vec3> points, const Vec3& query, std::size_t k) {
  const std::size_t n = points.size();
  if (k < 1 || k > n) {
    throw std::invalid_argument("knn: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(n) + "]");
  }
  std::vector<std::pair<double, std::size_t>> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = {squared_distance(points[i], query), i};
  const auto kth = d.begin() + static_cast<std::ptrdiff_t>(k);
  if (k < n) std::nth_element(d.begin(), kth - 1, d.end());
  std::sort(d.begin(), kth);
  Neighborhood nb;
  nb.query = query;
  nb.indices.resize(k);
  nb.squared_distances.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    nb.squared_distances[i] = d[i].first;
    nb.indices[i] = d[i].second;
  }
  return nb;
}

namespace {

// Zeroes a(p,q) with one Jacobi rotation; accumulates into v.
void jacobi_rotate(Mat3& a, Mat3& v, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  if (apq == 0.0) return;
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  double t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  if (theta < 0.0) t = -t;
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;
  const double tau = s / (1.0 + c);

  const double app = a(p, p);
  const double aqq = a(q, q);
  a(p, p) = app - t * apq;
  a(q, q) = aqq + t * apq;
  a(p, q) = a(q, p) = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    if (r == p || r == q) continue;
    const double arp = a(r, p);
    const double arq = a(r, q);
    a(r, p) = a(p, r) = arp - s * (arq + tau * arp);
    a(r, q) = a(q, r) = arq + s * (arp - tau * arq);
  }
  for (std::size_t r = 0; r < 3; ++r) {
    const double vrp = v(r, p);
    const double vrq = v(r, q);
    v(r, p) = vrp - s * (vrq + tau * vrp);
    v(r, q) = vrq + s * (vrp - tau * vrq);
  }
}

}  // namespace

SymEig3 sym_eig3(const Mat3& input) {
  const double scale = input.frobenius_norm();
  const double sym_tol = 1e-12 * std::max(1.0, scale);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j)
      if (!(std::abs(input(i, j) - input(j, i)) <= sym_tol))
        throw std::invalid_argument("sym_eig3: matrix is not symmetric");

  Mat3 a = input;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j) a(i, j) = a(j, i) = 0.5 * (input(i, j) + input(j, i));
  Mat3 v = Mat3::identity();

  SymEig3 out;
  constexpr int kMaxSweeps = 50;
  const double tol = 1e-13 * scale;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    const double off = std::sqrt(2.0 * (a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2)));
    if (off <= tol) break;
    jacobi_rotate(a, v, 0, 1);
    jacobi_rotate(a, v, 0, 2);
    jacobi_rotate(a, v, 1, 2);
    out.sweeps = sweep + 1;
  }

  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  for (std::size_t c = 0; c < 3; ++c) {
    out.eigenvalues[c] = a(order[c], order[c]);
    Vec3 col = v.column(order[c]);
    out.eigenvectors.set_column(c, col * (1.0 / norm(col)));
  }
  const double gap_tol = 1e-9 * std::max(1.0, out.eigenvalues[0]);
  out.degenerate = std::abs(out.eigenvalues[0] - out.eigenvalues[1]) <= gap_tol ||
                   std::abs(out.eigenvalues[1] - out.eigenvalues[2]) <= gap_tol ||
                   std::abs(out.eigenvalues[0] - out.eigenvalues[2]) <= gap_tol;
  return out;
}

std::vector<Vec3> apply_rotation(std::span<const Vec3> points, const Rotation& r) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(r.apply(p));
  return out;
}

double mean_nearest_neighbor_distance(std::span<const Vec3> points) {
  const std::size_t n = points.size();
  if (n < 2) throw std::invalid_argument("mean_nearest_neighbor_distance: need >= 2 points");
  // Sweep along x so the inner scan can stop once the x gap alone exceeds the best distance.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return points[a].x < points[b].x || (points[a].x == points[b].x && a < b);
  });
  double total = 0.0;
  for (std::size_t oi = 0; oi < n; ++oi) {
    const Vec3& p = points[order[oi]];
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t oj = oi + 1; oj < n; ++oj) {
      const double dx = points[order[oj]].x - p.x;
      if (dx * dx >= best) break;
      best = std::min(best, squared_distance(points[order[oj]], p));
    }
    for (std::size_t oj = oi; oj-- > 0;) {
      const double dx = p.x - points[order[oj]].x;
      if (dx * dx >= best) break;
      best = std::min(best, squared_distance(points[order[oj]], p));
    }
    total += std::sqrt(best);
  }
  return total / static_cast<double>(n);
}

}  // namespace gca
