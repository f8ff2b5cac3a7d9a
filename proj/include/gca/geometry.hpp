#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace gca {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

  friend Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double squared_norm(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double squared_distance(const Vec3& a, const Vec3& b) { return squared_norm(a - b); }
inline bool is_finite(const Vec3& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{};

  static Mat3 identity() { return Mat3{{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
  static Mat3 diagonal(double a, double b, double c) { return Mat3{{a, 0, 0, 0, b, 0, 0, 0, c}}; }
  static Mat3 from_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
    return Mat3{{c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z}};
  }

  double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }
  double& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }

  Vec3 column(std::size_t c) const { return {m[c], m[3 + c], m[6 + c]}; }
  Vec3 row(std::size_t r) const { return {m[r * 3], m[r * 3 + 1], m[r * 3 + 2]}; }
  void set_column(std::size_t c, const Vec3& v) { m[c] = v.x; m[3 + c] = v.y; m[6 + c] = v.z; }

  Mat3 transposed() const;
  double trace() const { return m[0] + m[4] + m[8]; }
  double determinant() const;
  double frobenius_norm() const;

  friend bool operator==(const Mat3&, const Mat3&) = default;
};

Mat3 operator*(const Mat3& a, const Mat3& b);
Vec3 operator*(const Mat3& a, const Vec3& v);
Mat3 operator+(const Mat3& a, const Mat3& b);
Mat3 operator-(const Mat3& a, const Mat3& b);
Mat3 operator*(double s, const Mat3& a);
// a^T * v without forming the transpose.
Vec3 transpose_times(const Mat3& a, const Vec3& v);
double max_abs_difference(const Mat3& a, const Mat3& b);

/// Proper rotation matrix. Construction validates orthogonality and det = +1
/// to 1e-10.
class Rotation {
 public:
  Rotation() : matrix_(Mat3::identity()) {}
  explicit Rotation(const Mat3& matrix);

  static Rotation identity() { return Rotation{}; }
  static Rotation about_z(double angle);
  // Unit quaternion (w, x, y, z); normalized internally.
  static Rotation from_quaternion(double w, double x, double y, double z);

  const Mat3& matrix() const { return matrix_; }
  Vec3 apply(const Vec3& v) const { return matrix_ * v; }
  Rotation then(const Rotation& next) const;  // next * this

 private:
  struct Unchecked {};
  Rotation(const Mat3& matrix, Unchecked) : matrix_(matrix) {}
  Mat3 matrix_;
};

/// Indices into a point set, in farthest-point selection order.
struct KeypointSet {
  std::vector<std::size_t> indices;
};

/// k nearest points to a query, sorted by (squared distance, index).
struct Neighborhood {
  Vec3 query;
  std::vector<std::size_t> indices;
  std::vector<double> squared_distances;
};

struct SymEig3 {
  std::array<double, 3> eigenvalues{};  // descending
  Mat3 eigenvectors;                    // column i pairs with eigenvalues[i]
  bool degenerate = false;
  int sweeps = 0;
};

KeypointSet farthest_point_sampling(std::span<const Vec3> points, std::size_t m);

Neighborhood knn(std::span<const Vec3> points, const Vec3& query, std::size_t k);

/// Cyclic Jacobi eigensolver for symmetric 3x3 input. Throws
/// std::invalid_argument when the input is not symmetric.
SymEig3 sym_eig3(const Mat3& a);

std::vector<Vec3> apply_rotation(std::span<const Vec3> points, const Rotation& r);

/// Mean distance from each point to its nearest other point.
double mean_nearest_neighbor_distance(std::span<const Vec3> points);

}  // namespace gca
