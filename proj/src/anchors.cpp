#include "gca/anchors.hpp"

#include <cstdio>
#include <stdexcept>

namespace gca {

bool is_valid_anchor_count(std::size_t count) {
  return count == 1 || count == 2 || count == 4 || count == 8;
}

Vec3 to_local(const Vec3& x, const Lrf& frame) {
  if (frame.degenerate) throw std::invalid_argument("to_local: degenerate frame");
  return transpose_times(frame.axes, x - frame.origin);
}

std::size_t anchor_bin(const Vec3& local, std::size_t anchor_count) {
  const std::size_t sx = local.x < 0.0 ? 1 : 0;
  const std::size_t sy = local.y < 0.0 ? 1 : 0;
  const std::size_t sz = local.z < 0.0 ? 1 : 0;
  switch (anchor_count) {
    case 8: return sx * 4 + sy * 2 + sz;
    case 4: return sx * 2 + sy;
    case 2: return sx;
    case 1: return 0;
    default: throw std::invalid_argument("anchor count must be 1, 2, 4 or 8");
  }
}

AnchorSet make_anchors_local(std::span<const Vec3> local_points, std::size_t anchor_count) {
  if (!is_valid_anchor_count(anchor_count))
    throw std::invalid_argument("anchor count must be 1, 2, 4 or 8");
  AnchorSet set;
  set.anchors_local.assign(anchor_count, Vec3{});
  set.occupancy.assign(anchor_count, 0);
  for (const Vec3& x : local_points) {
    const std::size_t b = anchor_bin(x, anchor_count);
    set.anchors_local[b] += x;
    ++set.occupancy[b];
  }
  for (std::size_t b = 0; b < anchor_count; ++b)
    if (set.occupancy[b] > 0) set.anchors_local[b] *= 1.0 / static_cast<double>(set.occupancy[b]);
  return set;
}

AnchorSet make_anchors(std::span<const Vec3> points, const Lrf& frame, std::size_t anchor_count) {
  std::vector<Vec3> local;
  local.reserve(points.size());
  for (const Vec3& x : points) local.push_back(to_local(x, frame));
  return make_anchors_local(local, anchor_count);
}

void relation_rows(const Vec3& x_local, const AnchorSet& anchors, std::span<double> out) {
  if (out.size() != anchors.size() * 4) throw std::invalid_argument("relation_rows: output size mismatch");
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    const Vec3 d = x_local - anchors.anchors_local[k];
    out[k * 4 + 0] = d.x;
    out[k * 4 + 1] = d.y;
    out[k * 4 + 2] = d.z;
    out[k * 4 + 3] = norm(d);
  }
}

RelationTensor relation_tensor(const Vec3& x_local, const AnchorSet& anchors) {
  RelationTensor t;
  t.rows.reserve(anchors.size());
  for (const Vec3& a : anchors.anchors_local) {
    const Vec3 d = x_local - a;
    t.rows.push_back({d.x, d.y, d.z, norm(d)});
  }
  return t;
}

std::string anchors_csv(const AnchorSet& anchors) {
  std::string out = "bin,x,y,z,occupancy\n";
  char buf[160];
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    const Vec3& a = anchors.anchors_local[k];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%zu\n", k, a.x, a.y, a.z, anchors.occupancy[k]);
    out += buf;
  }
  return out;
}

}  // namespace gca
