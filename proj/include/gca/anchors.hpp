#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gca/geometry.hpp"
#include "gca/lrf.hpp"

namespace gca {

/// Anchor points in frame-local coordinates, one per sign bin.
///
/// Bins follow the canonical order (+++, ++-, +-+, +--, -++, -+-, --+, ---)
/// over (x', y', z'). Smaller anchor counts drop the z sign first, then y:
/// 4 bins split on (x', y'), 2 on x', 1 is the whole cloud. A coordinate of
/// exactly zero counts as non-negative. An empty bin has its anchor at the
/// local origin and occupancy 0.
struct AnchorSet {
  std::vector<Vec3> anchors_local;
  std::vector<std::size_t> occupancy;

  std::size_t size() const { return anchors_local.size(); }
};

/// Per-neighbour relation rows: row k = (x' - a'_k, |x' - a'_k|).
struct RelationTensor {
  std::vector<std::array<double, 4>> rows;
};

bool is_valid_anchor_count(std::size_t count);

/// x' = axes^T (x - origin). Throws std::invalid_argument on a degenerate
/// frame.
Vec3 to_local(const Vec3& x, const Lrf& frame);

std::size_t anchor_bin(const Vec3& local, std::size_t anchor_count);

AnchorSet make_anchors(std::span<const Vec3> points, const Lrf& frame, std::size_t anchor_count);

/// Same binning for points already in local coordinates.
AnchorSet make_anchors_local(std::span<const Vec3> local_points, std::size_t anchor_count);

RelationTensor relation_tensor(const Vec3& x_local, const AnchorSet& anchors);

/// Writes rows to `out` (anchors.size() * 4 values, row-major).
void relation_rows(const Vec3& x_local, const AnchorSet& anchors, std::span<double> out);

/// "bin,x,y,z,occupancy" rows.
std::string anchors_csv(const AnchorSet& anchors);

}  // namespace gca
