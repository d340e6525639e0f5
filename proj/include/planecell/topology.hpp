#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace planecell::topology {

/// Read-only view of a row-major label map.
struct LabelView {
  int width = 0;
  int height = 0;
  std::span<const std::int32_t> labels;

  /// Out-of-image positions read as -1.
  std::int32_t at(int x, int y) const {
    if (x < 0 || y < 0 || x >= width || y >= height) return -1;
    return labels[static_cast<std::size_t>(y) * width + x];
  }
};

enum class PixelClass : std::uint8_t { Interior = 0, Boundary = 1, Vertex = 2 };

/// Pixel corner on the junction grid: pixel (x, y) spans [x, x+1] x [y, y+1].
/// In pixel-centre image coordinates a corner sits at (u - 0.5, v - 0.5).
struct Corner {
  int u = 0;
  int v = 0;
  bool operator==(const Corner&) const = default;
};

using Ring = std::vector<Corner>;

/// Outer ring has positive shoelace area; hole rings are negative.
struct Polygon {
  std::int32_t cell = -1;
  Ring outer;
  std::vector<Ring> holes;

  std::size_t vertex_count() const;
};

/// BOUNDARY: a 4-neighbour (or the image edge) carries a different label.
/// VERTEX: boundary pixel at a 2x2 junction that is neither uniform nor a
/// straight two-label split, i.e. a turn or a meeting of >= 3 labels.
std::vector<PixelClass> classify_pixels(const LabelView& labels);

/// True if the 2x2 junction with top-left pixel (u-1, v-1) is a polygon corner.
bool is_vertex_junction(const LabelView& labels, int u, int v);

/// Traces the segment's boundary along pixel edges and keeps turning
/// points only. Throws ContractError if the cell is missing or not
/// 4-connected.
Polygon extract_polygon(const LabelView& labels, std::int32_t cell);

/// Polygons of every cell 0..max label, in id order.
std::vector<Polygon> extract_all_polygons(const LabelView& labels);

double signed_area(const Ring& ring);

/// Even-odd fill of all rings, sampled at pixel centres.
std::vector<std::uint8_t> rasterize(const Polygon& poly, int width, int height);

}  // namespace planecell::topology
