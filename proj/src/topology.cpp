#include "planecell/topology.hpp"

#include <algorithm>
#include <array>
#include <string>
#include <unordered_map>

#include "planecell/error.hpp"

namespace planecell::topology {

std::size_t Polygon::vertex_count() const {
  std::size_t n = outer.size();
  for (const auto& h : holes) n += h.size();
  return n;
}

bool is_vertex_junction(const LabelView& labels, int u, int v) {
  const auto nw = labels.at(u - 1, v - 1), ne = labels.at(u, v - 1);
  const auto sw = labels.at(u - 1, v), se = labels.at(u, v);
  if (nw == ne && ne == sw && sw == se) return false;
  const bool horizontal_split = nw == ne && sw == se;
  const bool vertical_split = nw == sw && ne == se;
  return !(horizontal_split || vertical_split);
}

std::vector<PixelClass> classify_pixels(const LabelView& labels) {
  const int w = labels.width, h = labels.height;
  std::vector<PixelClass> out(static_cast<std::size_t>(w) * h, PixelClass::Interior);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto l = labels.at(x, y);
      if (labels.at(x + 1, y) != l || labels.at(x - 1, y) != l || labels.at(x, y + 1) != l ||
          labels.at(x, y - 1) != l)
        out[static_cast<std::size_t>(y) * w + x] = PixelClass::Boundary;
    }
  }
  for (int v = 0; v <= h; ++v) {
    for (int u = 0; u <= w; ++u) {
      if (!is_vertex_junction(labels, u, v)) continue;
      // the four pixels around the junction; tag those split from a 2x2 neighbour
      const std::array<std::array<int, 2>, 4> px = {{{u - 1, v - 1}, {u, v - 1}, {u - 1, v}, {u, v}}};
      for (int k = 0; k < 4; ++k) {
        const int x = px[k][0], y = px[k][1];
        if (x < 0 || y < 0 || x >= w || y >= h) continue;
        const auto l = labels.at(x, y);
        const int hx = (k % 2 == 0) ? x + 1 : x - 1;  // horizontal partner in the 2x2
        const int vy = (k < 2) ? y + 1 : y - 1;       // vertical partner
        if (labels.at(hx, y) != l || labels.at(x, vy) != l)
          out[static_cast<std::size_t>(y) * w + x] = PixelClass::Vertex;
      }
    }
  }
  return out;
}

namespace {

// 0:+u 1:+v 2:-u 3:-v ; interior lies on the (dir + 1) side.
constexpr int kDu[4] = {1, 0, -1, 0};
constexpr int kDv[4] = {0, 1, 0, -1};

struct Outgoing {
  std::array<std::int8_t, 2> dir{-1, -1};
  std::array<bool, 2> used{false, false};
  int count = 0;
};

std::vector<Ring> trace_rings(const std::vector<std::int32_t>& pixels, const LabelView& labels,
                              std::int32_t cell) {
  const long long stride = labels.width + 1;
  const auto key = [stride](int u, int v) { return static_cast<long long>(v) * stride + u; };
  std::unordered_map<long long, Outgoing> out;
  out.reserve(pixels.size() * 2);
  const auto add = [&](int u, int v, int dir) {
    auto& o = out[key(u, v)];
    o.dir[o.count++] = static_cast<std::int8_t>(dir);
  };
  for (auto p : pixels) {
    const int x = p % labels.width, y = p / labels.width;
    if (labels.at(x, y - 1) != cell) add(x, y, 0);
    if (labels.at(x + 1, y) != cell) add(x + 1, y, 1);
    if (labels.at(x, y + 1) != cell) add(x + 1, y + 1, 2);
    if (labels.at(x - 1, y) != cell) add(x, y + 1, 3);
  }

  // deterministic start order: leftmost, then topmost corner
  std::vector<Corner> starts;
  starts.reserve(out.size());
  for (const auto& [k, o] : out)
    starts.push_back({static_cast<int>(k % stride), static_cast<int>(k / stride)});
  std::sort(starts.begin(), starts.end(),
            [](const Corner& a, const Corner& b) { return a.u != b.u ? a.u < b.u : a.v < b.v; });

  std::vector<Ring> rings;
  for (const Corner& s : starts) {
    auto& so = out[key(s.u, s.v)];
    for (int slot = 0; slot < so.count; ++slot) {
      if (so.used[slot]) continue;
      Ring ring;
      Corner c = s;
      int dir = so.dir[slot];
      so.used[slot] = true;
      int prev_dir = -1;
      const int first_dir = dir;
      while (true) {
        if (dir != prev_dir) ring.push_back(c);
        c = {c.u + kDu[dir], c.v + kDv[dir]};
        prev_dir = dir;
        auto it = out.find(key(c.u, c.v));
        if (it == out.end()) throw ContractError("boundary trace left the edge set");
        auto& o = it->second;
        // prefer turning toward the interior, then straight, then away
        int chosen = -1;
        for (int turn : {1, 0, 3}) {
          const int want = (dir + turn) % 4;
          for (int k = 0; k < o.count; ++k) {
            if (o.dir[k] == want) {
              chosen = k;
              break;
            }
          }
          if (chosen >= 0) break;
        }
        if (chosen < 0) throw ContractError("boundary trace hit a dead end");
        if (o.used[chosen]) break;  // closed: back on the start edge
        o.used[chosen] = true;
        dir = o.dir[chosen];
      }
      if (!ring.empty() && ring.front() == c && prev_dir == first_dir) {
        // the start corner lies in the middle of a straight run
        ring.erase(ring.begin());
      }
      rings.push_back(std::move(ring));
    }
  }
  return rings;
}

Polygon assemble(std::int32_t cell, std::vector<Ring> rings) {
  Polygon poly;
  poly.cell = cell;
  for (auto& r : rings) {
    if (signed_area(r) > 0.0) {
      if (!poly.outer.empty()) throw ContractError("cell " + std::to_string(cell) + " is not 4-connected");
      // start at the leftmost, then topmost vertex
      const auto first = std::min_element(r.begin(), r.end(), [](const Corner& a, const Corner& b) {
        return a.u != b.u ? a.u < b.u : a.v < b.v;
      });
      std::rotate(r.begin(), first, r.end());
      poly.outer = std::move(r);
    } else {
      poly.holes.push_back(std::move(r));
    }
  }
  if (poly.outer.empty()) throw ContractError("cell " + std::to_string(cell) + " has no pixels");
  return poly;
}

}  // namespace

Polygon extract_polygon(const LabelView& labels, std::int32_t cell) {
  std::vector<std::int32_t> pixels;
  for (std::size_t i = 0; i < labels.labels.size(); ++i)
    if (labels.labels[i] == cell) pixels.push_back(static_cast<std::int32_t>(i));
  if (pixels.empty()) throw ContractError("cell " + std::to_string(cell) + " does not exist");
  return assemble(cell, trace_rings(pixels, labels, cell));
}

std::vector<Polygon> extract_all_polygons(const LabelView& labels) {
  std::int32_t count = 0;
  for (auto l : labels.labels) count = std::max(count, l + 1);
  std::vector<std::vector<std::int32_t>> pixels(count);
  for (std::size_t i = 0; i < labels.labels.size(); ++i)
    pixels[labels.labels[i]].push_back(static_cast<std::int32_t>(i));
  std::vector<Polygon> out;
  out.reserve(count);
  for (std::int32_t c = 0; c < count; ++c) {
    if (pixels[c].empty()) throw ContractError("cell " + std::to_string(c) + " does not exist");
    out.push_back(assemble(c, trace_rings(pixels[c], labels, c)));
  }
  return out;
}

double signed_area(const Ring& ring) {
  double a = 0.0;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const Corner& p = ring[i];
    const Corner& q = ring[(i + 1) % ring.size()];
    a += static_cast<double>(p.u) * q.v - static_cast<double>(q.u) * p.v;
  }
  return a / 2.0;
}

std::vector<std::uint8_t> rasterize(const Polygon& poly, int width, int height) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(width) * height, 0);
  std::vector<std::vector<int>> crossings(height);
  const auto add_ring = [&](const Ring& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      const Corner& p = r[i];
      const Corner& q = r[(i + 1) % r.size()];
      if (p.u != q.u) continue;  // horizontal edge
      const int v0 = std::max(std::min(p.v, q.v), 0);
      const int v1 = std::min(std::max(p.v, q.v), height);
      for (int y = v0; y < v1; ++y) crossings[y].push_back(p.u);
    }
  };
  add_ring(poly.outer);
  for (const auto& h : poly.holes) add_ring(h);
  for (int y = 0; y < height; ++y) {
    auto& xs = crossings[y];
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2)
      for (int x = std::max(xs[k], 0); x < std::min(xs[k + 1], width); ++x)
        mask[static_cast<std::size_t>(y) * width + x] ^= 1;
  }
  return mask;
}

}  // namespace planecell::topology
