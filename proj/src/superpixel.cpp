#include "planecell/superpixel.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <string>

#include "planecell/error.hpp"

namespace planecell::superpixel {

namespace {

constexpr int kDx4[4] = {1, -1, 0, 0};
constexpr int kDy4[4] = {0, 0, 1, -1};

std::optional<double> plane_at(const PlaneMap& planes, std::int32_t s, const Eigen::Vector2d& p) {
  if (s < 0 || static_cast<std::size_t>(s) >= planes.size() || !planes[s]) return std::nullopt;
  return (*planes[s])(p.x(), p.y());
}

// Recomputes all statistics from labels + pixel_bins. Labels are compacted
// to 0..n-1 in order of first appearance when `compact` is set.
void rebuild_statistics(SegmentationState& st, bool compact) {
  const std::size_t n = st.labels.size();
  if (compact) {
    std::vector<std::int32_t> remap;
    std::int32_t next = 0;
    for (auto& l : st.labels) {
      if (static_cast<std::size_t>(l) >= remap.size()) remap.resize(l + 1, -1);
      if (remap[l] < 0) remap[l] = next++;
      l = remap[l];
    }
  }
  std::int32_t count = 0;
  for (auto l : st.labels) count = std::max(count, l + 1);
  st.histograms.assign(count, ColorHistogram{});
  st.sizes.assign(count, 0);
  st.sum_u.assign(count, 0.0);
  st.sum_v.assign(count, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto l = st.labels[i];
    st.histograms[l].add(st.pixel_bins[i]);
    st.sizes[l] += 1;
    st.sum_u[l] += static_cast<double>(i % st.width);
    st.sum_v[l] += static_cast<double>(i / st.width);
  }
}

}  // namespace

int color_bin(const Rgb& c) {
  return (c[0] >> 5) * kBinsPerChannel * kBinsPerChannel + (c[1] >> 5) * kBinsPerChannel +
         (c[2] >> 5);
}

EnergyWeights default_weights(int base_side, bool depth_active) {
  const double side = std::max(base_side, 1);
  return {1.0 / (side * side), depth_active ? 0.1 : 0.0};
}

SegmentationState make_state(const ColorImage& img, std::vector<std::int32_t> labels,
                             int base_side, int levels) {
  if (labels.size() != img.data.size())
    throw ParameterError("label map size does not match image");
  SegmentationState st;
  st.width = img.width;
  st.height = img.height;
  st.base_side = std::max(base_side, 1);
  st.levels = std::max(levels, 1);
  st.level = 1;
  st.labels = std::move(labels);
  for (auto l : st.labels)
    if (l < 0) throw ParameterError("negative segment label");
  st.pixel_bins.resize(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i)
    st.pixel_bins[i] = static_cast<std::uint16_t>(color_bin(img.data[i]));
  rebuild_statistics(st, false);
  for (auto s : st.sizes)
    if (s == 0) throw ParameterError("label map has unused segment ids");
  return st;
}

SegmentationState init_grid(const ColorImage& img, int k, int levels) {
  const long long n = static_cast<long long>(img.width) * img.height;
  if (k < 2) throw ParameterError("superpixel count must be >= 2");
  if (levels < 1) throw ParameterError("level count must be >= 1");
  if (k > n)
    throw ParameterError("superpixel count " + std::to_string(k) + " exceeds pixel count");

  const double aspect = static_cast<double>(img.width) / img.height;
  int nx = std::max(1, static_cast<int>(std::lround(std::sqrt(k * aspect))));
  nx = std::min(nx, img.width);
  int ny = std::max(1, static_cast<int>(std::lround(static_cast<double>(k) / nx)));
  ny = std::min(ny, img.height);

  std::vector<std::int32_t> labels(static_cast<std::size_t>(n));
  std::vector<int> col(img.width), row(img.height);
  for (int x = 0; x < img.width; ++x)
    col[x] = static_cast<int>(static_cast<long long>(x) * nx / img.width);
  for (int y = 0; y < img.height; ++y)
    row[y] = static_cast<int>(static_cast<long long>(y) * ny / img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      labels[static_cast<std::size_t>(y) * img.width + x] = row[y] * nx + col[x];

  const int base = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(n) / k))));
  return make_state(img, std::move(labels), base, levels);
}

int block_side(int base_side, int level) { return std::max(1, base_side / std::max(level, 1)); }

std::vector<int> level_schedule(int base_side, int levels) {
  std::vector<int> sides;
  for (int l = 1; l <= levels; ++l) {
    const int s = block_side(base_side, l);
    if (sides.empty() || sides.back() != s) sides.push_back(s);
  }
  if (sides.back() != 1) sides.push_back(1);
  return sides;
}

namespace {

// Reusable scratch space for tile decomposition.
struct TileScratch {
  std::vector<std::int32_t> comp;
  std::vector<std::int32_t> queue;
  std::array<std::int32_t, kHistogramBins> bin_count{};
};

void finish_block(const SegmentationState& st, const DisparityMap* disp, Block& b,
                  TileScratch& scratch) {
  double su = 0.0, sv = 0.0, sd = 0.0;
  std::size_t nd = 0;
  b.bins.clear();
  for (auto p : b.pixels) {
    const int x = p % st.width;
    const int y = p / st.width;
    su += x;
    sv += y;
    if (disp) {
      const float d = disp->disp[p];
      if (DisparityMap::is_valid(d)) {
        sd += d;
        ++nd;
      }
    }
    if (scratch.bin_count[st.pixel_bins[p]]++ == 0) b.bins.emplace_back(st.pixel_bins[p], 0);
  }
  for (auto& [bin, count] : b.bins) {
    count = scratch.bin_count[bin];
    scratch.bin_count[bin] = 0;
  }
  std::sort(b.bins.begin(), b.bins.end());
  const double n = static_cast<double>(b.pixels.size());
  b.position = {su / n, sv / n};
  b.mean_disparity = nd ? std::optional<double>(sd / static_cast<double>(nd)) : std::nullopt;
}

void collect_neighbours(const SegmentationState& st, Block& b) {
  b.neighbours.clear();
  for (auto p : b.pixels) {
    const int x = p % st.width;
    const int y = p / st.width;
    for (int k = 0; k < 4; ++k) {
      const int nx = x + kDx4[k];
      const int ny = y + kDy4[k];
      if (nx < 0 || ny < 0 || nx >= st.width || ny >= st.height) continue;
      const auto l = st.label(nx, ny);
      if (l != b.label && std::find(b.neighbours.begin(), b.neighbours.end(), l) ==
                              b.neighbours.end())
        b.neighbours.push_back(l);
    }
  }
  std::sort(b.neighbours.begin(), b.neighbours.end());
}

// Splits tile (tx, ty) into its blocks in raster order of their first pixel.
void tile_blocks(const SegmentationState& st, int side, int tx, int ty,
                 const DisparityMap* disp, TileScratch& scratch, std::vector<Block>& out,
                 bool with_neighbours = true) {
  const int x0 = tx * side, y0 = ty * side;
  const int x1 = std::min(st.width, x0 + side), y1 = std::min(st.height, y0 + side);
  const int tw = x1 - x0, th = y1 - y0;
  // label 4-connected same-label components of the tile
  scratch.comp.assign(static_cast<std::size_t>(tw) * th, -1);
  std::size_t count = 0;
  for (int ly = 0; ly < th; ++ly) {
    for (int lx = 0; lx < tw; ++lx) {
      if (scratch.comp[ly * tw + lx] >= 0) continue;
      const auto label = st.label(x0 + lx, y0 + ly);
      const auto id = static_cast<std::int32_t>(count++);
      if (out.size() < count) out.emplace_back();
      out[id].label = label;
      out[id].pixels.clear();
      scratch.queue.assign(1, ly * tw + lx);
      scratch.comp[ly * tw + lx] = id;
      for (std::size_t qi = 0; qi < scratch.queue.size(); ++qi) {
        const int li = scratch.queue[qi];
        const int cx = li % tw, cy = li / tw;
        for (int k = 0; k < 4; ++k) {
          const int nx = cx + kDx4[k], ny = cy + kDy4[k];
          if (nx < 0 || ny < 0 || nx >= tw || ny >= th) continue;
          const int ni = ny * tw + nx;
          if (scratch.comp[ni] >= 0 || st.label(x0 + nx, y0 + ny) != label) continue;
          scratch.comp[ni] = id;
          scratch.queue.push_back(ni);
        }
      }
    }
  }
  out.resize(count);
  // pixels in raster order
  for (int ly = 0; ly < th; ++ly)
    for (int lx = 0; lx < tw; ++lx)
      out[scratch.comp[ly * tw + lx]].pixels.push_back((y0 + ly) * st.width + x0 + lx);
  for (auto& b : out) {
    finish_block(st, disp, b, scratch);
    if (with_neighbours) {
      collect_neighbours(st, b);
    } else {
      b.neighbours.clear();
    }
  }
}

}  // namespace

std::vector<Block> enumerate_blocks(const SegmentationState& state, int side,
                                    const DisparityMap* disp) {
  side = std::max(side, 1);
  std::vector<Block> all, tile;
  TileScratch scratch;
  const int tiles_x = (state.width + side - 1) / side;
  const int tiles_y = (state.height + side - 1) / side;
  for (int ty = 0; ty < tiles_y; ++ty) {
    for (int tx = 0; tx < tiles_x; ++tx) {
      tile_blocks(state, side, tx, ty, disp, scratch, tile);
      for (auto& b : tile) all.push_back(std::move(b));
    }
  }
  return all;
}

bool statistics_consistent(const SegmentationState& state) {
  SegmentationState fresh = state;
  rebuild_statistics(fresh, false);
  return fresh.histograms == state.histograms && fresh.sizes == state.sizes &&
         fresh.sum_u == state.sum_u && fresh.sum_v == state.sum_v;
}

bool is_valid_partition(const SegmentationState& state) {
  const std::size_t n = static_cast<std::size_t>(state.width) * state.height;
  if (state.labels.size() != n) return false;
  const int count = state.segment_count();
  for (auto l : state.labels)
    if (l < 0 || l >= count) return false;
  if (!statistics_consistent(state)) return false;
  std::vector<std::int64_t> reached(count, 0);
  std::vector<std::uint8_t> seen(n, 0);
  std::vector<std::size_t> queue;
  for (std::size_t i = 0; i < n; ++i) {
    const auto l = state.labels[i];
    if (seen[i]) continue;
    if (reached[l] != 0) return false;  // second component of the same segment
    queue.assign(1, i);
    seen[i] = 1;
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      const std::size_t p = queue[qi];
      ++reached[l];
      const int x = static_cast<int>(p % state.width), y = static_cast<int>(p / state.width);
      for (int k = 0; k < 4; ++k) {
        const int nx = x + kDx4[k], ny = y + kDy4[k];
        if (nx < 0 || ny < 0 || nx >= state.width || ny >= state.height) continue;
        const std::size_t q = static_cast<std::size_t>(ny) * state.width + nx;
        if (!seen[q] && state.labels[q] == l) {
          seen[q] = 1;
          queue.push_back(q);
        }
      }
    }
  }
  for (int s = 0; s < count; ++s)
    if (state.sizes[s] == 0 || reached[s] != state.sizes[s]) return false;
  return true;
}

double energy_color(const SegmentationState& state) {
  double e = 0.0;
  for (const auto& h : state.histograms)
    for (auto c : h.bins) e += static_cast<double>(c) * c;
  return e;
}

double reg_pair_term(const Eigen::Vector2d& mu_i, const Eigen::Vector2d& mu_j,
                     const Eigen::Vector2d& b) {
  return (mu_i - mu_j).squaredNorm() - (mu_i - b).squaredNorm() - (mu_j - b).squaredNorm();
}

double depth_pair_term(double theta_i, double theta_j, double block_disp) {
  const double dij = theta_i - theta_j;
  const double di = theta_i - block_disp;
  const double dj = theta_j - block_disp;
  return dij * dij - di * di - dj * dj;
}

double energy_reg(const SegmentationState& state, int side) {
  double e = 0.0;
  for (const Block& b : enumerate_blocks(state, side)) {
    const Eigen::Vector2d mu_i = state.centroid(b.label);
    for (auto j : b.neighbours) e += reg_pair_term(mu_i, state.centroid(j), b.position);
  }
  return e;
}

double energy_depth(const SegmentationState& state, const DisparityMap& disp,
                    const PlaneMap& planes, int side) {
  double e = 0.0;
  for (const Block& b : enumerate_blocks(state, side, &disp)) {
    if (!b.mean_disparity) continue;
    const auto ti = plane_at(planes, b.label, b.position);
    if (!ti) continue;
    for (auto j : b.neighbours) {
      const auto tj = plane_at(planes, j, b.position);
      if (tj) e += depth_pair_term(*ti, *tj, *b.mean_disparity);
    }
  }
  return e;
}

double energy_total(const SegmentationState& state, const DisparityMap* disp,
                    const PlaneMap& planes, const EnergyWeights& w, int side) {
  double e = energy_color(state) + w.lambda_reg * energy_reg(state, side);
  if (disp && w.lambda_depth != 0.0) e += w.lambda_depth * energy_depth(state, *disp, planes, side);
  return e;
}

namespace {

// c1/c2 against a segment described by (histogram, size, centroid).
MoveScore score_against(const Block& block, const ColorHistogram& hist, std::int64_t hist_adjust_sign,
                        std::int64_t size, const Eigen::Vector2d& mu,
                        const std::optional<double>& theta, const EnergyWeights& w) {
  MoveScore s;
  if (size > 0) {
    const double scale = static_cast<double>(block.pixels.size()) / static_cast<double>(size);
    for (const auto& [bin, count] : block.bins) {
      const double h = static_cast<double>(hist.bins[bin] + hist_adjust_sign * count);
      s.c1 += std::min(h * scale, static_cast<double>(count));
    }
  }
  s.c2 = w.lambda_reg * (mu - block.position).squaredNorm();
  if (w.lambda_depth != 0.0 && theta && block.mean_disparity) {
    const double r = *theta - *block.mean_disparity;
    s.c2 += w.lambda_depth * r * r;
  }
  return s;
}

}  // namespace

MoveScore block_move_score(const SegmentationState& state, const Block& block,
                           std::int32_t candidate, const PlaneMap& planes,
                           const EnergyWeights& w) {
  if (candidate < 0 || candidate >= state.segment_count() || candidate == block.label)
    throw ContractError("block_move_score: invalid candidate segment");
  bool adjacent = false;
  for (auto p : block.pixels) {
    const int x = p % state.width, y = p / state.width;
    for (int k = 0; k < 4 && !adjacent; ++k) {
      const int nx = x + kDx4[k], ny = y + kDy4[k];
      adjacent = nx >= 0 && ny >= 0 && nx < state.width && ny < state.height &&
                 state.label(nx, ny) == candidate;
    }
    if (adjacent) break;
  }
  if (!adjacent) throw ContractError("block_move_score: candidate is not adjacent to block");
  return score_against(block, state.histograms[candidate], 0, state.sizes[candidate],
                       state.centroid(candidate), plane_at(planes, candidate, block.position), w);
}

MoveScore block_stay_score(const SegmentationState& state, const Block& block,
                           const PlaneMap& planes, const EnergyWeights& w) {
  const auto s = block.label;
  const auto n = static_cast<std::int64_t>(block.pixels.size());
  const std::int64_t rest = state.sizes[s] - n;
  Eigen::Vector2d mu = block.position;
  if (rest > 0) {
    const double bn = static_cast<double>(n);
    mu = {(state.sum_u[s] - block.position.x() * bn) / static_cast<double>(rest),
          (state.sum_v[s] - block.position.y() * bn) / static_cast<double>(rest)};
  }
  return score_against(block, state.histograms[s], -1, rest, mu, plane_at(planes, s, block.position),
                       w);
}

namespace {

class Refiner {
 public:
  Refiner(SegmentationState& st, const DisparityMap* disp, const PlaneMap& planes,
          const EnergyWeights& w)
      : st_(st), disp_(disp), planes_(planes), w_(w),
        excluded_(st.labels.size(), 0), visited_(st.labels.size(), 0),
        owner_(st.labels.size(), 0) {}

  // One sweep over all tiles; returns the number of accepted moves.
  std::int64_t pass(int side) {
    std::int64_t moves = 0;
    const int tiles_x = (st_.width + side - 1) / side;
    const int tiles_y = (st_.height + side - 1) / side;
    for (int ty = 0; ty < tiles_y; ++ty) {
      for (int tx = 0; tx < tiles_x; ++tx) {
        if (side == 1) {
          if (single_pixel_block(tx, ty)) moves += try_move(single_);
          continue;
        }
        if (uniform_tile(tx, ty, side)) continue;
        tile_blocks(st_, side, tx, ty, disp_, scratch_, blocks_, false);
        for (Block& b : blocks_) {
          if (b.label != st_.label(b.pixels[0] % st_.width, b.pixels[0] / st_.width)) continue;
          collect_neighbours(st_, b);
          moves += try_move(b);
        }
      }
    }
    return moves;
  }

 private:
  // Moves the block to its best neighbour if that strictly beats staying.
  int try_move(const Block& b) {
    if (b.neighbours.empty()) return 0;
    if (st_.sizes[b.label] <= static_cast<std::int64_t>(b.pixels.size())) return 0;
    double best = block_stay_score(st_, b, planes_, w_).value();
    std::int32_t target = -1;
    for (auto cand : b.neighbours) {
      const double v = score_against(b, st_.histograms[cand], 0, st_.sizes[cand], st_.centroid(cand),
                                     plane_at(planes_, cand, b.position), w_)
                           .value();
      if (v > best) {
        best = v;
        target = cand;
      }
    }
    if (target < 0 || !donor_stays_connected(b)) return 0;
    apply(b, target);
    return 1;
  }

  // Fills single_ for pixel (x, y); false when no 4-neighbour differs.
  bool single_pixel_block(int x, int y) {
    const auto l = st_.label(x, y);
    single_.neighbours.clear();
    for (int k = 0; k < 4; ++k) {
      const int nx = x + kDx4[k], ny = y + kDy4[k];
      if (nx < 0 || ny < 0 || nx >= st_.width || ny >= st_.height) continue;
      const auto n = st_.label(nx, ny);
      if (n != l && std::find(single_.neighbours.begin(), single_.neighbours.end(), n) ==
                        single_.neighbours.end())
        single_.neighbours.push_back(n);
    }
    if (single_.neighbours.empty()) return false;
    std::sort(single_.neighbours.begin(), single_.neighbours.end());
    const std::int32_t p = y * st_.width + x;
    single_.label = l;
    single_.pixels.assign(1, p);
    single_.bins.assign(1, {st_.pixel_bins[p], 1});
    single_.position = {static_cast<double>(x), static_cast<double>(y)};
    single_.mean_disparity.reset();
    if (disp_ && DisparityMap::is_valid(disp_->disp[p])) single_.mean_disparity = disp_->disp[p];
    return true;
  }

  // Tile and its one-pixel ring carry a single label: nothing can move.
  bool uniform_tile(int tx, int ty, int side) const {
    const int x0 = std::max(0, tx * side - 1), y0 = std::max(0, ty * side - 1);
    const int x1 = std::min(st_.width, (tx + 1) * side + 1);
    const int y1 = std::min(st_.height, (ty + 1) * side + 1);
    const auto l = st_.label(tx * side, ty * side);
    for (int y = y0; y < y1; ++y) {
      const std::int32_t* row = st_.labels.data() + static_cast<std::size_t>(y) * st_.width;
      for (int x = x0; x < x1; ++x)
        if (row[x] != l) return false;
    }
    return true;
  }

  bool in_segment(int x, int y, std::int32_t l) const {
    return x >= 0 && y >= 0 && x < st_.width && y < st_.height && st_.label(x, y) == l;
  }

  // Removing a single pixel keeps the segment connected if its same-label
  // 4-neighbours are linked through the surrounding 8-ring.
  bool locally_simple(int x, int y, std::int32_t l) const {
    static constexpr int rx[8] = {0, 1, 1, 1, 0, -1, -1, -1};
    static constexpr int ry[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
    bool in[8];
    for (int k = 0; k < 8; ++k) in[k] = in_segment(x + rx[k], y + ry[k], l);
    int arcs_with_edge_neighbour = 0;
    for (int k = 0; k < 8; ++k) {
      if (!in[k] || in[(k + 7) % 8]) continue;  // k starts an arc
      bool has4 = false;
      for (int j = k; in[j % 8] && j < k + 8; ++j) has4 |= (j % 2 == 0);
      arcs_with_edge_neighbour += has4;
    }
    if (arcs_with_edge_neighbour == 0) {
      // whole ring or nothing
      bool all = true;
      for (bool v : in) all &= v;
      return all;
    }
    return arcs_with_edge_neighbour == 1;
  }

  bool donor_stays_connected(const Block& b) {
    const auto l = b.label;
    if (b.pixels.size() == 1) {
      const int x = b.pixels[0] % st_.width, y = b.pixels[0] / st_.width;
      if (locally_simple(x, y, l)) return true;
    }
    ++stamp_;
    for (auto p : b.pixels) excluded_[p] = stamp_;
    if (locally_connected(b)) return true;
    return lockstep_connected(b);
  }

  // Exact test: grows one BFS per donor pixel touching the block, one pixel
  // per front in turn. Fronts that meet are joined; the donor splits as soon
  // as a joined group runs out of pixels while another group remains.
  // Expects touching_ from locally_connected.
  bool lockstep_connected(const Block& b) {
    const auto l = b.label;
    const int m = static_cast<int>(touching_.size());
    if (m == 0) return false;
    ++stamp_;
    for (auto p : b.pixels) excluded_[p] = stamp_;
    if (static_cast<int>(fronts_.size()) < m) fronts_.resize(m);
    parent_.resize(m);
    heads_.assign(m, 0);
    int groups = m;
    const auto find = [&](int i) {
      while (parent_[i] != i) i = parent_[i] = parent_[parent_[i]];
      return i;
    };
    const auto join = [&](int a, int c) {
      a = find(a);
      c = find(c);
      if (a == c) return;
      parent_[a] = c;
      --groups;
    };
    for (int i = 0; i < m; ++i) {
      parent_[i] = i;
      fronts_[i].clear();
      const auto t = touching_[i];
      if (visited_[t] == stamp_) {
        join(i, owner_[t]);
      } else {
        visited_[t] = stamp_;
        owner_[t] = i;
        fronts_[i].push_back(t);
      }
    }
    active_.resize(m);
    while (groups > 1) {
      for (int i = 0; i < m; ++i) {
        if (heads_[i] >= fronts_[i].size()) continue;
        const auto p = fronts_[i][heads_[i]++];
        const int x = p % st_.width, y = p / st_.width;
        for (int k = 0; k < 4; ++k) {
          const int nx = x + kDx4[k], ny = y + kDy4[k];
          if (!in_segment(nx, ny, l)) continue;
          const std::int32_t q = ny * st_.width + nx;
          if (excluded_[q] == stamp_) continue;
          if (visited_[q] != stamp_) {
            visited_[q] = stamp_;
            owner_[q] = i;
            fronts_[i].push_back(q);
          } else {
            join(i, owner_[q]);
            if (groups == 1) return true;
          }
        }
      }
      std::fill(active_.begin(), active_.end(), 0);
      for (int i = 0; i < m; ++i)
        if (heads_[i] < fronts_[i].size()) active_[find(i)] = 1;
      for (int i = 0; i < m; ++i)
        if (find(i) == i && !active_[i]) return false;
    }
    return true;
  }

  // Sufficient test: every donor pixel touching the block is reachable from
  // the others inside the block's bounding box grown by one pixel. Paths of
  // the segment that crossed the block can then be rerouted locally.
  // Expects the block pixels marked in excluded_ with the current stamp.
  bool locally_connected(const Block& b) {
    const auto l = b.label;
    int x0 = st_.width, y0 = st_.height, x1 = -1, y1 = -1;
    for (auto p : b.pixels) {
      const int x = p % st_.width, y = p / st_.width;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
    x0 = std::max(0, x0 - 1);
    y0 = std::max(0, y0 - 1);
    x1 = std::min(st_.width - 1, x1 + 1);
    y1 = std::min(st_.height - 1, y1 + 1);
    // donor pixels adjacent to the block
    touching_.clear();
    for (auto p : b.pixels) {
      const int x = p % st_.width, y = p / st_.width;
      for (int k = 0; k < 4; ++k) {
        const int nx = x + kDx4[k], ny = y + kDy4[k];
        if (!in_segment(nx, ny, l)) continue;
        const std::int32_t q = ny * st_.width + nx;
        if (excluded_[q] != stamp_) touching_.push_back(q);
      }
    }
    if (touching_.empty()) return false;
    const std::int32_t local_stamp = ++stamp_;
    // re-mark the block under the new stamp so both marks stay distinct
    for (auto p : b.pixels) excluded_[p] = local_stamp;
    queue_.assign(1, touching_[0]);
    visited_[touching_[0]] = local_stamp;
    for (std::size_t qi = 0; qi < queue_.size(); ++qi) {
      const auto p = queue_[qi];
      const int x = p % st_.width, y = p / st_.width;
      for (int k = 0; k < 4; ++k) {
        const int nx = x + kDx4[k], ny = y + kDy4[k];
        if (nx < x0 || ny < y0 || nx > x1 || ny > y1 || !in_segment(nx, ny, l)) continue;
        const std::int32_t q = ny * st_.width + nx;
        if (excluded_[q] == local_stamp || visited_[q] == local_stamp) continue;
        visited_[q] = local_stamp;
        queue_.push_back(q);
      }
    }
    for (auto q : touching_)
      if (visited_[q] != local_stamp) return false;
    return true;
  }

  void apply(const Block& b, std::int32_t target) {
    const auto from = b.label;
    for (auto p : b.pixels) {
      st_.labels[p] = target;
      const int bin = st_.pixel_bins[p];
      st_.histograms[from].remove(bin);
      st_.histograms[target].add(bin);
      const double x = p % st_.width, y = p / st_.width;
      st_.sum_u[from] -= x;
      st_.sum_v[from] -= y;
      st_.sum_u[target] += x;
      st_.sum_v[target] += y;
    }
    const auto n = static_cast<std::int64_t>(b.pixels.size());
    st_.sizes[from] -= n;
    st_.sizes[target] += n;
  }

  SegmentationState& st_;
  const DisparityMap* disp_;
  const PlaneMap& planes_;
  EnergyWeights w_;
  TileScratch scratch_;
  std::vector<Block> blocks_;
  Block single_;
  std::vector<std::int32_t> excluded_;
  std::vector<std::int32_t> visited_;
  std::vector<std::int32_t> queue_;
  std::vector<std::int32_t> touching_;
  std::vector<std::int32_t> owner_;
  std::vector<std::vector<std::int32_t>> fronts_;
  std::vector<std::size_t> heads_;
  std::vector<int> parent_;
  std::vector<std::uint8_t> active_;
  std::int32_t stamp_ = 0;
};

}  // namespace

SegmentationState refine(SegmentationState state, const DisparityMap* disp,
                         const PlaneMap& planes, const EnergyWeights& w,
                         const RefineParams& params, RefineStats* stats) {
  if (disp && (disp->width != state.width || disp->height != state.height))
    throw ParameterError("refine: disparity map size does not match segmentation");
  RefineStats local;
  RefineStats& out = stats ? *stats : local;
  out = RefineStats{};

  const auto t0 = std::chrono::steady_clock::now();
  const auto expired = [&] {
    if (params.max_seconds <= 0.0) return false;
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    return dt.count() > params.max_seconds;
  };

  Refiner refiner(state, disp, planes, w);
  const std::vector<int> sides = level_schedule(state.base_side, state.levels);
  for (std::size_t li = 0; li < sides.size() && !out.timed_out; ++li) {
    state.level = static_cast<int>(li) + 1;
    for (int p = 0; p < params.max_passes; ++p) {
      const std::int64_t moved = refiner.pass(sides[li]);
      out.moves += moved;
      ++out.passes;
      if (params.track_energy)
        out.energy_per_pass.push_back(energy_total(state, disp, planes, w, sides[li]));
      if (moved == 0) break;
      if (expired()) {
        out.timed_out = true;
        break;
      }
    }
  }
  out.absorbed_segments = absorb_enclosed(state);
  return state;
}

int absorb_enclosed(SegmentationState& state) {
  const int w = state.width, h = state.height;
  const int count = state.segment_count();
  std::vector<int> x0(count, w), y0(count, h), x1(count, -1), y1(count, -1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto l = state.label(x, y);
      x0[l] = std::min(x0[l], x);
      y0[l] = std::min(y0[l], y);
      x1[l] = std::max(x1[l], x);
      y1[l] = std::max(y1[l], y);
    }
  }

  int absorbed = 0;
  std::vector<std::uint8_t> reach;
  std::vector<int> queue;
  for (std::int32_t s = 0; s < count; ++s) {
    if (x1[s] < 0) continue;
    // local box with a one-pixel margin; margin cells count as outside
    const int bx = x0[s] - 1, by = y0[s] - 1;
    const int bw = x1[s] - x0[s] + 3, bh = y1[s] - y0[s] + 3;
    const auto is_s = [&](int lx, int ly) {
      const int x = bx + lx, y = by + ly;
      return x >= 0 && y >= 0 && x < w && y < h && state.label(x, y) == s;
    };
    reach.assign(static_cast<std::size_t>(bw) * bh, 0);
    queue.clear();
    for (int lx = 0; lx < bw; ++lx) {
      for (int ly : {0, bh - 1}) {
        if (!reach[ly * bw + lx]) {
          reach[ly * bw + lx] = 1;
          queue.push_back(ly * bw + lx);
        }
      }
    }
    for (int ly = 0; ly < bh; ++ly) {
      for (int lx : {0, bw - 1}) {
        if (!reach[ly * bw + lx]) {
          reach[ly * bw + lx] = 1;
          queue.push_back(ly * bw + lx);
        }
      }
    }
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      const int cx = queue[qi] % bw, cy = queue[qi] / bw;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = cx + dx, ny = cy + dy;
          if (nx < 0 || ny < 0 || nx >= bw || ny >= bh) continue;
          const int ni = ny * bw + nx;
          if (reach[ni] || is_s(nx, ny)) continue;
          reach[ni] = 1;
          queue.push_back(ni);
        }
      }
    }
    for (int ly = 1; ly < bh - 1; ++ly) {
      for (int lx = 1; lx < bw - 1; ++lx) {
        if (reach[ly * bw + lx] || is_s(lx, ly)) continue;
        const std::size_t p = static_cast<std::size_t>(by + ly) * w + bx + lx;
        const auto victim = state.labels[p];
        if (x1[victim] >= 0 && victim != s) {
          x1[victim] = -1;  // whole segment lies in the hole
          ++absorbed;
        }
        state.labels[p] = s;
      }
    }
  }
  if (absorbed > 0) rebuild_statistics(state, true);
  return absorbed;
}

std::vector<Rgb> mean_colors(const SegmentationState& state, const ColorImage& img) {
  const int count = state.segment_count();
  std::vector<std::array<std::int64_t, 3>> sums(count, {0, 0, 0});
  for (std::size_t i = 0; i < state.labels.size(); ++i)
    for (int c = 0; c < 3; ++c) sums[state.labels[i]][c] += img.data[i][c];
  std::vector<Rgb> out(count);
  for (int s = 0; s < count; ++s)
    for (int c = 0; c < 3; ++c)
      out[s][c] = static_cast<std::uint8_t>((sums[s][c] + state.sizes[s] / 2) / state.sizes[s]);
  return out;
}

}  // namespace planecell::superpixel
