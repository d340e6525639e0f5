#include "planecell/stereo_sgm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "planecell/error.hpp"
#include "planecell/parallel.hpp"

namespace planecell::sgm {

CostVolume::CostVolume(int w, int h, int d, float fill)
    : width(w), height(h), d_max(d), costs(static_cast<std::size_t>(w) * h * d, fill) {}

CensusMap census_transform(const GrayImage& img, int window) {
  if (window < 3 || window % 2 == 0)
    throw ParameterError("census window must be odd and >= 3, got " + std::to_string(window));
  if (window > std::min(img.width, img.height))
    throw ParameterError("census window " + std::to_string(window) + " exceeds image size");

  CensusMap out;
  out.width = img.width;
  out.height = img.height;
  out.window = window;
  out.words = (out.bits() + 63) / 64;
  out.codes.assign(static_cast<std::size_t>(img.width) * img.height * out.words, 0);
  out.defined.assign(static_cast<std::size_t>(img.width) * img.height, 0);

  const int r = window / 2;
  for (int y = r; y < img.height - r; ++y) {
    for (int x = r; x < img.width - r; ++x) {
      const std::size_t pix = static_cast<std::size_t>(y) * img.width + x;
      std::uint64_t* code = out.codes.data() + pix * out.words;
      const std::uint8_t centre = img.at(x, y);
      int k = 0;
      for (int wy = -r; wy <= r; ++wy) {
        for (int wx = -r; wx <= r; ++wx) {
          if (wx == 0 && wy == 0) continue;
          if (img.at(x + wx, y + wy) < centre) code[k / 64] |= std::uint64_t{1} << (k % 64);
          ++k;
        }
      }
      out.defined[pix] = 1;
    }
  }
  return out;
}

std::vector<float> horizontal_gradient(const GrayImage& img) {
  std::vector<float> g(static_cast<std::size_t>(img.width) * img.height, 0.0f);
  if (img.width < 2) return g;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int xl = std::max(x - 1, 0);
      const int xr = std::min(x + 1, img.width - 1);
      g[static_cast<std::size_t>(y) * img.width + x] =
          static_cast<float>(int{img.at(xr, y)} - int{img.at(xl, y)}) /
          static_cast<float>(xr - xl);
    }
  }
  return g;
}

std::uint32_t hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  std::uint32_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += std::popcount(a[i] ^ b[i]);
  return n;
}

CostVolume matching_cost(const GrayImage& left, const GrayImage& right, int d_max, int window,
                         double lambda_grad) {
  if (left.width != right.width || left.height != right.height)
    throw ParameterError("stereo images differ in size");
  if (d_max < 1) throw ParameterError("d_max must be >= 1");

  const CensusMap cl = census_transform(left, window);
  const CensusMap cr = census_transform(right, window);
  const std::vector<float> gl = horizontal_gradient(left);
  const std::vector<float> gr = horizontal_gradient(right);
  const float lambda = static_cast<float>(lambda_grad);

  CostVolume vol(left.width, left.height, d_max, CostVolume::kUnavailable);
  for (int y = 0; y < left.height; ++y) {
    for (int x = 0; x < left.width; ++x) {
      if (!cl.is_defined(x, y)) continue;
      const float gp = gl[static_cast<std::size_t>(y) * left.width + x];
      for (int d = 0; d < d_max; ++d) {
        const int qx = x - d;
        if (qx < 0 || !cr.is_defined(qx, y)) continue;
        const float gq = gr[static_cast<std::size_t>(y) * left.width + qx];
        vol.at(x, y, d) =
            static_cast<float>(hamming(cl.code(x, y), cr.code(qx, y))) + lambda * std::abs(gp - gq);
      }
    }
  }
  return vol;
}

namespace {

// Pixels whose predecessor along `dir` lies outside the image.
std::vector<std::pair<int, int>> scanline_starts(int w, int h, Direction dir) {
  std::vector<std::pair<int, int>> starts;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int px = x - dir.dx;
      const int py = y - dir.dy;
      if (px < 0 || py < 0 || px >= w || py >= h) starts.emplace_back(x, y);
    }
  }
  return starts;
}

}  // namespace

CostVolume aggregate_paths(const CostVolume& vol, double p1, double p2,
                           std::span<const Direction> directions, int workers) {
  if (directions.empty()) throw ParameterError("aggregate_paths: empty direction set");
  if (!(p1 > 0.0) || p2 < p1) throw ParameterError("aggregate_paths: need p2 >= p1 > 0");
  for (const auto& dir : directions) {
    if ((dir.dx == 0 && dir.dy == 0) || std::abs(dir.dx) > 1 || std::abs(dir.dy) > 1)
      throw ParameterError("aggregate_paths: not a scanline direction");
  }

  const int w = vol.width;
  const int h = vol.height;
  const int nd = vol.d_max;
  const float pen1 = static_cast<float>(p1);
  const float pen2 = static_cast<float>(p2);
  constexpr float kInf = CostVolume::kUnavailable;

  CostVolume out(w, h, nd, 0.0f);
  for (const Direction dir : directions) {
    const auto starts = scanline_starts(w, h, dir);
    parallel_for(starts.size(), workers, [&](std::size_t s) {
      std::vector<float> prev(nd, kInf);
      std::vector<float> cur(nd);
      bool has_prev = false;
      float prev_min = kInf;
      for (int x = starts[s].first, y = starts[s].second; x >= 0 && y >= 0 && x < w && y < h;
           x += dir.dx, y += dir.dy) {
        const float* c = &vol.costs[vol.index(x, y, 0)];
        float cur_min = kInf;
        for (int d = 0; d < nd; ++d) {
          float l = c[d];
          if (l != kInf && has_prev) {
            float best = std::min(prev[d], prev_min + pen2);
            if (d > 0) best = std::min(best, prev[d - 1] + pen1);
            if (d + 1 < nd) best = std::min(best, prev[d + 1] + pen1);
            l = l + best - prev_min;
          }
          cur[d] = l;
          cur_min = std::min(cur_min, l);
        }
        float* o = &out.costs[out.index(x, y, 0)];
        for (int d = 0; d < nd; ++d) o[d] += cur[d];
        std::swap(prev, cur);
        prev_min = cur_min;
        has_prev = prev_min != kInf;
      }
    });
  }
  return out;
}

DisparityMap select_disparity(const CostVolume& agg) {
  DisparityMap out(agg.width, agg.height);
  for (int y = 0; y < agg.height; ++y) {
    for (int x = 0; x < agg.width; ++x) {
      float best = CostVolume::kUnavailable;
      int arg = -1;
      for (int d = 0; d < agg.d_max; ++d) {
        const float c = agg.at(x, y, d);
        if (c < best) {
          best = c;
          arg = d;
        }
      }
      if (arg >= 0) out.at(x, y) = static_cast<float>(arg);
    }
  }
  return out;
}

DisparityMap lr_consistency(const DisparityMap& disp_left, const DisparityMap& disp_right,
                            double tol) {
  if (disp_left.width != disp_right.width || disp_left.height != disp_right.height)
    throw ParameterError("lr_consistency: maps differ in size");
  DisparityMap out(disp_left.width, disp_left.height);
  for (int y = 0; y < disp_left.height; ++y) {
    for (int x = 0; x < disp_left.width; ++x) {
      const float dl = disp_left.at(x, y);
      if (!DisparityMap::is_valid(dl)) continue;
      const int xr = static_cast<int>(std::lround(x - dl));
      if (xr < 0 || xr >= disp_left.width) continue;
      const float dr = disp_right.at(xr, y);
      if (!DisparityMap::is_valid(dr)) continue;
      if (std::abs(double{dl} - double{dr}) <= tol) out.at(x, y) = dl;
    }
  }
  return out;
}

namespace {

std::span<const Direction> direction_set(int n) {
  if (n == 8) return kEightDirections;
  if (n == 4) return kFourDirections;
  throw ParameterError("SGM direction count must be 4 or 8");
}

}  // namespace

DisparityMap compute_right_disparity(const GrayImage& left, const GrayImage& right,
                                     const SgmParams& params) {
  const CostVolume vol = matching_cost(flip_horizontal(right), flip_horizontal(left),
                                       params.d_max, params.window, params.lambda_grad);
  const CostVolume agg = aggregate_paths(vol, params.p1, params.p2,
                                         direction_set(params.directions), params.workers);
  return flip_horizontal(select_disparity(agg));
}

DisparityMap compute_disparity(const GrayImage& left, const GrayImage& right,
                               const SgmParams& params) {
  DisparityMap disp_left;
  {
    const CostVolume vol =
        matching_cost(left, right, params.d_max, params.window, params.lambda_grad);
    const CostVolume agg = aggregate_paths(vol, params.p1, params.p2,
                                           direction_set(params.directions), params.workers);
    disp_left = select_disparity(agg);
  }
  const DisparityMap disp_right = compute_right_disparity(left, right, params);
  return lr_consistency(disp_left, disp_right, params.lr_tolerance);
}

}  // namespace planecell::sgm
