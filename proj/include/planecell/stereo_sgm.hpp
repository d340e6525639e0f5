#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "planecell/image.hpp"

namespace planecell::sgm {

/// Census descriptors. Bit k of a code is set iff the k-th window neighbour
/// (row-major, centre skipped) is strictly darker than the centre. Pixels
/// closer than window/2 to the border have no descriptor.
struct CensusMap {
  int width = 0;
  int height = 0;
  int window = 0;
  int words = 0;  // 64-bit words per code
  std::vector<std::uint64_t> codes;
  std::vector<std::uint8_t> defined;

  int bits() const { return window * window - 1; }
  bool is_defined(int x, int y) const {
    return defined[static_cast<std::size_t>(y) * width + x] != 0;
  }
  std::span<const std::uint64_t> code(int x, int y) const {
    return {codes.data() + (static_cast<std::size_t>(y) * width + x) * words,
            static_cast<std::size_t>(words)};
  }
  bool bit(int x, int y, int k) const { return (code(x, y)[k / 64] >> (k % 64)) & 1U; }
};

/// Dense (x, y, d) cost volume laid out as ((y * width + x) * d_max + d).
/// Entries whose match leaves the image hold kUnavailable.
struct CostVolume {
  static constexpr float kUnavailable = std::numeric_limits<float>::infinity();

  int width = 0;
  int height = 0;
  int d_max = 0;
  std::vector<float> costs;

  CostVolume() = default;
  CostVolume(int w, int h, int d, float fill = 0.0f);

  static bool available(float c) { return c != kUnavailable; }

  std::size_t index(int x, int y, int d) const {
    return (static_cast<std::size_t>(y) * width + x) * d_max + d;
  }
  float at(int x, int y, int d) const { return costs[index(x, y, d)]; }
  float& at(int x, int y, int d) { return costs[index(x, y, d)]; }
};

struct Direction {
  int dx = 0;
  int dy = 0;
};

/// The eight scanline directions in the fixed summation order.
inline constexpr Direction kEightDirections[] = {
    {1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
inline constexpr Direction kFourDirections[] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};

struct SgmParams {
  int window = 5;
  int d_max = 128;
  double lambda_grad = 0.5;
  double p1 = 10.0;
  double p2 = 120.0;
  int directions = 8;  // 4 or 8
  double lr_tolerance = 1.0;
  int workers = 1;
};

CensusMap census_transform(const GrayImage& img, int window);

/// Horizontal central-difference gradient (one-sided at the left/right edge).
std::vector<float> horizontal_gradient(const GrayImage& img);

std::uint32_t hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

/// cost(p, d) = Hamming(T_L(p), T_R(p.x - d, p.y)) + lambda_grad * |G_L(p) - G_R(q)|.
CostVolume matching_cost(const GrayImage& left, const GrayImage& right, int d_max, int window,
                         double lambda_grad);

/// Sum of the SGM path costs L_r over the given directions. Directions are
/// summed in the order given, independently of `workers`.
CostVolume aggregate_paths(const CostVolume& vol, double p1, double p2,
                           std::span<const Direction> directions, int workers = 1);

/// Per-pixel argmin, ties toward the smaller disparity; all-unavailable
/// pixels are invalid.
DisparityMap select_disparity(const CostVolume& agg);

/// Keeps a left disparity iff |d_L(u, v) - d_R(u - d_L, v)| <= tol.
DisparityMap lr_consistency(const DisparityMap& disp_left, const DisparityMap& disp_right,
                            double tol);

/// Disparity of the right view, computed by mirroring both images and
/// matching with the roles swapped.
DisparityMap compute_right_disparity(const GrayImage& left, const GrayImage& right,
                                     const SgmParams& params);

/// Full matcher: cost, aggregation, winner-take-all and left-right check.
DisparityMap compute_disparity(const GrayImage& left, const GrayImage& right,
                               const SgmParams& params);

}  // namespace planecell::sgm
