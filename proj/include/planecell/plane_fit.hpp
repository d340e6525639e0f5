#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "planecell/geometry.hpp"
#include "planecell/image.hpp"
#include "planecell/superpixel.hpp"

namespace planecell::planefit {

inline constexpr std::uint64_t kDefaultSeed = 0x5eed'c0ffee'1234ULL;

struct PixelSample {
  double u = 0.0;
  double v = 0.0;
  double d = 0.0;
};

struct FitParams {
  int max_iters = 50;
  double inlier_thresh = 1.0;  // pixels
  double target_ratio = 0.8;
  double min_ratio = 0.3;  // below this after max_iters the segment fails
  int refit_rounds = 3;
  std::uint64_t seed = kDefaultSeed;
  int workers = 1;
};

struct FitReport {
  std::optional<PlaneFn2D> plane;     // empty = FAILED
  std::vector<std::uint8_t> inlier_mask;  // per input sample; empty when failed
  double inlier_ratio = 0.0;
  int iterations_used = 0;

  bool failed() const { return !plane.has_value(); }
};

/// Exact plane through three samples; empty if they are collinear in (u, v).
std::optional<PlaneFn2D> plane_through(const PixelSample& p0, const PixelSample& p1,
                                       const PixelSample& p2);

/// Least-squares plane over the masked samples (all when mask is empty);
/// empty if fewer than three samples or they are collinear.
std::optional<PlaneFn2D> least_squares_plane(std::span<const PixelSample> samples,
                                             std::span<const std::uint8_t> mask = {});

double sum_squared_residuals(std::span<const PixelSample> samples,
                             std::span<const std::uint8_t> mask, const PlaneFn2D& plane);

/// Random three-point sampling with early exit at target_ratio, followed by
/// least-squares refits on the inlier set until it stops changing.
FitReport fit_segment(std::span<const PixelSample> pixels, const FitParams& params);

/// True where |plane(p) - d(p)| > thresh or d is invalid (NaN).
std::vector<std::uint8_t> relabel_outliers(std::span<const PixelSample> pixels,
                                           const PlaneFn2D& plane, double thresh);

/// Per-segment RNG seed, independent of evaluation order.
std::uint64_t segment_seed(std::uint64_t seed, std::int32_t segment);

/// Valid-disparity samples of every segment, in raster order.
std::vector<std::vector<PixelSample>> segment_samples(const superpixel::SegmentationState& state,
                                                      const DisparityMap& disp);

struct FitAllResult {
  PlaneMap planes;
  std::vector<std::int32_t> failed;  // ascending
  std::vector<FitReport> reports;
};

FitAllResult fit_all(const superpixel::SegmentationState& state, const DisparityMap& disp,
                     const FitParams& params);

}  // namespace planecell::planefit
