#include "planecell/plane_fit.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "planecell/error.hpp"
#include "planecell/parallel.hpp"

namespace planecell::planefit {

std::optional<PlaneFn2D> plane_through(const PixelSample& p0, const PixelSample& p1,
                                       const PixelSample& p2) {
  const double area = (p1.u - p0.u) * (p2.v - p0.v) - (p2.u - p0.u) * (p1.v - p0.v);
  if (std::abs(area) < 1e-9) return std::nullopt;
  Eigen::Matrix3d m;
  m << p0.u, p0.v, 1.0, p1.u, p1.v, 1.0, p2.u, p2.v, 1.0;
  const Eigen::Vector3d x = m.partialPivLu().solve(Eigen::Vector3d(p0.d, p1.d, p2.d));
  if (!x.allFinite()) return std::nullopt;
  return PlaneFn2D{x[0], x[1], x[2]};
}

std::optional<PlaneFn2D> least_squares_plane(std::span<const PixelSample> samples,
                                             std::span<const std::uint8_t> mask) {
  const bool all = mask.empty();
  std::size_t n = 0;
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!all && !mask[i]) continue;
    mu += samples[i].u;
    mv += samples[i].v;
    ++n;
  }
  if (n < 3) return std::nullopt;
  mu /= static_cast<double>(n);
  mv /= static_cast<double>(n);

  Eigen::MatrixXd a(n, 3);
  Eigen::VectorXd rhs(n);
  std::size_t r = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!all && !mask[i]) continue;
    a(r, 0) = samples[i].u - mu;
    a(r, 1) = samples[i].v - mv;
    a(r, 2) = 1.0;
    rhs[r] = samples[i].d;
    ++r;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < 3) return std::nullopt;
  const Eigen::Vector3d x = qr.solve(rhs);
  if (!x.allFinite()) return std::nullopt;
  return PlaneFn2D{x[0], x[1], x[2] - x[0] * mu - x[1] * mv};
}

double sum_squared_residuals(std::span<const PixelSample> samples,
                             std::span<const std::uint8_t> mask, const PlaneFn2D& plane) {
  double s = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double r = plane(samples[i].u, samples[i].v) - samples[i].d;
    s += r * r;
  }
  return s;
}

namespace {

std::size_t mark_inliers(std::span<const PixelSample> pixels, const PlaneFn2D& plane,
                         double thresh, std::vector<std::uint8_t>& mask) {
  mask.resize(pixels.size());
  std::size_t n = 0;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double r = std::abs(plane(pixels[i].u, pixels[i].v) - pixels[i].d);
    mask[i] = r <= thresh ? 1 : 0;
    n += mask[i];
  }
  return n;
}

}  // namespace

FitReport fit_segment(std::span<const PixelSample> pixels, const FitParams& params) {
  if (!(params.inlier_thresh > 0.0)) throw ParameterError("inlier_thresh must be > 0");
  if (!(params.target_ratio > 0.0) || params.target_ratio > 1.0)
    throw ParameterError("target_ratio must be in (0, 1]");
  if (params.max_iters < 1) throw ParameterError("max_iters must be >= 1");

  FitReport report;
  const std::size_t n = pixels.size();
  if (n < 3) return report;

  std::mt19937_64 rng(params.seed);
  std::optional<PlaneFn2D> best;
  std::size_t best_count = 0;
  std::vector<std::uint8_t> mask, best_mask;
  int it = 0;
  while (it < params.max_iters) {
    ++it;
    const std::size_t i0 = rng() % n;
    std::size_t i1 = rng() % (n - 1);
    if (i1 >= i0) ++i1;
    std::size_t i2 = rng() % (n - 2);
    if (i2 >= std::min(i0, i1)) ++i2;
    if (i2 >= std::max(i0, i1)) ++i2;
    const auto candidate = plane_through(pixels[i0], pixels[i1], pixels[i2]);
    if (!candidate) continue;
    const std::size_t count = mark_inliers(pixels, *candidate, params.inlier_thresh, mask);
    if (count > best_count) {
      best_count = count;
      best = candidate;
      best_mask.swap(mask);
      if (static_cast<double>(best_count) >= params.target_ratio * static_cast<double>(n)) break;
    }
  }
  report.iterations_used = it;
  if (!best || static_cast<double>(best_count) < params.min_ratio * static_cast<double>(n))
    return report;

  // Refit on the inliers; repeat while the inlier set keeps changing.
  PlaneFn2D plane = *best;
  std::vector<std::uint8_t> next;
  for (int round = 0; round < std::max(params.refit_rounds, 1); ++round) {
    const auto refit = least_squares_plane(pixels, best_mask);
    if (!refit) break;
    plane = *refit;
    const std::size_t count = mark_inliers(pixels, plane, params.inlier_thresh, next);
    if (next == best_mask || count < 3 || !least_squares_plane(pixels, next)) break;
    if (round + 1 < std::max(params.refit_rounds, 1)) {
      best_mask.swap(next);
      best_count = count;
    }
  }
  best_count = 0;
  for (auto m : best_mask) best_count += m;

  report.plane = plane;
  report.inlier_mask = std::move(best_mask);
  report.inlier_ratio = static_cast<double>(best_count) / static_cast<double>(n);
  return report;
}

std::vector<std::uint8_t> relabel_outliers(std::span<const PixelSample> pixels,
                                           const PlaneFn2D& plane, double thresh) {
  std::vector<std::uint8_t> out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double d = pixels[i].d;
    out[i] = std::isnan(d) || std::abs(plane(pixels[i].u, pixels[i].v) - d) > thresh ? 1 : 0;
  }
  return out;
}

std::uint64_t segment_seed(std::uint64_t seed, std::int32_t segment) {
  // splitmix64 finaliser over (seed, id)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(segment) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::vector<PixelSample>> segment_samples(const superpixel::SegmentationState& state,
                                                      const DisparityMap& disp) {
  if (disp.width != state.width || disp.height != state.height)
    throw ParameterError("disparity map size does not match segmentation");
  std::vector<std::vector<PixelSample>> out(state.segment_count());
  for (int y = 0; y < state.height; ++y) {
    for (int x = 0; x < state.width; ++x) {
      const float d = disp.at(x, y);
      if (!DisparityMap::is_valid(d)) continue;
      out[state.label(x, y)].push_back({static_cast<double>(x), static_cast<double>(y), d});
    }
  }
  return out;
}

FitAllResult fit_all(const superpixel::SegmentationState& state, const DisparityMap& disp,
                     const FitParams& params) {
  const auto samples = segment_samples(state, disp);
  FitAllResult out;
  out.reports.resize(samples.size());
  parallel_for(samples.size(), params.workers, [&](std::size_t s) {
    FitParams p = params;
    p.seed = segment_seed(params.seed, static_cast<std::int32_t>(s));
    out.reports[s] = fit_segment(samples[s], p);
  });
  out.planes.resize(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (out.reports[s].failed())
      out.failed.push_back(static_cast<std::int32_t>(s));
    else
      out.planes[s] = out.reports[s].plane;
  }
  return out;
}

}  // namespace planecell::planefit
