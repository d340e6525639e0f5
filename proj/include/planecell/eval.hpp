#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "planecell/geometry.hpp"
#include "planecell/image.hpp"
#include "planecell/io_formats.hpp"
#include "planecell/projection.hpp"

namespace planecell::eval {

/// Raised when prediction and ground truth share no valid pixel.
class EmptyCurveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<double> kDepthThresholds{0.1, 0.2, 0.5, 1.0};  // metres
inline const std::vector<double> kDisparityThresholds{0.5, 1.0, 2.0, 3.0};  // pixels

struct AccuracyCurve {
  std::vector<double> thresholds;
  std::vector<double> fractions;  // of evaluated pixels with error < threshold
  double density = 0.0;           // evaluated / valid ground-truth pixels
  std::size_t evaluated = 0;
  std::size_t gt_valid = 0;

  /// Fractions relative to all valid ground-truth pixels; never above density.
  std::vector<double> truncated() const;
};

/// Disparity predicted by each pixel's segment plane; pixels of segments
/// without a plane, or with non-positive prediction, are invalid.
DisparityMap render_disparity(int width, int height, std::span<const std::int32_t> labels,
                              const PlaneMap& planes);

/// Euclidean distance between the lifted predicted and ground-truth points.
AccuracyCurve depth_error_curve(const DisparityMap& pred, const DisparityMap& gt,
                                const projection::CameraRig& rig,
                                std::span<const double> thresholds = kDepthThresholds);

/// |pred - gt| in pixels.
AccuracyCurve disparity_error_curve(const DisparityMap& pred, const DisparityMap& gt,
                                    std::span<const double> thresholds = kDisparityThresholds);

/// Bytes of a dense cloud holding float32 xyz and uint8 rgb per point.
inline std::size_t dense_cloud_bytes(std::size_t points) { return points * 15; }

struct SizeReport {
  std::size_t map_bytes = 0;
  std::size_t dense_bytes = 0;
  std::optional<double> ratio;  // map / dense; empty when undefined
  std::size_t cells = 0;
  std::uint32_t frames = 0;
  double bytes_per_frame = 0.0;
  double cells_per_frame = 0.0;
  double vertices_per_cell = 0.0;
};

SizeReport size_report(const io::PlanecellMap& map, std::size_t map_bytes, std::size_t dense_bytes);

std::string format_report(const SizeReport& r);
/// One line: "<label> density=.. <t1>=..% <t2>=..% ...".
std::string format_curve_row(const std::string& label, const AccuracyCurve& c);
/// Columns threshold,fraction,fraction_of_gt.
void write_curve_csv(const AccuracyCurve& c, const std::filesystem::path& path);

}  // namespace planecell::eval
