#include "planecell/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "planecell/error.hpp"

namespace planecell::eval {

std::vector<double> AccuracyCurve::truncated() const {
  std::vector<double> out(fractions.size());
  for (std::size_t k = 0; k < fractions.size(); ++k) out[k] = fractions[k] * density;
  return out;
}

DisparityMap render_disparity(int width, int height, std::span<const std::int32_t> labels,
                              const PlaneMap& planes) {
  if (labels.size() != static_cast<std::size_t>(width) * height)
    throw ParameterError("render_disparity: label map size mismatch");
  DisparityMap out(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto l = labels[static_cast<std::size_t>(y) * width + x];
      if (l < 0 || static_cast<std::size_t>(l) >= planes.size() || !planes[l]) continue;
      const double d = (*planes[l])(x, y);
      if (d > 0.0) out.at(x, y) = static_cast<float>(d);
    }
  return out;
}

namespace {

void check_thresholds(std::span<const double> t) {
  if (t.empty()) throw ParameterError("no thresholds");
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (!(t[k] > 0.0)) throw ParameterError("thresholds must be positive");
    if (k > 0 && !(t[k] > t[k - 1])) throw ParameterError("thresholds must be ascending");
  }
}

template <class ErrorFn>
AccuracyCurve accumulate(const DisparityMap& pred, const DisparityMap& gt,
                         std::span<const double> thresholds, ErrorFn error) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw ParameterError("prediction and ground truth differ in size");
  check_thresholds(thresholds);
  AccuracyCurve c;
  c.thresholds.assign(thresholds.begin(), thresholds.end());
  std::vector<std::size_t> below(thresholds.size(), 0);
  for (int y = 0; y < gt.height; ++y)
    for (int x = 0; x < gt.width; ++x) {
      if (!gt.valid(x, y)) continue;
      ++c.gt_valid;
      if (!pred.valid(x, y)) continue;
      const std::optional<double> e = error(x, y);
      if (!e) continue;
      ++c.evaluated;
      for (std::size_t k = 0; k < thresholds.size(); ++k)
        if (*e < thresholds[k]) ++below[k];
    }
  if (c.evaluated == 0) throw EmptyCurveError("prediction and ground truth share no valid pixel");
  c.density = static_cast<double>(c.evaluated) / static_cast<double>(c.gt_valid);
  c.fractions.resize(thresholds.size());
  for (std::size_t k = 0; k < thresholds.size(); ++k)
    c.fractions[k] = static_cast<double>(below[k]) / static_cast<double>(c.evaluated);
  return c;
}

}  // namespace

AccuracyCurve depth_error_curve(const DisparityMap& pred, const DisparityMap& gt,
                                const projection::CameraRig& rig, std::span<const double> thresholds) {
  rig.validate();
  return accumulate(pred, gt, thresholds, [&](int x, int y) -> std::optional<double> {
    const double dp = pred.at(x, y);
    const double dg = gt.at(x, y);
    if (!(dp > 0.0) || !(dg > 0.0)) return std::nullopt;
    const auto p = projection::vertex_to_3d(x, y, dp, rig);
    const auto g = projection::vertex_to_3d(x, y, dg, rig);
    return (p - g).norm();
  });
}

AccuracyCurve disparity_error_curve(const DisparityMap& pred, const DisparityMap& gt,
                                    std::span<const double> thresholds) {
  return accumulate(pred, gt, thresholds, [&](int x, int y) -> std::optional<double> {
    return std::abs(static_cast<double>(pred.at(x, y)) - static_cast<double>(gt.at(x, y)));
  });
}

SizeReport size_report(const io::PlanecellMap& map, std::size_t map_bytes, std::size_t dense_bytes) {
  SizeReport r;
  r.map_bytes = map_bytes;
  r.dense_bytes = dense_bytes;
  r.cells = map.cells.size();
  r.frames = map.frame_count;
  if (!map.cells.empty() && dense_bytes > 0)
    r.ratio = static_cast<double>(map_bytes) / static_cast<double>(dense_bytes);
  if (r.frames > 0) {
    r.bytes_per_frame = static_cast<double>(map_bytes) / r.frames;
    r.cells_per_frame = static_cast<double>(r.cells) / r.frames;
  }
  std::size_t vertices = 0;
  for (const auto& c : map.cells)
    for (const auto& ring : c.rings) vertices += ring.corners.size();
  if (r.cells > 0) r.vertices_per_cell = static_cast<double>(vertices) / static_cast<double>(r.cells);
  return r;
}

std::string format_report(const SizeReport& r) {
  char buf[512];
  std::string ratio = "undefined";
  if (r.ratio) {
    char rb[64];
    std::snprintf(rb, sizeof rb, "%.4f", *r.ratio);
    ratio = rb;
  }
  std::snprintf(buf, sizeof buf,
                "map bytes: %zu\ndense cloud bytes: %zu\nratio: %s\nframes: %u\ncells: %zu\n"
                "bytes/frame: %.1f\ncells/frame: %.1f\nvertices/cell: %.2f\n",
                r.map_bytes, r.dense_bytes, ratio.c_str(), r.frames, r.cells, r.bytes_per_frame,
                r.cells_per_frame, r.vertices_per_cell);
  return buf;
}

std::string format_curve_row(const std::string& label, const AccuracyCurve& c) {
  std::string out = label;
  char buf[96];
  std::snprintf(buf, sizeof buf, " density=%.2f%%", 100.0 * c.density);
  out += buf;
  const auto trunc = c.truncated();
  for (std::size_t k = 0; k < c.thresholds.size(); ++k) {
    std::snprintf(buf, sizeof buf, " <%g=%.2f%%", c.thresholds[k], 100.0 * trunc[k]);
    out += buf;
  }
  return out;
}

void write_curve_csv(const AccuracyCurve& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot create " + path.string());
  out << "threshold,fraction,fraction_of_gt\n";
  const auto trunc = c.truncated();
  char buf[128];
  for (std::size_t k = 0; k < c.thresholds.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", c.thresholds[k], c.fractions[k], trunc[k]);
    out << buf;
  }
}

}  // namespace planecell::eval
