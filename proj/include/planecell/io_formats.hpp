#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "planecell/geometry.hpp"
#include "planecell/image.hpp"
#include "planecell/projection.hpp"
#include "planecell/topology.hpp"

namespace planecell::io {

namespace fs = std::filesystem;

/// PNG (8-bit gray/RGB/RGBA/palette) or binary PGM/PPM. Gray inputs are
/// replicated into three channels. 16-bit samples are rejected.
ColorImage load_color_image(const fs::path& path);
/// Same formats; colour inputs are converted with luminance().
GrayImage load_gray_image(const fs::path& path);

enum class DisparityFormat { KittiPng16, Pfm, RawF32 };

DisparityFormat parse_disparity_format(std::string_view name);
std::string_view to_string(DisparityFormat f);

/// kitti_png16: d = raw / 256, raw 0 is invalid.
/// pfm: either byte order, bottom-up rows; negative, inf or NaN is invalid.
/// raw_f32: headerless little-endian float32, width x height given by the caller.
DisparityMap load_disparity(const fs::path& path, DisparityFormat format, int width = 0,
                            int height = 0);

/// Little-endian single-channel PFM; invalid pixels are stored as +inf.
void write_pfm(const DisparityMap& map, const fs::path& path);
/// 16-bit gray PNG, raw = round(d * 256) clamped to [1, 65535]; invalid -> 0.
void write_png16(const DisparityMap& map, const fs::path& path);
void write_raw_f32(const DisparityMap& map, const fs::path& path);

void write_png(const ColorImage& img, const fs::path& path);
void write_png(const GrayImage& img, const fs::path& path);
void write_png_gray16(int width, int height, std::span<const std::uint16_t> data,
                      const fs::path& path);
void write_ppm(const ColorImage& img, const fs::path& path);

struct CalibInfo {
  projection::CameraRig rig;
  std::string source;
};

/// KITTI calib.txt: lines "P0: 12 numbers" .. "P3: ...". Other keys are ignored.
/// f = P0[0][0], cu = P0[0][2], cv = P0[1][2], baseline = -P1[0][3] / f.
CalibInfo load_kitti_calib(const fs::path& path);

/// One 3x4 row-major [R|t] per non-empty line. Rotations are projected onto
/// SO(3) when within 1e-6 of it and rejected otherwise.
std::vector<projection::Pose> load_poses(const fs::path& path);

// ---------------------------------------------------------------------------
// Map file

inline constexpr std::uint16_t kMapVersion = 2;
inline constexpr std::size_t kMapHeaderBytes = 48;

struct MapRing {
  std::vector<topology::Corner> corners;
  std::vector<Eigen::Vector3f> points;  // derived, see derive_points()
};

struct MapCell {
  std::int32_t id = 0;
  std::int32_t frame = 0;
  std::int32_t surface = -1;
  std::uint32_t area = 0;
  Rgb mean_rgb{0, 0, 0};
  PlaneFn2D plane2d;
  std::variant<PlaneFn3D, NormalPlane> plane3d;
  std::vector<MapRing> rings;  // ring 0 is the outer boundary

  bool operator==(const MapCell& o) const;
};

struct FramePose {
  std::int32_t frame = 0;
  projection::Pose pose;  // camera to map
};

struct PlanecellMap {
  std::uint32_t frame_count = 0;
  projection::CameraRig rig;
  std::vector<FramePose> poses;  // sorted by frame; missing frames use the identity
  std::vector<MapCell> cells;

  bool operator==(const PlanecellMap& o) const;
};

/// surface_of may be empty (every cell gets surface -1).
PlanecellMap make_map(std::span<const projection::Planecell> cells,
                      std::span<const std::int32_t> surface_of, const projection::CameraRig& rig,
                      std::uint32_t frame_count);

/// Fills every ring's points from its corners, the cell's disparity plane,
/// the rig and the frame pose. The file stores only the corners; readers
/// call this so that written and read maps compare equal bit for bit.
/// Throws DegenerateError when a corner has non-positive disparity.
void derive_points(PlanecellMap& map);

std::vector<std::uint8_t> encode_map(const PlanecellMap& map);
PlanecellMap decode_map(std::span<const std::uint8_t> bytes);
/// Returns the number of bytes written.
std::size_t write_map(const PlanecellMap& map, const fs::path& path);
PlanecellMap read_map(const fs::path& path);

/// Human-readable dump of the same content.
void write_map_json(const PlanecellMap& map, const fs::path& path);

// ---------------------------------------------------------------------------
// Mesh and debug exports

enum class ColorMode { Rgb, Height, Surface };

ColorMode parse_color_mode(std::string_view name);

/// Ramp entry for height mode: y clamped to [-2, 5] m, index = round((y + 2) / 7 * 255).
Rgb height_color(double y);
/// Fixed colour for a surface id.
Rgb surface_color(std::int32_t surface);

/// Triangles of a simple ring (ear clipping), as vertex index triples.
std::vector<std::array<int, 3>> triangulate(const topology::Ring& ring);

/// ASCII PLY, one face per triangle of each cell's outer ring.
void write_ply(const PlanecellMap& map, ColorMode mode, const fs::path& path);

/// Label ids as 16-bit gray (ids above 65535 wrap).
void write_label_png(int width, int height, std::span<const std::int32_t> labels,
                     const fs::path& path);
/// Image with segment boundaries painted red.
void write_boundary_overlay(const ColorImage& img, std::span<const std::int32_t> labels,
                            const fs::path& path);
/// Polygons of one frame as SVG paths in corner coordinates.
void write_svg(const PlanecellMap& map, std::int32_t frame, int width, int height,
               const fs::path& path);

}  // namespace planecell::io
