#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "planecell/geometry.hpp"
#include "planecell/image.hpp"
#include "planecell/superpixel.hpp"
#include "planecell/topology.hpp"

namespace planecell::projection {

/// Rectified stereo rig: left camera intrinsics and baseline.
struct CameraRig {
  double f = 1.0;   // focal length, px
  double cu = 0.0;  // principal point, px
  double cv = 0.0;
  double baseline = 1.0;  // metres

  void validate() const;
};

/// Rigid transform p' = R p + t.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  bool is_valid(double tol = 1e-9) const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  /// this o other
  Pose compose(const Pose& other) const;
  bool operator==(const Pose& o) const {
    return rotation == o.rotation && translation == o.translation;
  }
};

/// z = f b / d, x = (u - cu) z / f, y = (v - cv) z / f. Throws DegenerateError if d <= 0.
Eigen::Vector3d vertex_to_3d(double u, double v, double d, const CameraRig& rig);

/// Inverse of vertex_to_3d: (u, v, d).
Eigen::Vector3d project_to_image(const Eigen::Vector3d& p, const CameraRig& rig);

/// Normal form of the camera-space plane swept by a disparity plane:
/// (a f) x + (b f) y + (a cu + b cv + c) z - f b = 0, normalised.
NormalPlane plane2d_to_normal(const PlaneFn2D& p, const CameraRig& rig);

/// z = a3 x + b3 y + c3 with a3 = -a f / k, b3 = -b f / k, c3 = f B / k and
/// k = a cu + b cv + c. Throws DegenerateError when k ~ 0.
PlaneFn3D plane2d_to_3d(const PlaneFn2D& p, const CameraRig& rig);

/// z-form of a general plane; empty when the plane is (nearly) parallel to z.
std::optional<PlaneFn3D> to_z_form(const NormalPlane& plane);
NormalPlane from_z_form(const PlaneFn3D& plane);

/// |a x0 + b y0 - z0 + c| / sqrt(a^2 + b^2 + 1)
double point_plane_distance(const Eigen::Vector3d& p, const PlaneFn3D& plane);
double point_plane_distance(const Eigen::Vector3d& p, const NormalPlane& plane);

/// One polygonal plane unit. Ring 0 is the outer boundary.
struct Planecell {
  std::int32_t id = 0;
  std::int32_t frame = 0;
  topology::Polygon polygon;
  std::vector<std::vector<double>> vertex_disparity;
  std::vector<std::vector<Eigen::Vector3d>> vertices3d;
  PlaneFn2D plane2d;
  NormalPlane plane;                 // general form, always present
  std::optional<PlaneFn3D> plane3d;  // empty for planes parallel to z
  superpixel::ColorHistogram hist;
  Rgb mean_rgb{0, 0, 0};
  std::int64_t area_px = 0;
  Pose pose;  // camera-to-map transform applied so far

  /// Every ring's vertices, flattened.
  std::vector<Eigen::Vector3d> all_vertices() const;
  /// Lifts an image point through plane2d and the pose.
  Eigen::Vector3d lift(double u, double v, const CameraRig& rig) const;
};

/// Image coordinate of a junction-grid corner.
inline double corner_coord(int c) { return c - 0.5; }

/// Builds a cell from a polygon and its plane. Throws DegenerateError if
/// the plane predicts a non-positive disparity at any vertex.
Planecell make_planecell(std::int32_t id, std::int32_t frame, topology::Polygon polygon,
                         const PlaneFn2D& plane, const CameraRig& rig,
                         superpixel::ColorHistogram hist, Rgb mean_rgb, std::int64_t area_px);

struct CellBuildResult {
  std::vector<Planecell> cells;
  std::vector<std::int32_t> skipped;  // segments without a usable plane
};

/// One cell per segment with a plane; failed or degenerate segments are skipped.
CellBuildResult build_planecells(const superpixel::SegmentationState& state,
                                 const ColorImage& img, const PlaneMap& planes,
                                 const CameraRig& rig, std::int32_t frame = 0);

/// Applies a rigid pose to vertices and planes. The plane is moved in
/// normal form (n' = R n, o' = o - n'.t) and its z-form recomputed.
std::vector<Planecell> apply_pose(std::vector<Planecell> cells, const Pose& pose);

}  // namespace planecell::projection
