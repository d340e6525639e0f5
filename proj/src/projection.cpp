#include "planecell/projection.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "planecell/error.hpp"

namespace planecell::projection {

namespace {
constexpr double kZFormEps = 1e-9;
}

void CameraRig::validate() const {
  if (!(f > 0.0) || !std::isfinite(f)) throw ParameterError("focal length must be > 0");
  if (!(baseline > 0.0) || !std::isfinite(baseline)) throw ParameterError("baseline must be > 0");
  if (!std::isfinite(cu) || !std::isfinite(cv)) throw ParameterError("principal point not finite");
}

bool Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const Eigen::Matrix3d rtr = rotation.transpose() * rotation;
  if ((rtr - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

Pose Pose::compose(const Pose& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

Eigen::Vector3d vertex_to_3d(double u, double v, double d, const CameraRig& rig) {
  if (!(d > 0.0)) throw DegenerateError("vertex_to_3d: disparity must be > 0");
  const double z = rig.f * rig.baseline / d;
  return {(u - rig.cu) * z / rig.f, (v - rig.cv) * z / rig.f, z};
}

Eigen::Vector3d project_to_image(const Eigen::Vector3d& p, const CameraRig& rig) {
  if (!(p.z() > 0.0)) throw DegenerateError("project_to_image: point behind camera");
  return {rig.f * p.x() / p.z() + rig.cu, rig.f * p.y() / p.z() + rig.cv,
          rig.f * rig.baseline / p.z()};
}

NormalPlane plane2d_to_normal(const PlaneFn2D& p, const CameraRig& rig) {
  // d z = f B with d = a u + b v + c, u = f x / z + cu, v = f y / z + cv
  const Eigen::Vector3d n(p.a * rig.f, p.b * rig.f, p.a * rig.cu + p.b * rig.cv + p.c);
  const double len = n.norm();
  if (!(len > 0.0) || !std::isfinite(len)) throw DegenerateError("plane2d_to_normal: zero plane");
  return {n / len, -rig.f * rig.baseline / len};
}

PlaneFn3D plane2d_to_3d(const PlaneFn2D& p, const CameraRig& rig) {
  const double k = p.a * rig.cu + p.b * rig.cv + p.c;
  const double scale = std::abs(p.a * rig.f) + std::abs(p.b * rig.f) + std::abs(k);
  if (!(std::abs(k) > kZFormEps * scale))
    throw DegenerateError("plane2d_to_3d: plane contains the viewing direction (a cu + b cv + c ~ 0)");
  return {-p.a * rig.f / k, -p.b * rig.f / k, rig.f * rig.baseline / k};
}

std::optional<PlaneFn3D> to_z_form(const NormalPlane& plane) {
  const Eigen::Vector3d& n = plane.normal;
  if (!(std::abs(n.z()) > kZFormEps * n.norm())) return std::nullopt;
  return PlaneFn3D{-n.x() / n.z(), -n.y() / n.z(), -plane.offset / n.z()};
}

NormalPlane from_z_form(const PlaneFn3D& plane) {
  const Eigen::Vector3d n(plane.a, plane.b, -1.0);
  const double len = n.norm();
  return {n / len, plane.c / len};
}

double point_plane_distance(const Eigen::Vector3d& p, const PlaneFn3D& plane) {
  return std::abs((plane.a * p.x() + plane.b * p.y() - p.z() + plane.c) /
                  std::sqrt(plane.a * plane.a + plane.b * plane.b + 1.0));
}

double point_plane_distance(const Eigen::Vector3d& p, const NormalPlane& plane) {
  return std::abs(plane.signed_distance(p)) / plane.normal.norm();
}

std::vector<Eigen::Vector3d> Planecell::all_vertices() const {
  std::vector<Eigen::Vector3d> out;
  for (const auto& ring : vertices3d) out.insert(out.end(), ring.begin(), ring.end());
  return out;
}

Eigen::Vector3d Planecell::lift(double u, double v, const CameraRig& rig) const {
  return pose.apply(vertex_to_3d(u, v, plane2d(u, v), rig));
}

Planecell make_planecell(std::int32_t id, std::int32_t frame, topology::Polygon polygon,
                         const PlaneFn2D& plane, const CameraRig& rig,
                         superpixel::ColorHistogram hist, Rgb mean_rgb, std::int64_t area_px) {
  Planecell cell;
  cell.id = id;
  cell.frame = frame;
  cell.plane2d = plane;
  cell.plane = plane2d_to_normal(plane, rig);
  cell.plane3d = to_z_form(cell.plane);
  cell.hist = std::move(hist);
  cell.mean_rgb = mean_rgb;
  cell.area_px = area_px;
  const auto add_ring = [&](const topology::Ring& ring) {
    std::vector<double> disp;
    std::vector<Eigen::Vector3d> pts;
    for (const auto& c : ring) {
      const double u = corner_coord(c.u), v = corner_coord(c.v);
      const double d = plane(u, v);
      if (!(d > 0.0))
        throw DegenerateError("cell " + std::to_string(id) + ": non-positive vertex disparity");
      disp.push_back(d);
      pts.push_back(vertex_to_3d(u, v, d, rig));
    }
    cell.vertex_disparity.push_back(std::move(disp));
    cell.vertices3d.push_back(std::move(pts));
  };
  add_ring(polygon.outer);
  for (const auto& h : polygon.holes) add_ring(h);
  cell.polygon = std::move(polygon);
  return cell;
}

CellBuildResult build_planecells(const superpixel::SegmentationState& state,
                                 const ColorImage& img, const PlaneMap& planes,
                                 const CameraRig& rig, std::int32_t frame) {
  rig.validate();
  const topology::LabelView view{state.width, state.height, state.labels};
  auto polygons = topology::extract_all_polygons(view);
  const auto colors = superpixel::mean_colors(state, img);
  CellBuildResult out;
  for (std::int32_t s = 0; s < state.segment_count(); ++s) {
    if (static_cast<std::size_t>(s) >= planes.size() || !planes[s]) {
      out.skipped.push_back(s);
      continue;
    }
    try {
      out.cells.push_back(make_planecell(s, frame, std::move(polygons[s]), *planes[s], rig,
                                         state.histograms[s], colors[s], state.sizes[s]));
    } catch (const DegenerateError&) {
      out.skipped.push_back(s);
    }
  }
  return out;
}

std::vector<Planecell> apply_pose(std::vector<Planecell> cells, const Pose& pose) {
  if (!pose.is_valid()) throw ParameterError("apply_pose: rotation is not a proper rotation");
  for (auto& cell : cells) {
    for (auto& ring : cell.vertices3d)
      for (auto& p : ring) p = pose.apply(p);
    const Eigen::Vector3d n = pose.rotation * cell.plane.normal;
    cell.plane = {n, cell.plane.offset - n.dot(pose.translation)};
    cell.plane3d = to_z_form(cell.plane);
    cell.pose = pose.compose(cell.pose);
  }
  return cells;
}

}  // namespace planecell::projection
