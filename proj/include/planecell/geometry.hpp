#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

namespace planecell {

/// Disparity-space plane d(u, v) = a u + b v + c, pixel-centre coordinates.
struct PlaneFn2D {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double operator()(double u, double v) const { return a * u + b * v + c; }
  bool operator==(const PlaneFn2D&) const = default;
};

/// Camera-space plane z = a x + b y + c (metres).
struct PlaneFn3D {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double operator()(double x, double y) const { return a * x + b * y + c; }
  bool operator==(const PlaneFn3D&) const = default;
};

/// General plane n . p + offset = 0 with |n| = 1. Covers planes that have
/// no z = f(x, y) form (e.g. a level road seen by a level camera).
struct NormalPlane {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double offset = 0.0;

  double signed_distance(const Eigen::Vector3d& p) const { return normal.dot(p) + offset; }
  bool operator==(const NormalPlane& o) const {
    return normal == o.normal && offset == o.offset;
  }
};

/// Segment id -> fitted disparity plane; empty where fitting failed.
using PlaneMap = std::vector<std::optional<PlaneFn2D>>;

}  // namespace planecell
