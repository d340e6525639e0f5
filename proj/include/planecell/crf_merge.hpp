#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "planecell/geometry.hpp"
#include "planecell/projection.hpp"
#include "planecell/superpixel.hpp"

namespace planecell::crf {

/// Boundary between two adjacent cells.
struct CellEdge {
  std::int32_t i = 0;  // node index, i < j
  std::int32_t j = 0;
  double length = 0.0;  // pixels
  std::vector<Eigen::Vector3d> samples;  // 3D boundary points, both sides
  bool cross_frame = false;
};

struct CellNode {
  std::int32_t cell_id = 0;
  std::int32_t frame = 0;
  NormalPlane plane;
  superpixel::ColorHistogram hist;
  std::vector<std::pair<int, std::int32_t>> bins;  // non-zero bins of hist
  std::int64_t area = 0;
  std::vector<Eigen::Vector3d> vertices;
};

struct CellGraph {
  std::vector<CellNode> nodes;
  std::vector<CellEdge> edges;  // sorted by (i, j)
  std::vector<std::vector<std::int32_t>> incident;  // node -> edge indices
  std::vector<std::int32_t> labels;  // initial labels y_i = i
};

struct GraphParams {
  int sample_stride = 4;  // every n-th boundary pixel is lifted to 3D
  double gap = 0.2;       // metres, cross-frame proximity
};

/// Nodes are the cells; same-frame edges come from shared polygon edges,
/// cross-frame edges from 3D boundary samples closer than `gap`.
CellGraph build_graph(std::span<const projection::Planecell> cells,
                      const projection::CameraRig& rig, const GraphParams& params = {});

/// Plane and colour description of one surface.
struct SurfaceTuple {
  NormalPlane plane;
  superpixel::ColorHistogram hist;
  std::int64_t area = 0;
  std::vector<std::int32_t> members;  // ascending node indices
};

struct SurfaceLabeling {
  std::vector<std::int32_t> surface_of;  // node -> surface index
  std::vector<SurfaceTuple> surfaces;    // ordered by smallest member

  bool operator==(const SurfaceLabeling& o) const;
};

/// sum_q min(p_surface(q), p_cell(q)) over normalised histograms, in [0, 1].
double unary_potential(const superpixel::ColorHistogram& cell,
                       const superpixel::ColorHistogram& surface);

/// area_union / (r_ij^2 + r_ji^2 + 1)
double pairwise_potential(double area_union, double residual_ij, double residual_ji);
/// Residuals are RMS point-plane distances of one cell's vertices to the other's plane.
double pairwise_potential(const CellNode& a, const CellNode& b);

/// length / (rms^2 + 1), rms of the samples against the plane.
double boundary_potential(double length, double rms);
double boundary_potential(const CellEdge& edge, const NormalPlane& plane);

double rms_distance(std::span<const Eigen::Vector3d> points, const NormalPlane& plane);

/// Area-weighted total least squares plane over the members' vertices
/// (each vertex weighs area / vertex count). Single members keep their own plane.
NormalPlane fit_surface_plane(const CellGraph& graph, std::span<const std::int32_t> members);

/// Builds tuples for an arbitrary labelling (labels need not be compact).
SurfaceLabeling make_labeling(const CellGraph& graph, std::span<const std::int32_t> labels);

/// E = sum_i area_i delta_i + sum_{same-label edges} phi_ij + sum_{intra-surface
/// boundaries} psi. All singletons give E = sum_i area_i.
double total_energy(const CellGraph& graph, const SurfaceLabeling& labeling);

struct MergeParams {
  double angle_gate_deg = 5.0;
  double offset_gate = 0.1;  // metres
  int max_iters = 100;       // circular passes
};

struct MergeStats {
  int merges = 0;
  int passes = 0;
  std::vector<double> energy_trace;  // energy before and after each accepted merge
};

/// Circular greedy merging over surface-adjacency edges in fixed edge order.
/// A pair merges when normals agree within angle_gate, mutual and refit RMS
/// distances stay within offset_gate, and the energy strictly increases.
SurfaceLabeling greedy_merge(const CellGraph& graph, const MergeParams& params,
                             const SurfaceLabeling* initial = nullptr, MergeStats* stats = nullptr);

}  // namespace planecell::crf
