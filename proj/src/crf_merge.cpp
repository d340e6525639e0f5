#include "planecell/crf_merge.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <unordered_map>

#include "planecell/error.hpp"

namespace planecell::crf {

using projection::corner_coord;
using projection::Planecell;

bool SurfaceLabeling::operator==(const SurfaceLabeling& o) const {
  if (surface_of != o.surface_of || surfaces.size() != o.surfaces.size()) return false;
  for (std::size_t s = 0; s < surfaces.size(); ++s) {
    const auto& a = surfaces[s];
    const auto& b = o.surfaces[s];
    if (!(a.plane == b.plane) || a.hist != b.hist || a.area != b.area || a.members != b.members)
      return false;
  }
  return true;
}

namespace {

// Unit pixel edges of a ring as (midpoint in image coordinates, key).
struct UnitEdge {
  double u = 0.0;
  double v = 0.0;
  std::uint64_t key = 0;
};

std::uint64_t edge_key(std::int32_t frame, int orient, int u, int v) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(frame)) << 48) |
         (static_cast<std::uint64_t>(orient) << 47) |
         (static_cast<std::uint64_t>(static_cast<std::uint32_t>(v) & 0x7fffff) << 24) |
         (static_cast<std::uint64_t>(static_cast<std::uint32_t>(u)) & 0xffffff);
}

void ring_unit_edges(const topology::Ring& ring, std::int32_t frame, std::vector<UnitEdge>& out) {
  for (std::size_t k = 0; k < ring.size(); ++k) {
    const auto& p = ring[k];
    const auto& q = ring[(k + 1) % ring.size()];
    if (p.v == q.v) {
      for (int u = std::min(p.u, q.u); u < std::max(p.u, q.u); ++u)
        out.push_back({corner_coord(u) + 0.5, corner_coord(p.v), edge_key(frame, 0, u, p.v)});
    } else {
      for (int v = std::min(p.v, q.v); v < std::max(p.v, q.v); ++v)
        out.push_back({corner_coord(p.u), corner_coord(v) + 0.5, edge_key(frame, 1, p.u, v)});
    }
  }
}

void push_lift(const Planecell& cell, double u, double v, const projection::CameraRig& rig,
               std::vector<Eigen::Vector3d>& out) {
  if (cell.plane2d(u, v) > 0.0) out.push_back(cell.lift(u, v, rig));
}

struct PairAccum {
  std::vector<UnitEdge> shared;  // same frame
  std::vector<Eigen::Vector3d> samples;  // cross frame
  std::int64_t matched_i = 0;
  std::int64_t matched_j = 0;
};

struct VoxelKeyHash {
  std::size_t operator()(const Eigen::Vector3i& k) const {
    return static_cast<std::size_t>(k.x()) * 73856093U ^ static_cast<std::size_t>(k.y()) * 19349663U ^
           static_cast<std::size_t>(k.z()) * 83492791U;
  }
};
struct VoxelKeyEq {
  bool operator()(const Eigen::Vector3i& a, const Eigen::Vector3i& b) const { return a == b; }
};

}  // namespace

CellGraph build_graph(std::span<const Planecell> cells, const projection::CameraRig& rig,
                      const GraphParams& params) {
  if (params.sample_stride < 1) throw ParameterError("sample_stride must be >= 1");
  CellGraph g;
  const auto n = static_cast<std::int32_t>(cells.size());
  g.nodes.reserve(n);
  for (const auto& c : cells) {
    CellNode node;
    node.cell_id = c.id;
    node.frame = c.frame;
    node.plane = c.plane;
    node.hist = c.hist;
    for (int b = 0; b < superpixel::kHistogramBins; ++b)
      if (c.hist.bins[b] != 0) node.bins.emplace_back(b, c.hist.bins[b]);
    node.area = c.area_px;
    node.vertices = c.all_vertices();
    g.nodes.push_back(std::move(node));
  }
  g.labels.resize(n);
  for (std::int32_t i = 0; i < n; ++i) g.labels[i] = i;
  g.incident.assign(n, {});
  if (n == 0) return g;

  std::map<std::pair<std::int32_t, std::int32_t>, PairAccum> pairs;

  // same-frame: shared unit edges of the polygons
  std::unordered_map<std::uint64_t, std::int32_t> owner;
  std::vector<UnitEdge> units;
  for (std::int32_t i = 0; i < n; ++i) {
    units.clear();
    ring_unit_edges(cells[i].polygon.outer, cells[i].frame, units);
    for (const auto& h : cells[i].polygon.holes) ring_unit_edges(h, cells[i].frame, units);
    for (const auto& e : units) {
      auto [it, fresh] = owner.emplace(e.key, i);
      if (fresh || it->second == i) continue;
      pairs[{std::min(it->second, i), std::max(it->second, i)}].shared.push_back(e);
    }
  }

  // cross-frame: boundary samples closer than the gap
  bool multi_frame = false;
  for (const auto& c : cells) multi_frame |= c.frame != cells[0].frame;
  if (multi_frame) {
    struct Sample {
      Eigen::Vector3d p;
      std::int32_t node;
    };
    std::vector<Sample> samples;
    for (std::int32_t i = 0; i < n; ++i) {
      units.clear();
      ring_unit_edges(cells[i].polygon.outer, cells[i].frame, units);
      std::vector<Eigen::Vector3d> pts;
      for (std::size_t k = 0; k < units.size(); k += params.sample_stride)
        push_lift(cells[i], units[k].u, units[k].v, rig, pts);
      for (const auto& p : pts) samples.push_back({p, i});
    }
    const double cell_size = params.gap;
    const auto voxel = [cell_size](const Eigen::Vector3d& p) {
      return Eigen::Vector3i(static_cast<int>(std::floor(p.x() / cell_size)),
                             static_cast<int>(std::floor(p.y() / cell_size)),
                             static_cast<int>(std::floor(p.z() / cell_size)));
    };
    std::unordered_map<Eigen::Vector3i, std::vector<std::int32_t>, VoxelKeyHash, VoxelKeyEq> grid;
    for (std::size_t s = 0; s < samples.size(); ++s)
      grid[voxel(samples[s].p)].push_back(static_cast<std::int32_t>(s));
    std::vector<std::int32_t> hit;
    for (const auto& s : samples) {
      hit.clear();
      const Eigen::Vector3i k = voxel(s.p);
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            auto it = grid.find(k + Eigen::Vector3i(dx, dy, dz));
            if (it == grid.end()) continue;
            for (auto t : it->second) {
              const auto& o = samples[t];
              if (cells[o.node].frame == cells[s.node].frame) continue;
              if ((o.p - s.p).norm() >= params.gap) continue;
              if (std::find(hit.begin(), hit.end(), o.node) == hit.end()) hit.push_back(o.node);
            }
          }
      for (auto j : hit) {
        auto& acc = pairs[{std::min(s.node, j), std::max(s.node, j)}];
        acc.samples.push_back(s.p);
        (s.node < j ? acc.matched_i : acc.matched_j) += 1;
      }
    }
  }

  for (auto& [key, acc] : pairs) {
    CellEdge e;
    e.i = key.first;
    e.j = key.second;
    if (!acc.shared.empty()) {
      std::sort(acc.shared.begin(), acc.shared.end(),
                [](const UnitEdge& a, const UnitEdge& b) { return a.key < b.key; });
      e.length = static_cast<double>(acc.shared.size());
      for (std::size_t k = 0; k < acc.shared.size(); k += params.sample_stride) {
        push_lift(cells[e.i], acc.shared[k].u, acc.shared[k].v, rig, e.samples);
        push_lift(cells[e.j], acc.shared[k].u, acc.shared[k].v, rig, e.samples);
      }
    } else {
      e.cross_frame = true;
      e.length = params.sample_stride * 0.5 * static_cast<double>(acc.matched_i + acc.matched_j);
      e.samples = std::move(acc.samples);
    }
    if (e.length <= 0.0) continue;
    g.incident[e.i].push_back(static_cast<std::int32_t>(g.edges.size()));
    g.incident[e.j].push_back(static_cast<std::int32_t>(g.edges.size()));
    g.edges.push_back(std::move(e));
  }
  return g;
}

double unary_potential(const superpixel::ColorHistogram& cell,
                       const superpixel::ColorHistogram& surface) {
  if (cell.bins.size() != surface.bins.size())
    throw ParameterError("unary_potential: histogram sizes differ");
  if (cell.total <= 0 || surface.total <= 0) return 0.0;
  const double nc = static_cast<double>(cell.total);
  const double ns = static_cast<double>(surface.total);
  double s = 0.0;
  for (std::size_t q = 0; q < cell.bins.size(); ++q) {
    if (cell.bins[q] == 0) continue;
    s += std::min(cell.bins[q] / nc, surface.bins[q] / ns);
  }
  return s;
}

namespace {

double unary_sparse(const CellNode& node, const superpixel::ColorHistogram& surface) {
  if (node.area <= 0 || surface.total <= 0) return 0.0;
  const double nc = static_cast<double>(node.hist.total);
  const double ns = static_cast<double>(surface.total);
  double s = 0.0;
  for (const auto& [q, count] : node.bins) s += std::min(count / nc, surface.bins[q] / ns);
  return s;
}

}  // namespace

double pairwise_potential(double area_union, double residual_ij, double residual_ji) {
  return area_union / (residual_ij * residual_ij + residual_ji * residual_ji + 1.0);
}

double rms_distance(std::span<const Eigen::Vector3d> points, const NormalPlane& plane) {
  if (points.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : points) {
    const double r = plane.signed_distance(p);
    s += r * r;
  }
  return std::sqrt(s / static_cast<double>(points.size()));
}

double pairwise_potential(const CellNode& a, const CellNode& b) {
  return pairwise_potential(static_cast<double>(a.area + b.area), rms_distance(b.vertices, a.plane),
                            rms_distance(a.vertices, b.plane));
}

double boundary_potential(double length, double rms) { return length / (rms * rms + 1.0); }

double boundary_potential(const CellEdge& edge, const NormalPlane& plane) {
  return boundary_potential(edge.length, rms_distance(edge.samples, plane));
}

NormalPlane fit_surface_plane(const CellGraph& graph, std::span<const std::int32_t> members) {
  if (members.empty()) throw ParameterError("fit_surface_plane: no members");
  if (members.size() == 1) return graph.nodes[members[0]].plane;
  double wsum = 0.0;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (auto m : members) {
    const auto& node = graph.nodes[m];
    if (node.vertices.empty()) continue;
    const double w = static_cast<double>(node.area) / static_cast<double>(node.vertices.size());
    for (const auto& p : node.vertices) {
      mean += w * p;
      wsum += w;
    }
  }
  mean /= wsum;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (auto m : members) {
    const auto& node = graph.nodes[m];
    if (node.vertices.empty()) continue;
    const double w = static_cast<double>(node.area) / static_cast<double>(node.vertices.size());
    for (const auto& p : node.vertices) {
      const Eigen::Vector3d d = p - mean;
      cov.noalias() += w * d * d.transpose();
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  Eigen::Vector3d n = eig.eigenvectors().col(0).normalized();
  if (n.dot(graph.nodes[members[0]].plane.normal) < 0.0) n = -n;
  return {n, -n.dot(mean)};
}

SurfaceLabeling make_labeling(const CellGraph& graph, std::span<const std::int32_t> labels) {
  if (labels.size() != graph.nodes.size())
    throw ParameterError("make_labeling: label count does not match node count");
  SurfaceLabeling out;
  out.surface_of.assign(labels.size(), -1);
  std::unordered_map<std::int32_t, std::int32_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, fresh] = index.emplace(labels[i], static_cast<std::int32_t>(out.surfaces.size()));
    if (fresh) out.surfaces.emplace_back();
    out.surface_of[i] = it->second;
    auto& s = out.surfaces[it->second];
    s.members.push_back(static_cast<std::int32_t>(i));
    for (const auto& [q, c] : graph.nodes[i].bins) s.hist.add(q, c);
    s.area += graph.nodes[i].area;
  }
  for (auto& s : out.surfaces) s.plane = fit_surface_plane(graph, s.members);
  return out;
}

double total_energy(const CellGraph& graph, const SurfaceLabeling& labeling) {
  double e = 0.0;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const auto& s = labeling.surfaces[labeling.surface_of[i]];
    e += static_cast<double>(graph.nodes[i].area) * unary_sparse(graph.nodes[i], s.hist);
  }
  for (const auto& edge : graph.edges) {
    const auto si = labeling.surface_of[edge.i];
    if (si != labeling.surface_of[edge.j]) continue;
    e += pairwise_potential(graph.nodes[edge.i], graph.nodes[edge.j]);
    e += boundary_potential(edge, labeling.surfaces[si].plane);
  }
  return e;
}

namespace {

struct Surface {
  std::vector<std::int32_t> members;
  std::vector<std::int32_t> intra;  // edge indices
  superpixel::ColorHistogram hist;
  std::int64_t area = 0;
  NormalPlane plane;
  double unary = 0.0;
  double psi = 0.0;
  bool alive = true;
};

class Merger {
 public:
  Merger(const CellGraph& g, const MergeParams& p) : g_(g), p_(p), phi_(g.edges.size()) {
    for (std::size_t e = 0; e < g.edges.size(); ++e)
      phi_[e] = pairwise_potential(g.nodes[g.edges[e].i], g.nodes[g.edges[e].j]);
    cos_gate_ = std::cos(p.angle_gate_deg * std::numbers::pi / 180.0);
  }

  void init(const SurfaceLabeling& start) {
    surface_of_ = start.surface_of;
    surfaces_.assign(start.surfaces.size(), {});
    for (std::size_t s = 0; s < start.surfaces.size(); ++s) {
      auto& sf = surfaces_[s];
      sf.members = start.surfaces[s].members;
      sf.hist = start.surfaces[s].hist;
      sf.area = start.surfaces[s].area;
      sf.plane = fit_surface_plane(g_, sf.members);
    }
    for (std::size_t e = 0; e < g_.edges.size(); ++e) {
      const auto s = surface_of_[g_.edges[e].i];
      if (s == surface_of_[g_.edges[e].j]) surfaces_[s].intra.push_back(static_cast<std::int32_t>(e));
    }
    for (auto& sf : surfaces_) {
      sf.unary = unary_of(sf.members, sf.hist);
      sf.psi = psi_of(sf.intra, sf.plane);
    }
  }

  // Returns true if the two surfaces were merged.
  bool try_merge(std::int32_t a, std::int32_t b, double& delta_out) {
    Surface& sa = surfaces_[a];
    Surface& sb = surfaces_[b];
    if (std::abs(sa.plane.normal.dot(sb.plane.normal)) < cos_gate_) return false;
    gather(sb.members, pts_);
    if (rms_distance(pts_, sa.plane) > p_.offset_gate) return false;
    gather(sa.members, pts_);
    if (rms_distance(pts_, sb.plane) > p_.offset_gate) return false;

    std::vector<std::int32_t> members;
    members.reserve(sa.members.size() + sb.members.size());
    std::merge(sa.members.begin(), sa.members.end(), sb.members.begin(), sb.members.end(),
               std::back_inserter(members));
    const NormalPlane plane = fit_surface_plane(g_, members);
    gather(members, pts_);
    if (rms_distance(pts_, plane) > p_.offset_gate) return false;

    superpixel::ColorHistogram hist = sa.hist;
    for (std::size_t q = 0; q < hist.bins.size(); ++q) hist.bins[q] += sb.hist.bins[q];
    hist.total += sb.hist.total;

    // edges that become intra-surface
    const auto& small = sa.members.size() <= sb.members.size() ? sa : sb;
    const std::int32_t other = &small == &sa ? b : a;
    std::vector<std::int32_t> cross;
    for (auto m : small.members)
      for (auto e : g_.incident[m]) {
        const auto& edge = g_.edges[e];
        const auto o = edge.i == m ? edge.j : edge.i;
        if (surface_of_[o] == other) cross.push_back(e);
      }
    std::sort(cross.begin(), cross.end());
    cross.erase(std::unique(cross.begin(), cross.end()), cross.end());

    std::vector<std::int32_t> intra;
    intra.reserve(sa.intra.size() + sb.intra.size() + cross.size());
    intra.insert(intra.end(), sa.intra.begin(), sa.intra.end());
    intra.insert(intra.end(), sb.intra.begin(), sb.intra.end());
    intra.insert(intra.end(), cross.begin(), cross.end());
    std::sort(intra.begin(), intra.end());

    double phi_cross = 0.0;
    for (auto e : cross) phi_cross += phi_[e];
    const double unary = unary_of(members, hist);
    const double psi = psi_of(intra, plane);
    const double delta = unary + phi_cross + psi - sa.unary - sb.unary - sa.psi - sb.psi;
    if (!(delta > 0.0)) return false;

    // keep the lower id
    const std::int32_t keep = std::min(a, b), drop = std::max(a, b);
    Surface& sk = surfaces_[keep];
    Surface& sd = surfaces_[drop];
    for (auto m : sd.members) surface_of_[m] = keep;
    sk.members = std::move(members);
    sk.intra = std::move(intra);
    sk.hist = std::move(hist);
    sk.area += sd.area;
    sk.plane = plane;
    sk.unary = unary;
    sk.psi = psi;
    sd = Surface{};
    sd.alive = false;
    delta_out = delta;
    return true;
  }

  const std::vector<std::int32_t>& surface_of() const { return surface_of_; }

 private:
  void gather(const std::vector<std::int32_t>& members, std::vector<Eigen::Vector3d>& out) const {
    out.clear();
    for (auto m : members)
      out.insert(out.end(), g_.nodes[m].vertices.begin(), g_.nodes[m].vertices.end());
  }

  double unary_of(const std::vector<std::int32_t>& members,
                  const superpixel::ColorHistogram& hist) const {
    double u = 0.0;
    for (auto m : members)
      u += static_cast<double>(g_.nodes[m].area) * unary_sparse(g_.nodes[m], hist);
    return u;
  }

  double psi_of(const std::vector<std::int32_t>& edges, const NormalPlane& plane) const {
    double s = 0.0;
    for (auto e : edges) s += boundary_potential(g_.edges[e], plane);
    return s;
  }

  const CellGraph& g_;
  MergeParams p_;
  std::vector<double> phi_;
  double cos_gate_ = 1.0;
  std::vector<std::int32_t> surface_of_;
  std::vector<Surface> surfaces_;
  std::vector<Eigen::Vector3d> pts_;
};

}  // namespace

SurfaceLabeling greedy_merge(const CellGraph& graph, const MergeParams& params,
                             const SurfaceLabeling* initial, MergeStats* stats) {
  MergeStats local;
  MergeStats& st = stats ? *stats : local;
  st = MergeStats{};
  const SurfaceLabeling start = initial ? *initial : make_labeling(graph, graph.labels);
  if (start.surface_of.size() != graph.nodes.size())
    throw ParameterError("greedy_merge: initial labelling does not match graph");

  Merger merger(graph, params);
  merger.init(start);
  double energy = total_energy(graph, start);
  st.energy_trace.push_back(energy);

  for (int pass = 0; pass < params.max_iters; ++pass) {
    bool merged = false;
    for (const auto& edge : graph.edges) {
      const auto a = merger.surface_of()[edge.i];
      const auto b = merger.surface_of()[edge.j];
      if (a == b) continue;
      double delta = 0.0;
      if (merger.try_merge(a, b, delta)) {
        merged = true;
        ++st.merges;
        energy += delta;
        st.energy_trace.push_back(energy);
      }
    }
    ++st.passes;
    if (!merged) break;
  }
  return make_labeling(graph, merger.surface_of());
}

}  // namespace planecell::crf
