// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "planecell/crf_merge.hpp"
#include "planecell/eval.hpp"
#include "planecell/io_formats.hpp"
#include "planecell/pipeline.hpp"
#include "planecell/plane_fit.hpp"
#include "planecell/projection.hpp"
#include "planecell/stereo_sgm.hpp"
#include "planecell/superpixel.hpp"
#include "planecell/topology.hpp"
#include "support/scenes.hpp"
#include "support/tmpdir.hpp"

using namespace planecell;
namespace pp = planecell::pipeline;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

// Runs one criterion; an exception counts as a failure.
void criterion(const std::string& name, const std::function<bool(std::string&)>& body) {
  std::string detail;
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  report(name, ok, detail);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

pp::PipelineConfig scene_config(const fixtures::PlaneScene& scene, const fs::path& dir) {
  io::write_png(scene.image, dir / "left.png");
  io::write_pfm(scene.noisy, dir / "disp.pfm");
  pp::PipelineConfig cfg;
  cfg.left = (dir / "left.png").string();
  cfg.disparity = (dir / "disp.pfm").string();
  cfg.disparity_format = io::DisparityFormat::Pfm;
  cfg.rig = scene.rig;
  cfg.cells = 60;
  cfg.out_dir = (dir / "out").string();
  return cfg;
}

// --- SGM path oracle -------------------------------------------------------

// Min over all disparity sequences ending at (x, d) of costs plus penalties.
std::vector<std::vector<double>> enumerate_paths(const std::vector<std::vector<double>>& c, double p1,
                                                 double p2) {
  const int n = static_cast<int>(c.size()), nd = static_cast<int>(c[0].size());
  std::vector<std::vector<double>> best(n, std::vector<double>(nd, 1e300));
  for (int len = 1; len <= n; ++len) {
    int total = 1;
    for (int i = 0; i < len; ++i) total *= nd;
    for (int code = 0; code < total; ++code) {
      std::vector<int> seq(len);
      for (int i = 0, k = code; i < len; ++i, k /= nd) seq[i] = k % nd;
      double e = c[0][seq[0]];
      for (int i = 1; i < len; ++i) {
        const int jump = std::abs(seq[i] - seq[i - 1]);
        e += c[i][seq[i]] + (jump == 0 ? 0.0 : jump == 1 ? p1 : p2);
      }
      best[len - 1][seq[len - 1]] = std::min(best[len - 1][seq[len - 1]], e);
    }
  }
  // normalisation telescopes to subtracting the previous raw minimum
  auto out = best;
  for (int x = 1; x < n; ++x) {
    const double m = *std::min_element(best[x - 1].begin(), best[x - 1].end());
    for (int d = 0; d < nd; ++d) out[x][d] = best[x][d] - m;
  }
  return out;
}

// --- plane fit oracle ------------------------------------------------------

PlaneFn2D ls_on(const std::vector<planefit::PixelSample>& s, const std::vector<std::uint8_t>& keep) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (keep[i]) idx.push_back(static_cast<int>(i));
  Eigen::MatrixXd A(idx.size(), 3);
  Eigen::VectorXd b(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    A.row(static_cast<Eigen::Index>(r)) << s[idx[r]].u, s[idx[r]].v, 1.0;
    b(static_cast<Eigen::Index>(r)) = s[idx[r]].d;
  }
  const Eigen::Vector3d x = A.colPivHouseholderQr().solve(b);
  return {x(0), x(1), x(2)};
}

// --- shared fixtures -------------------------------------------------------

superpixel::SegmentationState random_refined(int w, int h, int k, std::uint32_t seed) {
  ColorImage img(w, h);
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255), wobble(-3, 3);
  const int blobs = 6;
  std::vector<Rgb> pal(blobs * blobs);
  for (auto& c : pal)
    c = {static_cast<std::uint8_t>(byte(rng)), static_cast<std::uint8_t>(byte(rng)),
         static_cast<std::uint8_t>(byte(rng))};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int cx = std::clamp((x + wobble(rng)) * blobs / w, 0, blobs - 1);
      const int cy = std::clamp((y + wobble(rng)) * blobs / h, 0, blobs - 1);
      img.at(x, y) = pal[cy * blobs + cx];
      if (byte(rng) < 40) img.at(x, y) = {static_cast<std::uint8_t>(byte(rng)), 0, 0};
    }
  auto st = superpixel::init_grid(img, k, 3);
  return superpixel::refine(st, nullptr, {}, superpixel::default_weights(st.base_side, false),
                            superpixel::RefineParams{3});
}

// Random texture pair with constant disparity `shift`.
void textured_pair(int w, int h, int shift, ColorImage& left, ColorImage& right) {
  left = ColorImage(w, h);
  right = ColorImage(w, h);
  std::mt19937 rng(99);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<std::uint8_t> tex(static_cast<std::size_t>(w + shift) * h);
  for (auto& t : tex) t = static_cast<std::uint8_t>(byte(rng));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t row = static_cast<std::size_t>(y) * (w + shift);
      const auto a = tex[row + x], b = tex[row + x + shift];
      left.at(x, y) = {a, a, a};
      right.at(x, y) = {b, b, b};
    }
}

}  // namespace

int main() {
  const fs::path root = fixtures::scratch_dir("acceptance");
  std::printf("acceptance checks\n");

  // Synthetic three-plane scene end to end.
  criterion("synthetic scene: >=95% pixels within 0.5 px, 3 surfaces, <10 s single-threaded",
            [&](std::string& detail) {
              const auto scene = fixtures::make_plane_scene(0.2, 7, 240, 180);
              const fs::path dir = fixtures::scratch_dir("acceptance/scene");
              auto cfg = scene_config(scene, dir);
              cfg.workers = 1;
              const auto t0 = Clock::now();
              const auto res = pp::run_pipeline(cfg);
              const double secs = seconds_since(t0);
              const auto& fr = res.frames.at(0);
              const auto pred = eval::render_disparity(fr.state.width, fr.state.height, fr.state.labels, fr.planes);
              std::size_t good = 0;
              for (std::size_t i = 0; i < pred.disp.size(); ++i)
                if (DisparityMap::is_valid(pred.disp[i]) && std::abs(pred.disp[i] - scene.gt.disp[i]) <= 0.5f)
                  ++good;
              const double frac = static_cast<double>(good) / static_cast<double>(pred.disp.size());
              const auto surfaces = res.labeling.surfaces.size();
              detail = fmt("%.2f%% within 0.5 px, %zu surfaces, %.2f s", 100 * frac, surfaces, secs);
              return frac >= 0.95 && surfaces == 3 && secs < 10.0;
            });

  criterion("SGM scanline aggregation equals exhaustive path enumeration (width<=6, dmax<=3)",
            [&](std::string& detail) {
              std::mt19937 rng(2024);
              std::uniform_int_distribution<int> cost(0, 50);
              std::size_t compared = 0, mismatched = 0;
              for (int trial = 0; trial < 200; ++trial) {
                const int w = 1 + trial % 6, nd = 1 + (trial / 6) % 3;
                sgm::CostVolume v(w, 1, nd);
                for (auto& c : v.costs) c = static_cast<float>(cost(rng));
                const double p1 = 1 + trial % 4, p2 = p1 + trial % 9;
                std::vector<std::vector<double>> fwd(w, std::vector<double>(nd));
                for (int x = 0; x < w; ++x)
                  for (int d = 0; d < nd; ++d) fwd[x][d] = v.at(x, 0, d);
                const std::vector<std::vector<double>> bwd(fwd.rbegin(), fwd.rend());
                const sgm::Direction r[] = {{1, 0}}, l[] = {{-1, 0}};
                const auto a = sgm::aggregate_paths(v, p1, p2, r);
                const auto b = sgm::aggregate_paths(v, p1, p2, l);
                const auto of = enumerate_paths(fwd, p1, p2), ob = enumerate_paths(bwd, p1, p2);
                for (int x = 0; x < w; ++x)
                  for (int d = 0; d < nd; ++d) {
                    compared += 2;
                    mismatched += a.at(x, 0, d) != of[x][d];
                    mismatched += b.at(x, 0, d) != ob[w - 1 - x][d];
                  }
              }
              detail = fmt("%zu entries compared, %zu mismatches", compared, mismatched);
              return mismatched == 0;
            });

  criterion("plane fit: noiseless recovery <= 1e-9 relative", [&](std::string& detail) {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> coef(-0.3, 0.3), off(5, 80);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      const PlaneFn2D p{coef(rng), coef(rng), off(rng)};
      std::vector<planefit::PixelSample> s;
      for (int y = 0; y < 15; ++y)
        for (int x = 0; x < 15; ++x) s.push_back({100.0 + x, 50.0 + y, p(100.0 + x, 50.0 + y)});
      const auto r = planefit::fit_segment(s, planefit::FitParams{});
      if (r.failed()) return detail = "fit failed", false;
      worst = std::max({worst, std::abs(r.plane->a - p.a) / std::max(1.0, std::abs(p.a)),
                        std::abs(r.plane->b - p.b) / std::max(1.0, std::abs(p.b)),
                        std::abs(r.plane->c - p.c) / std::max(1.0, std::abs(p.c))});
    }
    detail = fmt("worst relative coefficient error %.3g over 100 planes", worst);
    return worst <= 1e-9;
  });

  criterion("plane fit: 30% outliers within 0.1 px of least squares on true inliers, 100 trials",
            [&](std::string& detail) {
              double worst = 0.0;
              int bad = 0;
              for (int trial = 0; trial < 100; ++trial) {
                std::mt19937 rng(1000 + trial);
                std::uniform_real_distribution<double> coef(-0.3, 0.3), off(10, 60), noise(-0.3, 0.3),
                    junk(0, 80), unit(0, 1);
                const PlaneFn2D truth{coef(rng), coef(rng), off(rng)};
                std::vector<planefit::PixelSample> s;
                std::vector<std::uint8_t> inlier;
                for (int y = 0; y < 20; ++y)
                  for (int x = 0; x < 20; ++x) {
                    const double d0 = truth(x, y);
                    if (unit(rng) < 0.3) {
                      double d;
                      do d = junk(rng);
                      while (std::abs(d - d0) < 2.0);
                      s.push_back({double(x), double(y), d});
                      inlier.push_back(0);
                    } else {
                      s.push_back({double(x), double(y), d0 + noise(rng)});
                      inlier.push_back(1);
                    }
                  }
                planefit::FitParams params;
                params.seed = planefit::segment_seed(planefit::kDefaultSeed, trial);
                const auto r = planefit::fit_segment(s, params);
                if (r.failed()) {
                  ++bad;
                  continue;
                }
                const auto oracle = ls_on(s, inlier);
                double gap = 0.0;
                for (const auto& p : s) gap = std::max(gap, std::abs((*r.plane)(p.u, p.v) - oracle(p.u, p.v)));
                worst = std::max(worst, gap);
                if (gap > 0.1) ++bad;
              }
              detail = fmt("worst gap %.4f px, %d trials out of tolerance", worst, bad);
              return bad == 0;
            });

  criterion("topology: polygon rasterization equals the segment mask on 100 refined partitions",
            [&](std::string& detail) {
              std::size_t cells = 0, mismatched = 0;
              for (int t = 0; t < 100; ++t) {
                const int w = 40 + (t % 5) * 8, h = 30 + (t % 3) * 10;
                const auto st = random_refined(w, h, 8 + t % 12, 500 + t);
                const topology::LabelView view{w, h, st.labels};
                for (const auto& poly : topology::extract_all_polygons(view)) {
                  ++cells;
                  const auto raster = topology::rasterize(poly, w, h);
                  for (std::size_t i = 0; i < raster.size(); ++i)
                    if ((raster[i] != 0) != (st.labels[i] == poly.cell)) {
                      ++mismatched;
                      break;
                    }
                }
              }
              detail = fmt("%zu polygons, %zu mismatched", cells, mismatched);
              return cells > 0 && mismatched == 0;
            });

  criterion("projection: vertex round trip and plane sampling <= 1e-9 relative", [&](std::string& detail) {
    const projection::CameraRig rig{721.5377, 609.5593, 172.854, 0.5372};
    auto rel = [](double got, double want) { return std::abs(got - want) / std::max(1.0, std::abs(want)); };
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> u(0, 1242), v(0, 375), d(0.5, 200), coef(-0.2, 0.2), off(5, 80);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double uu = u(rng), vv = v(rng), dd = d(rng);
      const auto back = projection::project_to_image(projection::vertex_to_3d(uu, vv, dd, rig), rig);
      worst = std::max({worst, rel(back.x(), uu), rel(back.y(), vv), rel(back.z(), dd)});
    }
    for (int t = 0; t < 100; ++t) {
      const PlaneFn2D p{coef(rng), coef(rng), off(rng)};
      const auto z = projection::plane2d_to_3d(p, rig);
      for (int s = 0; s < 100; ++s) {
        const double uu = u(rng), vv = v(rng), dd = p(uu, vv);
        if (dd <= 0.1) continue;
        const auto x = projection::vertex_to_3d(uu, vv, dd, rig);
        worst = std::max(worst, rel(z(x.x(), x.y()), x.z()));
      }
    }
    detail = fmt("worst relative error %.3g", worst);
    return worst <= 1e-9;
  });

  criterion("projection: point-plane distance matches the normal-form oracle <= 1e-12, 1000 cases",
            [&](std::string& detail) {
              std::mt19937 rng(12);
              std::uniform_real_distribution<double> c(-2, 2), x(-50, 50);
              double worst = 0.0;
              for (int i = 0; i < 1000; ++i) {
                const PlaneFn3D p{c(rng), c(rng), 10 * c(rng)};
                const Eigen::Vector3d q(x(rng), x(rng), x(rng));
                const Eigen::Vector3d n(p.a, p.b, -1.0);
                const double oracle = std::abs(n.dot(q) + p.c) / n.norm();
                worst = std::max(worst, std::abs(projection::point_plane_distance(q, p) - oracle) /
                                            std::max(1.0, oracle));
              }
              detail = fmt("worst relative error %.3g", worst);
              return worst <= 1e-12;
            });

  // CRF merge on a refined partition of the scene.
  const auto crf_scene = fixtures::make_plane_scene(0.0, 7, 120, 90);
  auto crf_state = superpixel::init_grid(crf_scene.image, 40, 3);
  crf_state = superpixel::refine(crf_state, nullptr, {}, superpixel::default_weights(crf_state.base_side, false));
  const auto crf_fit = planefit::fit_all(crf_state, crf_scene.gt, planefit::FitParams{});
  const auto crf_cells = projection::build_planecells(crf_state, crf_scene.image, crf_fit.planes, crf_scene.rig).cells;
  const auto graph = crf::build_graph(crf_cells, crf_scene.rig);
  crf::MergeStats stats;
  const auto labeling = crf::greedy_merge(graph, crf::MergeParams{}, nullptr, &stats);

  criterion("CRF: energy strictly increases per accepted merge", [&](std::string& detail) {
    bool ok = stats.energy_trace.size() == static_cast<std::size_t>(stats.merges) + 1;
    for (std::size_t k = 1; k < stats.energy_trace.size(); ++k) ok &= stats.energy_trace[k] > stats.energy_trace[k - 1];
    detail = fmt("%d merges, energy %.1f -> %.1f", stats.merges, stats.energy_trace.front(),
                 stats.energy_trace.back());
    return ok && stats.merges > 0;
  });

  criterion("CRF: idempotence", [&](std::string& detail) {
    crf::MergeStats again;
    const auto second = crf::greedy_merge(graph, crf::MergeParams{}, &labeling, &again);
    detail = fmt("%d merges on rerun", again.merges);
    return again.merges == 0 && second == labeling;
  });

  criterion("CRF: perpendicular planes do not merge", [&](std::string& detail) {
    // level floor below a fronto-parallel wall, both the same colour
    const projection::CameraRig rig{200.0, 60.0, 40.0, 0.5};
    const int w = 120, h = 80;
    const double wall_d = rig.f * rig.baseline / 10.0;
    const PlaneFn2D wall{0, 0, wall_d}, floor{0.0, rig.baseline, -rig.cv * rig.baseline};
    const int split = static_cast<int>(std::ceil(rig.cv + wall_d / rig.baseline));
    ColorImage img(w, h, Rgb{90, 90, 90});
    std::vector<std::int32_t> labels(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) labels[static_cast<std::size_t>(y) * w + x] = y < split ? 0 : 1;
    const auto st = superpixel::make_state(img, labels);
    const auto cells = projection::build_planecells(st, img, PlaneMap{wall, floor}, rig).cells;
    const auto g = crf::build_graph(cells, rig);
    const auto lab = crf::greedy_merge(g, crf::MergeParams{});
    detail = fmt("%zu cells, %zu edges, %zu surfaces", cells.size(), g.edges.size(), lab.surfaces.size());
    return cells.size() == 2 && g.edges.size() == 1 && lab.surfaces.size() == 2;
  });

  criterion("CRF: byte-identical labeling across runs", [&](std::string& detail) {
    const auto a = crf::greedy_merge(graph, crf::MergeParams{});
    const auto b = crf::greedy_merge(crf::build_graph(crf_cells, crf_scene.rig), crf::MergeParams{});
    const bool same = a == labeling && b == labeling;
    detail = fmt("%zu surfaces, labels %s", labeling.surfaces.size(), same ? "identical" : "differ");
    return same;
  });

  criterion("size: serialized map <= 10% of the dense float32 point cloud (synthetic frame)",
            [&](std::string& detail) {
              const auto scene = fixtures::make_plane_scene(0.2, 7, 240, 180);
              const auto res = pp::run_pipeline(scene_config(scene, fixtures::scratch_dir("acceptance/size")));
              const auto dense = eval::dense_cloud_bytes(res.frames.at(0).disparity.valid_count());
              const double ratio = static_cast<double>(res.map_bytes) / static_cast<double>(dense);
              detail = fmt("map %zu bytes, dense %zu bytes, ratio %.4f", res.map_bytes, dense, ratio);
              return ratio <= 0.10;
            });

  // KITTI-sized frame, external disparity so that only segmentation and fitting are timed.
  criterion("runtime: segmentation+fit <= 2 s and merge <= 1 s on a KITTI-sized frame",
            [&](std::string& detail) {
              const auto scene = fixtures::make_plane_scene(0.2, 7, 1242, 375);
              const fs::path dir = fixtures::scratch_dir("acceptance/kitti_size");
              auto cfg = scene_config(scene, dir);
              cfg.cells = 765;
              const auto res = pp::run_pipeline(cfg);
              const auto& t = res.frames.at(0).timings;
              const double seg_fit = t.segment_s + t.fit_s;
              detail = fmt("%zu cells, segmentation %.3f s + fit %.3f s = %.3f s, merge %.3f s; map %zu bytes "
                           "per frame (reference figure 45 kB, not asserted)",
                           res.cells.size(), t.segment_s, t.fit_s, seg_fit, res.merge_s, res.map_bytes);
              return seg_fit <= 2.0 && res.merge_s <= 1.0;
            });

  criterion("determinism: byte-identical map for workers 1, 2 and 4 (stereo and external disparity)",
            [&](std::string& detail) {
              const fs::path dir = fixtures::scratch_dir("acceptance/determinism");
              const auto scene = fixtures::make_plane_scene(0.2, 7, 240, 180);
              auto ext = scene_config(scene, dir);
              ColorImage left, right;
              textured_pair(160, 96, 7, left, right);
              io::write_png(left, dir / "tex_left.png");
              io::write_png(right, dir / "tex_right.png");
              pp::PipelineConfig stereo;
              stereo.left = (dir / "tex_left.png").string();
              stereo.right = (dir / "tex_right.png").string();
              stereo.rig = projection::CameraRig{150.0, 80.0, 48.0, 0.5};
              stereo.cells = 24;
              stereo.sgm.d_max = 24;
              bool same = true;
              std::size_t bytes[2] = {0, 0};
              int idx = 0;
              for (auto* cfg : {&ext, &stereo}) {
                std::vector<std::uint8_t> first;
                for (int workers : {1, 2, 4}) {
                  cfg->workers = workers;
                  cfg->out_dir = (dir / fmt("out_%d_%d", idx, workers)).string();
                  pp::run_pipeline(*cfg);
                  auto b = slurp(fs::path(cfg->out_dir) / "map.pcel");
                  if (workers == 1)
                    first = std::move(b);
                  else
                    same &= b == first;
                }
                bytes[idx++] = first.size();
                same &= !first.empty();
              }
              detail = fmt("maps of %zu and %zu bytes %s", bytes[0], bytes[1], same ? "identical" : "differ");
              return same;
            });

  // Optional dataset smoke test.
  const char* kl = std::getenv("PLANECELL_KITTI_LEFT");
  const char* kr = std::getenv("PLANECELL_KITTI_RIGHT");
  const char* kg = std::getenv("PLANECELL_KITTI_GT");
  const char* kc = std::getenv("PLANECELL_KITTI_CALIB");
  if (kl && kr && kg && kc) {
    criterion("dataset smoke: Table-style row and monotone curve", [&](std::string& detail) {
      pp::PipelineConfig cfg;
      cfg.left = kl;
      cfg.right = kr;
      cfg.eval_gt = kg;
      cfg.calib = kc;
      cfg.out_dir = (root / "kitti").string();
      const auto res = pp::run_pipeline(cfg);
      const auto& c = res.depth_curves.at(0);
      bool monotone = true;
      for (std::size_t k = 1; k < c.fractions.size(); ++k) monotone &= c.fractions[k] >= c.fractions[k - 1];
      detail = eval::format_curve_row("kitti depth", c);
      return monotone;
    });
  } else {
    std::printf("SKIP dataset smoke: set PLANECELL_KITTI_LEFT, _RIGHT, _GT and _CALIB to run it\n");
  }

  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
