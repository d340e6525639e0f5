#include "planecell/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "planecell/error.hpp"

namespace planecell::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <class Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* first = v.data();
  if (!v.empty() && v[0] == '+') ++first;
  auto [end, ec] = std::from_chars(first, v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || v.empty())
    throw ParameterError(key + ": not a number: '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || v.empty())
    throw ParameterError(key + ": not an integer: '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  int base = 10;
  std::string_view s = v;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    s.remove_prefix(2);
    base = 16;
  }
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), out, base);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty())
    throw ParameterError(key + ": not an unsigned integer: '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ParameterError(key + ": not a boolean: '" + v + "'");
}

int narrow(const std::string& key, long long v) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ParameterError(key + ": out of range");
  return static_cast<int>(v);
}

projection::CameraRig& rig_of(PipelineConfig& cfg) {
  if (!cfg.rig) cfg.rig = projection::CameraRig{};
  return *cfg.rig;
}

}  // namespace

void PipelineConfig::validate() const {
  if (left.empty()) throw ParameterError("left image path is required");
  if (right.empty() && disparity.empty())
    throw ParameterError("either a right image or an external disparity map is required");
  if (calib.empty() && !rig) throw ParameterError("a calibration file or camera rig is required");
  if (rig && calib.empty()) rig->validate();
  if (frame_count < 1) throw ParameterError("frames must be >= 1");
  if (first_frame < 0) throw ParameterError("first frame must be >= 0");
  if (cells < 2) throw ParameterError("cells must be >= 2");
  if (levels < 1) throw ParameterError("levels must be >= 1");
  if (lambda_reg && !(*lambda_reg >= 0.0)) throw ParameterError("lambda-reg must be >= 0");
  if (!(lambda_depth >= 0.0)) throw ParameterError("lambda-depth must be >= 0");
  if (refine_passes < 1) throw ParameterError("refine-passes must be >= 1");
  if (!(sgm.lambda_grad >= 0.0)) throw ParameterError("lambda-grad must be >= 0");
  if (!(sgm.p1 >= 0.0) || !(sgm.p2 >= sgm.p1)) throw ParameterError("need 0 <= p1 <= p2");
  if (sgm.d_max < 1) throw ParameterError("dmax must be >= 1");
  if (sgm.window < 3 || sgm.window % 2 == 0) throw ParameterError("window must be odd and >= 3");
  if (sgm.directions != 4 && sgm.directions != 8) throw ParameterError("directions must be 4 or 8");
  if (!(fit.inlier_thresh > 0.0)) throw ParameterError("inlier-thresh must be > 0");
  if (!(fit.target_ratio > 0.0 && fit.target_ratio <= 1.0))
    throw ParameterError("target-ratio must be in (0, 1]");
  if (fit.max_iters < 1) throw ParameterError("fit-iters must be >= 1");
  if (!(merge_params.angle_gate_deg >= 0.0 && merge_params.angle_gate_deg <= 90.0))
    throw ParameterError("angle-gate must be in [0, 90]");
  if (!(merge_params.offset_gate >= 0.0)) throw ParameterError("offset-gate must be >= 0");
  if (merge_params.max_iters < 1) throw ParameterError("merge-iters must be >= 1");
  if (workers < 1) throw ParameterError("workers must be >= 1");
  if (out_dir.empty()) throw ParameterError("out-dir must not be empty");
  if (frame_count > 1 && left.find('%') == std::string::npos)
    throw ParameterError("multi-frame runs need a frame field (e.g. %06d) in the left path");
}

void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  using Setter = std::function<void(PipelineConfig&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"left", [](auto& c, const auto& v) { c.left = v; }},
      {"right", [](auto& c, const auto& v) { c.right = v; }},
      {"disparity", [](auto& c, const auto& v) { c.disparity = v; }},
      {"disparity-format",
       [](auto& c, const auto& v) { c.disparity_format = io::parse_disparity_format(v); }},
      {"calib", [](auto& c, const auto& v) { c.calib = v; }},
      {"poses", [](auto& c, const auto& v) { c.poses = v; }},
      {"eval-gt", [](auto& c, const auto& v) { c.eval_gt = v; }},
      {"gt-format", [](auto& c, const auto& v) { c.gt_format = io::parse_disparity_format(v); }},
      {"first-frame", [](auto& c, const auto& v) { c.first_frame = narrow("first-frame", to_int("first-frame", v)); }},
      {"frames", [](auto& c, const auto& v) { c.frame_count = narrow("frames", to_int("frames", v)); }},
      {"f", [](auto& c, const auto& v) { rig_of(c).f = to_double("f", v); }},
      {"cu", [](auto& c, const auto& v) { rig_of(c).cu = to_double("cu", v); }},
      {"cv", [](auto& c, const auto& v) { rig_of(c).cv = to_double("cv", v); }},
      {"baseline", [](auto& c, const auto& v) { rig_of(c).baseline = to_double("baseline", v); }},
      {"cells", [](auto& c, const auto& v) { c.cells = narrow("cells", to_int("cells", v)); }},
      {"levels", [](auto& c, const auto& v) { c.levels = narrow("levels", to_int("levels", v)); }},
      {"lambda-reg", [](auto& c, const auto& v) { c.lambda_reg = to_double("lambda-reg", v); }},
      {"lambda-depth", [](auto& c, const auto& v) { c.lambda_depth = to_double("lambda-depth", v); }},
      {"refine-passes",
       [](auto& c, const auto& v) { c.refine_passes = narrow("refine-passes", to_int("refine-passes", v)); }},
      {"lambda-grad", [](auto& c, const auto& v) { c.sgm.lambda_grad = to_double("lambda-grad", v); }},
      {"p1", [](auto& c, const auto& v) { c.sgm.p1 = to_double("p1", v); }},
      {"p2", [](auto& c, const auto& v) { c.sgm.p2 = to_double("p2", v); }},
      {"dmax", [](auto& c, const auto& v) { c.sgm.d_max = narrow("dmax", to_int("dmax", v)); }},
      {"window", [](auto& c, const auto& v) { c.sgm.window = narrow("window", to_int("window", v)); }},
      {"directions",
       [](auto& c, const auto& v) { c.sgm.directions = narrow("directions", to_int("directions", v)); }},
      {"lr-tol", [](auto& c, const auto& v) { c.sgm.lr_tolerance = to_double("lr-tol", v); }},
      {"inlier-thresh", [](auto& c, const auto& v) { c.fit.inlier_thresh = to_double("inlier-thresh", v); }},
      {"target-ratio", [](auto& c, const auto& v) { c.fit.target_ratio = to_double("target-ratio", v); }},
      {"fit-iters", [](auto& c, const auto& v) { c.fit.max_iters = narrow("fit-iters", to_int("fit-iters", v)); }},
      {"merge", [](auto& c, const auto& v) { c.merge = to_bool("merge", v); }},
      {"angle-gate", [](auto& c, const auto& v) { c.merge_params.angle_gate_deg = to_double("angle-gate", v); }},
      {"offset-gate", [](auto& c, const auto& v) { c.merge_params.offset_gate = to_double("offset-gate", v); }},
      {"merge-iters",
       [](auto& c, const auto& v) { c.merge_params.max_iters = narrow("merge-iters", to_int("merge-iters", v)); }},
      {"seed", [](auto& c, const auto& v) { c.seed = to_u64("seed", v); }},
      {"workers", [](auto& c, const auto& v) { c.workers = narrow("workers", to_int("workers", v)); }},
      {"out-dir", [](auto& c, const auto& v) { c.out_dir = v; }},
      {"export-ply", [](auto& c, const auto& v) { c.export_ply = to_bool("export-ply", v); }},
      {"color-mode", [](auto& c, const auto& v) { c.color_mode = io::parse_color_mode(v); }},
      {"export-json", [](auto& c, const auto& v) { c.export_json = to_bool("export-json", v); }},
      {"debug", [](auto& c, const auto& v) { c.debug_images = to_bool("debug", v); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ParameterError("unknown parameter: " + key);
  it->second(cfg, value);
}

void apply_config_text(PipelineConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(n) + ": expected key = value");
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ParameterError& e) {
      throw ParseError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void apply_config_file(PipelineConfig& cfg, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

std::string frame_path(const std::string& pattern, int frame) {
  const auto pct = pattern.find('%');
  if (pct == std::string::npos) return pattern;
  std::size_t end = pct + 1;
  while (end < pattern.size() && (pattern[end] == '0' || (pattern[end] >= '1' && pattern[end] <= '9'))) ++end;
  if (end >= pattern.size() || pattern[end] != 'd')
    throw ParameterError("path pattern needs a %d-style field: " + pattern);
  const std::string spec = pattern.substr(pct, end - pct + 1);
  char buf[64];
  std::snprintf(buf, sizeof buf, spec.c_str(), frame);
  return pattern.substr(0, pct) + buf + pattern.substr(end + 1);
}

FrameResult process_frame(const ColorImage& left, const GrayImage* right,
                          const DisparityMap* external_disparity, std::int32_t frame,
                          const projection::CameraRig& rig, const PipelineConfig& cfg) {
  FrameResult out;
  out.frame = frame;
  superpixel::RefineParams rp;
  rp.max_passes = cfg.refine_passes;

  auto t0 = Clock::now();
  superpixel::EnergyWeights w;
  out.state = stage("segment", [&] {
    auto state = superpixel::init_grid(left, cfg.cells, cfg.levels);
    w = superpixel::default_weights(state.base_side, false);
    if (cfg.lambda_reg) w.lambda_reg = *cfg.lambda_reg;
    return superpixel::refine(std::move(state), nullptr, {}, w, rp);
  });
  out.timings.segment_s += seconds_since(t0);

  t0 = Clock::now();
  out.disparity = stage("stereo", [&] {
    if (external_disparity) {
      if (external_disparity->width != left.width || external_disparity->height != left.height)
        throw ParameterError("disparity map size differs from the left image");
      return *external_disparity;
    }
    if (!right) throw ParameterError("no right image");
    auto params = cfg.sgm;
    params.workers = cfg.workers;
    return sgm::compute_disparity(to_gray(left), *right, params);
  });
  out.timings.stereo_s = seconds_since(t0);

  auto fit = cfg.fit;
  fit.seed = planefit::segment_seed(cfg.seed, frame);
  fit.workers = cfg.workers;

  t0 = Clock::now();
  auto first = stage("fit", [&] { return planefit::fit_all(out.state, out.disparity, fit); });
  out.timings.fit_s += seconds_since(t0);

  t0 = Clock::now();
  out.state = stage("refine", [&] {
    w.lambda_depth = cfg.lambda_depth;
    return superpixel::refine(std::move(out.state), &out.disparity, first.planes, w, rp);
  });
  out.timings.segment_s += seconds_since(t0);

  t0 = Clock::now();
  auto second = stage("refit", [&] { return planefit::fit_all(out.state, out.disparity, fit); });
  out.planes = std::move(second.planes);
  out.failed_segments = std::move(second.failed);
  out.timings.fit_s += seconds_since(t0);

  t0 = Clock::now();
  out.cells = stage("cells", [&] {
    auto built = projection::build_planecells(out.state, left, out.planes, rig, frame);
    return std::move(built.cells);
  });
  out.timings.cells_s = seconds_since(t0);
  return out;
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  stage("config", [&] {
    cfg.validate();
    return 0;
  });
  PipelineResult res;
  const fs::path out_dir = cfg.out_dir;
  stage("output", [&] {
    fs::create_directories(out_dir);
    return 0;
  });

  const projection::CameraRig rig = stage("calib", [&] {
    if (!cfg.calib.empty()) return io::load_kitti_calib(cfg.calib).rig;
    return *cfg.rig;
  });

  std::vector<projection::Pose> poses;
  if (!cfg.poses.empty()) {
    poses = stage("poses", [&] { return io::load_poses(cfg.poses); });
    if (static_cast<std::size_t>(cfg.first_frame + cfg.frame_count) > poses.size())
      throw StageError("poses", "pose file has " + std::to_string(poses.size()) +
                                    " entries, frames up to " +
                                    std::to_string(cfg.first_frame + cfg.frame_count - 1) + " requested");
  }

  char msg[256];
  for (int k = 0; k < cfg.frame_count; ++k) {
    const int frame = cfg.first_frame + k;
    ColorImage left = stage("load", [&] { return io::load_color_image(frame_path(cfg.left, frame)); });
    std::optional<GrayImage> right;
    std::optional<DisparityMap> disp;
    stage("load", [&] {
      if (!cfg.disparity.empty()) {
        disp = io::load_disparity(frame_path(cfg.disparity, frame), cfg.disparity_format, left.width,
                                  left.height);
      } else {
        right = io::load_gray_image(frame_path(cfg.right, frame));
      }
      return 0;
    });
    FrameResult fr = process_frame(left, right ? &*right : nullptr, disp ? &*disp : nullptr,
                                   static_cast<std::int32_t>(frame), rig, cfg);

    std::snprintf(msg, sizeof msg,
                  "frame %d: %d segments, %zu cells, %zu failed fits, segment %.3fs stereo %.3fs fit %.3fs",
                  frame, fr.state.segment_count(), fr.cells.size(), fr.failed_segments.size(),
                  fr.timings.segment_s, fr.timings.stereo_s, fr.timings.fit_s);
    res.log.emplace_back(msg);

    if (!cfg.eval_gt.empty()) {
      stage("eval", [&] {
        const auto gt = io::load_disparity(frame_path(cfg.eval_gt, frame), cfg.gt_format, left.width,
                                           left.height);
        const auto pred = eval::render_disparity(fr.state.width, fr.state.height, fr.state.labels, fr.planes);
        auto curve = eval::depth_error_curve(pred, gt, rig);
        char name[64];
        std::snprintf(name, sizeof name, "curve_depth_%06d.csv", frame);
        eval::write_curve_csv(curve, out_dir / name);
        res.log.push_back(eval::format_curve_row("frame " + std::to_string(frame) + " depth", curve));
        const auto dcurve = eval::disparity_error_curve(pred, gt);
        std::snprintf(name, sizeof name, "curve_disparity_%06d.csv", frame);
        eval::write_curve_csv(dcurve, out_dir / name);
        res.log.push_back(eval::format_curve_row("frame " + std::to_string(frame) + " disparity", dcurve));
        res.depth_curves.push_back(std::move(curve));
        return 0;
      });
    }

    if (cfg.debug_images) {
      stage("export", [&] {
        char name[64];
        std::snprintf(name, sizeof name, "labels_%06d.png", frame);
        io::write_label_png(fr.state.width, fr.state.height, fr.state.labels, out_dir / name);
        std::snprintf(name, sizeof name, "overlay_%06d.png", frame);
        io::write_boundary_overlay(left, fr.state.labels, out_dir / name);
        std::snprintf(name, sizeof name, "disparity_%06d.pfm", frame);
        io::write_pfm(fr.disparity, out_dir / name);
        return 0;
      });
    }

    std::vector<projection::Planecell> posed = stage("pose", [&] {
      if (poses.empty()) return fr.cells;
      return projection::apply_pose(fr.cells, poses[static_cast<std::size_t>(frame)]);
    });
    for (auto& c : posed) res.cells.push_back(std::move(c));
    res.frames.push_back(std::move(fr));
  }

  const auto t0 = Clock::now();
  stage("merge", [&] {
    res.graph = crf::build_graph(res.cells, rig, cfg.graph_params);
    if (cfg.merge) {
      res.labeling = crf::greedy_merge(res.graph, cfg.merge_params, nullptr, &res.merge_stats);
    } else {
      res.labeling = crf::make_labeling(res.graph, res.graph.labels);
    }
    return 0;
  });
  res.merge_s = seconds_since(t0);
  std::snprintf(msg, sizeof msg, "merge: %zu cells, %zu edges -> %zu surfaces, %d merges, %.3fs",
                res.cells.size(), res.graph.edges.size(), res.labeling.surfaces.size(),
                res.merge_stats.merges, res.merge_s);
  res.log.emplace_back(msg);

  stage("export", [&] {
    const std::vector<std::int32_t> none;
    res.map = io::make_map(res.cells, cfg.merge ? std::span<const std::int32_t>(res.labeling.surface_of)
                                                 : std::span<const std::int32_t>(none),
                           rig, static_cast<std::uint32_t>(cfg.frame_count));
    res.map_bytes = io::write_map(res.map, out_dir / "map.pcel");
    if (cfg.export_ply) io::write_ply(res.map, cfg.color_mode, out_dir / "map.ply");
    if (cfg.export_json) io::write_map_json(res.map, out_dir / "map.json");
    if (cfg.debug_images)
      for (const auto& fr : res.frames) {
        char name[64];
        std::snprintf(name, sizeof name, "polygons_%06d.svg", fr.frame);
        io::write_svg(res.map, fr.frame, fr.state.width, fr.state.height, out_dir / name);
      }
    std::size_t dense_points = 0;
    for (const auto& fr : res.frames) dense_points += fr.disparity.valid_count();
    const auto report = eval::size_report(res.map, res.map_bytes, eval::dense_cloud_bytes(dense_points));
    const std::string text = eval::format_report(report);
    std::ofstream(out_dir / "size_report.txt") << text;
    res.log.push_back(text);
    return 0;
  });
  return res;
}

}  // namespace planecell::pipeline
