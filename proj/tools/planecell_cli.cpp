// planecell: stereo pair (or external disparity) -> polygonal plane map.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "planecell/error.hpp"
#include "planecell/pipeline.hpp"

namespace pp = planecell::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Piecewise-planar map from rectified stereo"};
  app.set_version_flag("--version", "planecell 1.0");

  std::string config_path;
  app.add_option("--config", config_path, "key = value parameter file; flags override it");

  // Valued options, applied in this order after the config file.
  struct Valued {
    const char* key;
    const char* help;
    std::string value;
  };
  std::vector<Valued> valued = {
      {"left", "left image (PNG/PGM/PPM); may contain %06d for the frame", {}},
      {"right", "right image", {}},
      {"disparity", "external disparity map; skips the stereo matcher", {}},
      {"disparity-format", "kitti_png16 | pfm | raw_f32", {}},
      {"calib", "KITTI calib.txt", {}},
      {"f", "focal length in pixels (without --calib)", {}},
      {"cu", "principal point u (without --calib)", {}},
      {"cv", "principal point v (without --calib)", {}},
      {"baseline", "baseline in metres (without --calib)", {}},
      {"poses", "KITTI odometry pose file, one line per frame", {}},
      {"first-frame", "first frame number", {}},
      {"frames", "number of frames", {}},
      {"cells", "target superpixel count K", {}},
      {"levels", "block levels L", {}},
      {"lambda-reg", "regularisation weight (default 1/side^2)", {}},
      {"lambda-depth", "depth term weight after plane fitting", {}},
      {"refine-passes", "hill-climbing passes per level", {}},
      {"lambda-grad", "gradient weight in the matching cost", {}},
      {"p1", "small disparity change penalty", {}},
      {"p2", "large disparity change penalty", {}},
      {"dmax", "disparity levels", {}},
      {"window", "census window (odd)", {}},
      {"directions", "aggregation directions, 4 or 8", {}},
      {"lr-tol", "left-right check tolerance in pixels", {}},
      {"inlier-thresh", "plane inlier threshold in pixels", {}},
      {"target-ratio", "RANSAC early-exit inlier ratio", {}},
      {"fit-iters", "RANSAC iterations", {}},
      {"angle-gate", "merge normal gate in degrees", {}},
      {"offset-gate", "merge RMS gate in metres", {}},
      {"merge-iters", "merge passes", {}},
      {"seed", "RNG seed", {}},
      {"workers", "worker threads (results do not depend on it)", {}},
      {"color-mode", "rgb | height | surface", {}},
      {"eval-gt", "ground-truth disparity for evaluation", {}},
      {"gt-format", "format of --eval-gt", {}},
      {"out-dir", "output directory", {}},
  };
  for (auto& v : valued) app.add_option(std::string("--") + v.key, v.value, v.help);

  bool export_ply = false, export_json = false, debug = false, no_merge = false;
  auto* ply_flag = app.add_flag("--export-ply", export_ply, "write map.ply");
  auto* json_flag = app.add_flag("--export-json", export_json, "write map.json");
  auto* debug_flag = app.add_flag("--debug", debug, "write label, overlay, disparity and SVG dumps");
  auto* merge_flag = app.add_flag("--no-merge", no_merge, "skip surface merging");

  CLI11_PARSE(app, argc, argv);

  pp::PipelineConfig cfg;
  try {
    if (!config_path.empty()) pp::apply_config_file(cfg, config_path);
    for (const auto& v : valued)
      if (app.get_option(std::string("--") + v.key)->count() > 0) pp::set_config_value(cfg, v.key, v.value);
    if (ply_flag->count() > 0) cfg.export_ply = export_ply;
    if (json_flag->count() > 0) cfg.export_json = export_json;
    if (debug_flag->count() > 0) cfg.debug_images = debug;
    if (merge_flag->count() > 0) cfg.merge = !no_merge;
  } catch (const std::exception& e) {
    std::cerr << "[config] " << e.what() << "\n";
    return 2;
  }

  try {
    const auto res = pp::run_pipeline(cfg);
    for (const auto& line : res.log) std::cout << line << (line.ends_with('\n') ? "" : "\n");
    std::cout << "wrote " << (std::filesystem::path(cfg.out_dir) / "map.pcel").string() << " ("
              << res.map_bytes << " bytes)\n";
  } catch (const pp::StageError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "[internal] " << e.what() << "\n";
    return 1;
  }
  return 0;
}
