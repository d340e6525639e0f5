#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "planecell/crf_merge.hpp"
#include "planecell/eval.hpp"
#include "planecell/image.hpp"
#include "planecell/io_formats.hpp"
#include "planecell/plane_fit.hpp"
#include "planecell/projection.hpp"
#include "planecell/stereo_sgm.hpp"
#include "planecell/superpixel.hpp"

namespace planecell::pipeline {

namespace fs = std::filesystem;

/// Failure inside one pipeline stage; what() starts with "[stage] ".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& msg)
      : std::runtime_error("[" + stage + "] " + msg), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineConfig {
  // Inputs. Paths may hold one printf-style integer field (e.g. %06d) that
  // is filled with the frame number.
  std::string left;
  std::string right;
  std::string disparity;  // external disparity; skips the matcher when set
  io::DisparityFormat disparity_format = io::DisparityFormat::KittiPng16;
  std::string calib;
  std::string poses;
  std::string eval_gt;
  io::DisparityFormat gt_format = io::DisparityFormat::KittiPng16;
  int first_frame = 0;
  int frame_count = 1;
  std::optional<projection::CameraRig> rig;  // used when no calibration file is given

  // Segmentation
  int cells = 765;
  int levels = 3;
  std::optional<double> lambda_reg;  // default 1 / side^2
  double lambda_depth = 0.1;
  int refine_passes = 5;

  sgm::SgmParams sgm;
  planefit::FitParams fit;

  bool merge = true;
  crf::MergeParams merge_params;
  crf::GraphParams graph_params;

  std::uint64_t seed = planefit::kDefaultSeed;
  int workers = 1;

  // Outputs
  std::string out_dir = "out";
  bool export_ply = false;
  io::ColorMode color_mode = io::ColorMode::Rgb;
  bool export_json = false;
  bool debug_images = false;

  /// Throws ParameterError on the first invalid value.
  void validate() const;
};

/// Sets one parameter by its long flag name without dashes ("lambda-reg").
/// Throws ParameterError for unknown keys or malformed values.
void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value);

/// Applies "key = value" lines ('#' comments) to a config. Keys use the
/// long flag names without dashes, e.g. "lambda-reg = 0.01".
void apply_config_text(PipelineConfig& cfg, const std::string& text, const std::string& origin);
void apply_config_file(PipelineConfig& cfg, const fs::path& path);

/// Expands the frame field of a path pattern.
std::string frame_path(const std::string& pattern, int frame);

struct FrameTimings {
  double segment_s = 0.0;  // both refinement passes
  double stereo_s = 0.0;
  double fit_s = 0.0;      // both fits
  double cells_s = 0.0;
};

struct FrameResult {
  std::int32_t frame = 0;
  superpixel::SegmentationState state;
  DisparityMap disparity;  // matcher output or loaded map
  PlaneMap planes;
  std::vector<std::int32_t> failed_segments;
  std::vector<projection::Planecell> cells;  // camera frame
  FrameTimings timings;
};

/// Stages 1-6 for one frame: colour-only refinement, disparity, plane fit,
/// depth-aware refinement, refit and polygon/plane lifting.
FrameResult process_frame(const ColorImage& left, const GrayImage* right,
                          const DisparityMap* external_disparity, std::int32_t frame,
                          const projection::CameraRig& rig, const PipelineConfig& cfg);

struct PipelineResult {
  std::vector<FrameResult> frames;
  std::vector<projection::Planecell> cells;  // posed
  crf::CellGraph graph;
  crf::SurfaceLabeling labeling;
  crf::MergeStats merge_stats;
  double merge_s = 0.0;
  io::PlanecellMap map;
  std::size_t map_bytes = 0;
  std::vector<eval::AccuracyCurve> depth_curves;  // per frame, when gt given
  std::vector<std::string> log;
};

/// Full run including the merge and all exports below cfg.out_dir.
PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace planecell::pipeline
