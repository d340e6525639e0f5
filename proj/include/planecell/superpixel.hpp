#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "planecell/geometry.hpp"
#include "planecell/image.hpp"

namespace planecell::superpixel {

inline constexpr int kBinsPerChannel = 8;
inline constexpr int kHistogramBins = kBinsPerChannel * kBinsPerChannel * kBinsPerChannel;

/// Joint 8x8x8 RGB bin.
int color_bin(const Rgb& c);

struct ColorHistogram {
  std::vector<std::int32_t> bins = std::vector<std::int32_t>(kHistogramBins, 0);
  std::int64_t total = 0;

  void add(int bin, std::int32_t n = 1) {
    bins[bin] += n;
    total += n;
  }
  void remove(int bin, std::int32_t n = 1) {
    bins[bin] -= n;
    total -= n;
  }
  bool operator==(const ColorHistogram&) const = default;
};

struct EnergyWeights {
  double lambda_reg = 0.0;
  double lambda_depth = 0.0;
};

/// lambda_reg = 1 / side^2 for the initial superpixel side; lambda_depth is
/// 0.1 once planes exist and 0 before.
EnergyWeights default_weights(int base_side, bool depth_active);

/// Superpixel partition plus the per-segment statistics kept in sync with it.
struct SegmentationState {
  int width = 0;
  int height = 0;
  int base_side = 1;  // floor(sqrt(|I| / |S|)) for the requested count
  int levels = 1;
  int level = 1;
  std::vector<std::int32_t> labels;
  std::vector<std::uint16_t> pixel_bins;  // colour bin of every pixel
  std::vector<ColorHistogram> histograms;
  std::vector<std::int64_t> sizes;
  std::vector<double> sum_u;
  std::vector<double> sum_v;

  int segment_count() const { return static_cast<int>(sizes.size()); }
  std::int32_t label(int x, int y) const {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  Eigen::Vector2d centroid(int s) const {
    return {sum_u[s] / static_cast<double>(sizes[s]), sum_v[s] / static_cast<double>(sizes[s])};
  }
};

/// Builds a state from an explicit label map (ids must be 0..n-1, all used).
SegmentationState make_state(const ColorImage& img, std::vector<std::int32_t> labels,
                             int base_side = 1, int levels = 1);

/// Regular grid of roughly k segments.
SegmentationState init_grid(const ColorImage& img, int k, int levels);

/// Block side at level l: max(1, base_side / l).
int block_side(int base_side, int level);

/// Block sides visited by refine, coarse to fine, always ending at 1.
std::vector<int> level_schedule(int base_side, int levels);

/// Connected part of one grid tile that belongs to a single segment.
struct Block {
  std::int32_t label = -1;
  std::vector<std::int32_t> pixels;
  std::vector<std::pair<int, std::int32_t>> bins;  // (bin, count), ascending bin
  Eigen::Vector2d position = Eigen::Vector2d::Zero();  // pixel centroid
  std::optional<double> mean_disparity;
  std::vector<std::int32_t> neighbours;  // adjacent foreign labels, ascending
};

/// All blocks of the partition for the given block side, tiles in raster
/// order. Disparity may be null.
std::vector<Block> enumerate_blocks(const SegmentationState& state, int side,
                                    const DisparityMap* disp = nullptr);

/// Checks recomputed statistics, cover, non-emptiness and 4-connectivity.
bool is_valid_partition(const SegmentationState& state);
bool statistics_consistent(const SegmentationState& state);

double energy_color(const SegmentationState& state);

/// |mu_i - mu_j|^2 - |mu_i - b|^2 - |mu_j - b|^2
double reg_pair_term(const Eigen::Vector2d& mu_i, const Eigen::Vector2d& mu_j,
                     const Eigen::Vector2d& b);
/// (t_i - t_j)^2 - (t_i - d)^2 - (t_j - d)^2
double depth_pair_term(double theta_i, double theta_j, double block_disp);

double energy_reg(const SegmentationState& state, int side);
double energy_depth(const SegmentationState& state, const DisparityMap& disp,
                    const PlaneMap& planes, int side);
double energy_total(const SegmentationState& state, const DisparityMap* disp,
                    const PlaneMap& planes, const EnergyWeights& w, int side);

struct MoveScore {
  double c1 = 0.0;  // histogram intersection
  double c2 = 0.0;  // spatial + depth penalty
  double value() const { return c1 - c2; }
};

/// Score of moving `block` into `candidate`. The candidate histogram is
/// rescaled to the block size before the per-bin minimum. Throws
/// ContractError if the block does not touch the candidate.
MoveScore block_move_score(const SegmentationState& state, const Block& block,
                           std::int32_t candidate, const PlaneMap& planes,
                           const EnergyWeights& w);

/// Score of leaving the block where it is, against its segment minus itself.
MoveScore block_stay_score(const SegmentationState& state, const Block& block,
                           const PlaneMap& planes, const EnergyWeights& w);

struct RefineParams {
  int max_passes = 5;
  double max_seconds = 0.0;  // 0 = no wall-clock cap
  bool track_energy = false;
};

struct RefineStats {
  std::int64_t moves = 0;
  int passes = 0;
  bool timed_out = false;
  std::vector<double> energy_per_pass;  // only when track_energy is set
  int absorbed_segments = 0;
};

/// Block-level hill climbing from the coarsest level down to single pixels.
/// Segments enclosed by another segment are absorbed at the end and the ids
/// compacted, so plane maps keyed by input ids must be refitted.
SegmentationState refine(SegmentationState state, const DisparityMap* disp,
                         const PlaneMap& planes, const EnergyWeights& w,
                         const RefineParams& params = {}, RefineStats* stats = nullptr);

/// Merges every segment lying in a hole of another segment into it and
/// compacts ids. Returns the number of absorbed segments.
int absorb_enclosed(SegmentationState& state);

/// Mean colour of every segment.
std::vector<Rgb> mean_colors(const SegmentationState& state, const ColorImage& img);

}  // namespace planecell::superpixel
