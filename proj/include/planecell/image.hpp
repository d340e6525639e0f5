#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace planecell {

using Rgb = std::array<std::uint8_t, 3>;

/// Single-channel 8-bit image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0);

  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
};

/// Interleaved 8-bit RGB image, row-major.
struct ColorImage {
  int width = 0;
  int height = 0;
  std::vector<Rgb> data;

  ColorImage() = default;
  ColorImage(int w, int h, Rgb fill = {0, 0, 0});

  const Rgb& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  Rgb& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
};

/// Rec.601 luma with integer weights: (299 R + 587 G + 114 B + 500) / 1000.
std::uint8_t luminance(const Rgb& c);
GrayImage to_gray(const ColorImage& img);
GrayImage flip_horizontal(const GrayImage& img);

/// Per-pixel disparity in pixels. Invalid pixels hold a quiet NaN, which
/// compares unequal to every number.
struct DisparityMap {
  static constexpr float kInvalid = std::numeric_limits<float>::quiet_NaN();

  int width = 0;
  int height = 0;
  std::vector<float> disp;

  DisparityMap() = default;
  DisparityMap(int w, int h, float fill = kInvalid);

  static bool is_valid(float d) { return !std::isnan(d); }

  float at(int x, int y) const { return disp[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return disp[static_cast<std::size_t>(y) * width + x]; }
  bool valid(int x, int y) const { return is_valid(at(x, y)); }
  std::size_t valid_count() const;
};

DisparityMap flip_horizontal(const DisparityMap& map);

}  // namespace planecell
