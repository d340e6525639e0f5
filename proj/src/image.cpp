#include "planecell/image.hpp"

#include <algorithm>

namespace planecell {

GrayImage::GrayImage(int w, int h, std::uint8_t fill)
    : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

ColorImage::ColorImage(int w, int h, Rgb fill)
    : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

DisparityMap::DisparityMap(int w, int h, float fill)
    : width(w), height(h), disp(static_cast<std::size_t>(w) * h, fill) {}

std::size_t DisparityMap::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(disp.begin(), disp.end(), [](float d) { return is_valid(d); }));
}

std::uint8_t luminance(const Rgb& c) {
  const int y = (299 * c[0] + 587 * c[1] + 114 * c[2] + 500) / 1000;
  return static_cast<std::uint8_t>(std::min(y, 255));
}

GrayImage to_gray(const ColorImage& img) {
  GrayImage out(img.width, img.height);
  std::transform(img.data.begin(), img.data.end(), out.data.begin(), luminance);
  return out;
}

GrayImage flip_horizontal(const GrayImage& img) {
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.at(img.width - 1 - x, y) = img.at(x, y);
  return out;
}

DisparityMap flip_horizontal(const DisparityMap& map) {
  DisparityMap out(map.width, map.height);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) out.at(map.width - 1 - x, y) = map.at(x, y);
  return out;
}

}  // namespace planecell
