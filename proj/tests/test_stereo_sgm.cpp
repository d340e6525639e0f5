#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "planecell/error.hpp"
#include "planecell/stereo_sgm.hpp"

using namespace planecell;
using namespace planecell::sgm;

namespace {

GrayImage random_image(int w, int h, std::uint32_t seed) {
  GrayImage img(w, h);
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> dist(0, 255);
  for (auto& p : img.data) p = static_cast<std::uint8_t>(dist(rng));
  return img;
}

// right(x) = left(x + shift): a point at left x appears at x - shift on the right.
GrayImage shifted_right(const GrayImage& left, int shift) {
  GrayImage r(left.width, left.height);
  for (int y = 0; y < left.height; ++y)
    for (int x = 0; x < left.width; ++x) r.at(x, y) = left.at(std::min(x + shift, left.width - 1), y);
  return r;
}

int census_bits_oracle(const GrayImage& a, int ax, int ay, const GrayImage& b, int bx, int by,
                       int window) {
  const int r = window / 2;
  int diff = 0;
  for (int wy = -r; wy <= r; ++wy)
    for (int wx = -r; wx <= r; ++wx) {
      if (wx == 0 && wy == 0) continue;
      const bool ba = a.at(ax + wx, ay + wy) < a.at(ax, ay);
      const bool bb = b.at(bx + wx, by + wy) < b.at(bx, by);
      diff += ba != bb;
    }
  return diff;
}

double gradient_oracle(const GrayImage& g, int x, int y) {
  if (x == 0) return double(g.at(1, y)) - g.at(0, y);
  if (x == g.width - 1) return double(g.at(x, y)) - g.at(x - 1, y);
  return (double(g.at(x + 1, y)) - g.at(x - 1, y)) / 2.0;
}

double step_penalty(int a, int b, double p1, double p2) {
  const int jump = std::abs(a - b);
  if (jump == 0) return 0.0;
  return jump == 1 ? p1 : p2;
}

// Min over every disparity sequence along `costs` ending at (last, d) of
// matching cost plus transition penalties. Brute force over d_max^n paths.
std::vector<std::vector<double>> unnormalised_by_enumeration(
    const std::vector<std::vector<double>>& costs, double p1, double p2) {
  const int n = static_cast<int>(costs.size());
  const int nd = static_cast<int>(costs[0].size());
  std::vector<std::vector<double>> best(n, std::vector<double>(nd, 1e300));
  for (int len = 1; len <= n; ++len) {
    int total = 1;
    for (int i = 0; i < len; ++i) total *= nd;
    for (int code = 0; code < total; ++code) {
      std::vector<int> seq(len);
      for (int i = 0, c = code; i < len; ++i, c /= nd) seq[i] = c % nd;
      double e = costs[0][seq[0]];
      for (int i = 1; i < len; ++i) e += costs[i][seq[i]] + step_penalty(seq[i - 1], seq[i], p1, p2);
      best[len - 1][seq[len - 1]] = std::min(best[len - 1][seq[len - 1]], e);
    }
  }
  return best;
}

// The normalised recurrence subtracts min_k L(prev, k) at every step, which
// telescopes to L(x, d) = L'(x, d) - min_k L'(x - 1, k).
std::vector<std::vector<double>> path_cost_oracle(const std::vector<std::vector<double>>& costs,
                                                  double p1, double p2) {
  auto raw = unnormalised_by_enumeration(costs, p1, p2);
  std::vector<std::vector<double>> out = raw;
  for (std::size_t x = 1; x < raw.size(); ++x) {
    const double m = *std::min_element(raw[x - 1].begin(), raw[x - 1].end());
    for (std::size_t d = 0; d < raw[x].size(); ++d) out[x][d] = raw[x][d] - m;
  }
  return out;
}

CostVolume integer_volume(int w, int h, int nd, std::uint32_t seed) {
  CostVolume v(w, h, nd);
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> dist(0, 40);
  for (auto& c : v.costs) c = static_cast<float>(dist(rng));
  return v;
}

}  // namespace

TEST_SUITE("stereo_sgm") {

TEST_CASE("census of a constant image is all zero") {
  const GrayImage img(3, 3, 77);
  const CensusMap c = census_transform(img, 3);
  CHECK(c.bits() == 8);
  CHECK(c.is_defined(1, 1));
  for (int k = 0; k < 8; ++k) CHECK_FALSE(c.bit(1, 1, k));
}

TEST_CASE("census with a bright centre sets every bit") {
  GrayImage img(3, 3, 0);
  img.at(1, 1) = 5;
  const CensusMap c = census_transform(img, 3);
  for (int k = 0; k < 8; ++k) CHECK(c.bit(1, 1, k));
  CHECK(c.code(1, 1)[0] == 0xFFu);
}

TEST_CASE("census on a ramp matches direct comparison") {
  GrayImage img(5, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) img.at(x, y) = static_cast<std::uint8_t>(10 * x + 3 * y);
  const CensusMap c = census_transform(img, 3);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      const bool interior = x >= 1 && y >= 1 && x <= 3 && y <= 3;
      CHECK(c.is_defined(x, y) == interior);
      if (!interior) continue;
      int k = 0;
      for (int wy = -1; wy <= 1; ++wy)
        for (int wx = -1; wx <= 1; ++wx) {
          if (wx == 0 && wy == 0) continue;
          CHECK(c.bit(x, y, k) == (img.at(x + wx, y + wy) < img.at(x, y)));
          ++k;
        }
    }
}

TEST_CASE("census window 9 spans more than one 64-bit word when needed") {
  const GrayImage img = random_image(20, 20, 3);
  const CensusMap c = census_transform(img, 9);
  CHECK(c.bits() == 80);
  CHECK(c.words == 2);
  int k = 0;
  for (int wy = -4; wy <= 4; ++wy)
    for (int wx = -4; wx <= 4; ++wx) {
      if (wx == 0 && wy == 0) continue;
      CHECK(c.bit(10, 10, k) == (img.at(10 + wx, 10 + wy) < img.at(10, 10)));
      ++k;
    }
}

TEST_CASE("census rejects even or oversized windows") {
  const GrayImage img(6, 6, 1);
  CHECK_THROWS_AS(census_transform(img, 4), ParameterError);
  CHECK_THROWS_AS(census_transform(img, 1), ParameterError);
  CHECK_THROWS_AS(census_transform(img, 7), ParameterError);
  CHECK_NOTHROW(census_transform(img, 5));
}

TEST_CASE("identical images cost zero at d = 0") {
  const GrayImage img = random_image(16, 12, 11);
  const CostVolume v = matching_cost(img, img, 4, 3, 0.5);
  for (int y = 1; y < 11; ++y)
    for (int x = 1; x < 15; ++x) CHECK(v.at(x, y, 0) == 0.0f);
}

TEST_CASE("a two pixel shift costs zero at d = 2") {
  const GrayImage left = random_image(20, 10, 5);
  const GrayImage right = shifted_right(left, 2);
  const CostVolume v = matching_cost(left, right, 4, 3, 1.0);
  // Gradients differ at the right edge where the shifted image is padded.
  for (int y = 1; y < 9; ++y)
    for (int x = 3; x < 17; ++x) CHECK(v.at(x, y, 2) == 0.0f);
}

TEST_CASE("matching cost equals the Hamming plus gradient oracle") {
  const GrayImage left = random_image(8, 8, 21);
  const GrayImage right = random_image(8, 8, 22);
  const int nd = 4;
  const CostVolume v = matching_cost(left, right, nd, 3, 1.0);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int d = 0; d < nd; ++d) {
        const bool ok = y >= 1 && y <= 6 && x >= 1 && x <= 6 && x - d >= 1;
        if (!ok) {
          CHECK_FALSE(CostVolume::available(v.at(x, y, d)));
          continue;
        }
        const double expect = census_bits_oracle(left, x, y, right, x - d, y, 3) +
                              std::abs(gradient_oracle(left, x, y) - gradient_oracle(right, x - d, y));
        CHECK(v.at(x, y, d) == doctest::Approx(expect).epsilon(1e-6));
      }
}

TEST_CASE("matching cost is finite and nonnegative where available") {
  const GrayImage left = random_image(30, 20, 1);
  const GrayImage right = random_image(30, 20, 2);
  const CostVolume v = matching_cost(left, right, 8, 5, 0.5);
  for (float c : v.costs) {
    if (!CostVolume::available(c)) continue;
    CHECK(std::isfinite(c));
    CHECK(c >= 0.0f);
  }
}

TEST_CASE("matching cost preconditions") {
  CHECK_THROWS_AS(matching_cost(GrayImage(8, 8), GrayImage(9, 8), 4, 3, 0.5), ParameterError);
  CHECK_THROWS_AS(matching_cost(GrayImage(8, 8), GrayImage(8, 8), 0, 3, 0.5), ParameterError);
}

TEST_CASE("1x4 scanline with two levels matches all 16 assignments") {
  CostVolume v(4, 1, 2);
  const float c[4][2] = {{0, 5}, {4, 1}, {6, 0}, {2, 3}};
  for (int x = 0; x < 4; ++x)
    for (int d = 0; d < 2; ++d) v.at(x, 0, d) = c[x][d];
  std::vector<std::vector<double>> costs(4, std::vector<double>(2));
  for (int x = 0; x < 4; ++x)
    for (int d = 0; d < 2; ++d) costs[x][d] = c[x][d];
  const Direction dir[] = {{1, 0}};
  const CostVolume agg = aggregate_paths(v, 3.0, 7.0, dir);
  const auto oracle = path_cost_oracle(costs, 3.0, 7.0);
  for (int x = 0; x < 4; ++x)
    for (int d = 0; d < 2; ++d) CHECK(agg.at(x, 0, d) == oracle[x][d]);
}

TEST_CASE("scanline aggregation equals path enumeration, both directions") {
  for (int trial = 0; trial < 60; ++trial) {
    const int w = 1 + trial % 6;
    const int nd = 1 + (trial / 6) % 3;
    const CostVolume v = integer_volume(w, 1, nd, 100 + trial);
    std::vector<std::vector<double>> fwd(w, std::vector<double>(nd));
    for (int x = 0; x < w; ++x)
      for (int d = 0; d < nd; ++d) fwd[x][d] = v.at(x, 0, d);
    std::vector<std::vector<double>> bwd(fwd.rbegin(), fwd.rend());
    const double p1 = 1 + trial % 5, p2 = p1 + 3 + trial % 7;
    const Direction right_dir[] = {{1, 0}};
    const Direction left_dir[] = {{-1, 0}};
    const CostVolume a = aggregate_paths(v, p1, p2, right_dir);
    const CostVolume b = aggregate_paths(v, p1, p2, left_dir);
    const auto of = path_cost_oracle(fwd, p1, p2);
    const auto ob = path_cost_oracle(bwd, p1, p2);
    for (int x = 0; x < w; ++x)
      for (int d = 0; d < nd; ++d) {
        CHECK(a.at(x, 0, d) == of[x][d]);
        CHECK(b.at(x, 0, d) == ob[w - 1 - x][d]);
      }
  }
}

TEST_CASE("diagonal paths on a 2D volume equal enumeration per diagonal") {
  const int w = 5, h = 4, nd = 3;
  const CostVolume v = integer_volume(w, h, nd, 9);
  const Direction dir[] = {{1, 1}};
  const CostVolume agg = aggregate_paths(v, 2.0, 9.0, dir);
  for (int sx = -(h - 1); sx < w; ++sx) {
    // diagonal starting at the first in-image pixel of x - y = sx
    std::vector<std::pair<int, int>> px;
    for (int y = 0; y < h; ++y)
      if (sx + y >= 0 && sx + y < w) px.emplace_back(sx + y, y);
    std::vector<std::vector<double>> costs;
    for (auto [x, y] : px) {
      std::vector<double> c(nd);
      for (int d = 0; d < nd; ++d) c[d] = v.at(x, y, d);
      costs.push_back(c);
    }
    const auto o = path_cost_oracle(costs, 2.0, 9.0);
    for (std::size_t i = 0; i < px.size(); ++i)
      for (int d = 0; d < nd; ++d) CHECK(agg.at(px[i].first, px[i].second, d) == o[i][d]);
  }
}

TEST_CASE("eight directions on one row add forward, backward and six plain costs") {
  const int w = 6, nd = 3;
  const CostVolume v = integer_volume(w, 1, nd, 42);
  std::vector<std::vector<double>> fwd(w, std::vector<double>(nd));
  for (int x = 0; x < w; ++x)
    for (int d = 0; d < nd; ++d) fwd[x][d] = v.at(x, 0, d);
  std::vector<std::vector<double>> bwd(fwd.rbegin(), fwd.rend());
  const auto of = path_cost_oracle(fwd, 4.0, 11.0);
  const auto ob = path_cost_oracle(bwd, 4.0, 11.0);
  const CostVolume agg = aggregate_paths(v, 4.0, 11.0, kEightDirections);
  for (int x = 0; x < w; ++x)
    for (int d = 0; d < nd; ++d)
      CHECK(agg.at(x, 0, d) == of[x][d] + ob[w - 1 - x][d] + 6.0 * fwd[x][d]);
}

TEST_CASE("huge penalties keep a zero-cost constant path at zero") {
  CostVolume v(6, 3, 4, 9.0f);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 6; ++x) v.at(x, y, 2) = 0.0f;
  const CostVolume agg = aggregate_paths(v, 1e6, 1e7, kEightDirections);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 6; ++x) CHECK(agg.at(x, y, 2) == 0.0f);
}

TEST_CASE("four directions on a constant volume give four times the cost") {
  const CostVolume v(7, 5, 3, 2.5f);
  const CostVolume agg = aggregate_paths(v, 1.0, 2.0, kFourDirections);
  for (float c : agg.costs) CHECK(c == 10.0f);
}

TEST_CASE("aggregated costs stay nonnegative") {
  const CostVolume v = integer_volume(12, 9, 5, 77);
  const CostVolume agg = aggregate_paths(v, 3.0, 20.0, kEightDirections);
  for (float c : agg.costs) CHECK(c >= 0.0f);
}

TEST_CASE("aggregation does not depend on the worker count") {
  const CostVolume v = integer_volume(40, 30, 6, 5);
  const CostVolume a = aggregate_paths(v, 3.0, 20.0, kEightDirections, 1);
  const CostVolume b = aggregate_paths(v, 3.0, 20.0, kEightDirections, 4);
  CHECK(a.costs == b.costs);
}

TEST_CASE("aggregation parameter errors") {
  const CostVolume v(3, 3, 2);
  CHECK_THROWS_AS(aggregate_paths(v, 1.0, 2.0, std::span<const Direction>{}), ParameterError);
  CHECK_THROWS_AS(aggregate_paths(v, 3.0, 2.0, kFourDirections), ParameterError);
  CHECK_THROWS_AS(aggregate_paths(v, 0.0, 2.0, kFourDirections), ParameterError);
  const Direction bad[] = {{2, 0}};
  CHECK_THROWS_AS(aggregate_paths(v, 1.0, 2.0, bad), ParameterError);
}

TEST_CASE("winner-take-all picks the unique minimum") {
  CostVolume v(4, 3, 6, 5.0f);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) v.at(x, y, 3) = 1.0f;
  const DisparityMap m = select_disparity(v);
  for (float d : m.disp) CHECK(d == 3.0f);
}

TEST_CASE("ties go to the smaller disparity") {
  CostVolume v(1, 1, 6, 5.0f);
  v.at(0, 0, 1) = 2.0f;
  v.at(0, 0, 4) = 2.0f;
  CHECK(select_disparity(v).at(0, 0) == 1.0f);
}

TEST_CASE("winner-take-all matches a linear scan and marks unavailable pixels invalid") {
  CostVolume v(6, 6, 5);
  std::mt19937 rng(8);
  std::uniform_int_distribution<int> dist(0, 6);
  for (auto& c : v.costs) c = static_cast<float>(dist(rng));
  for (int d = 0; d < 5; ++d) v.at(2, 3, d) = CostVolume::kUnavailable;
  const DisparityMap m = select_disparity(v);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      if (x == 2 && y == 3) {
        CHECK_FALSE(m.valid(x, y));
        continue;
      }
      int arg = 0;
      for (int d = 1; d < 5; ++d)
        if (v.at(x, y, d) < v.at(x, y, arg)) arg = d;
      CHECK(m.at(x, y) == static_cast<float>(arg));
    }
}

TEST_CASE("left-right check on constant zero maps keeps everything") {
  const DisparityMap a(9, 4, 0.0f);
  const DisparityMap out = lr_consistency(a, a, 1.0);
  CHECK(out.valid_count() == 36);
  CHECK(out.disp == a.disp);
}

TEST_CASE("left-right check rejects an inconsistent pixel") {
  DisparityMap l(16, 5, 0.0f), r(16, 5, 0.0f);
  l.at(10, 3) = 5.0f;
  r.at(5, 3) = 9.0f;
  const DisparityMap out = lr_consistency(l, r, 1.0);
  CHECK_FALSE(out.valid(10, 3));
  r.at(5, 3) = 6.0f;
  CHECK(lr_consistency(l, r, 1.0).at(10, 3) == 5.0f);
}

TEST_CASE("left-right check finds exactly the injected mismatches") {
  const int w = 40, h = 10, shift = 4;
  DisparityMap l(w, h, static_cast<float>(shift)), r(w, h, static_cast<float>(shift));
  // Left pixels whose match leaves the image are dropped as well.
  std::size_t edge = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < shift; ++x) ++edge;
  r.at(10, 2) = 9.0f;
  r.at(20, 5) = 0.0f;
  r.at(30, 8) = 7.0f;
  const DisparityMap out = lr_consistency(l, r, 1.0);
  CHECK(out.valid_count() == static_cast<std::size_t>(w * h) - edge - 3);
  CHECK_FALSE(out.valid(14, 2));
  CHECK_FALSE(out.valid(24, 5));
  CHECK_FALSE(out.valid(34, 8));
}

TEST_CASE("shifted texture recovers the shift at most interior pixels") {
  const int k = 5;
  const GrayImage left = random_image(80, 50, 99);
  const GrayImage right = shifted_right(left, k);
  SgmParams p;
  p.d_max = 16;
  const DisparityMap d = compute_disparity(left, right, p);
  int hits = 0, total = 0;
  for (int y = 2; y < 48; ++y)
    for (int x = k + 2; x < 80 - k - 2; ++x) {
      ++total;
      hits += d.at(x, y) == static_cast<float>(k);
    }
  CHECK(hits >= 0.95 * total);
}

TEST_CASE("right disparity from mirrored matching agrees with the shift") {
  const int k = 3;
  const GrayImage left = random_image(60, 30, 4);
  const GrayImage right = shifted_right(left, k);
  SgmParams p;
  p.d_max = 8;
  p.directions = 4;
  const DisparityMap dr = compute_right_disparity(left, right, p);
  int hits = 0, total = 0;
  for (int y = 2; y < 28; ++y)
    for (int x = 2; x < 60 - k - 2; ++x) {
      ++total;
      hits += dr.at(x, y) == static_cast<float>(k);
    }
  CHECK(hits >= 0.95 * total);
}

}  // TEST_SUITE
