#include "planecell/io_formats.hpp"

#include <png.h>

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "planecell/error.hpp"

namespace planecell::io {

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw FormatError("read failed: " + path.string());
  return bytes;
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

std::string at_offset(const std::string& what, std::size_t offset) {
  return what + " at byte offset " + std::to_string(offset);
}

// Decoded raster: 1 or 3 channels, 8 or 16 bits (16-bit samples big-endian).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<std::uint8_t> data;

  std::uint16_t sample(std::size_t i) const {
    if (bit_depth == 8) return data[i];
    return static_cast<std::uint16_t>(data[2 * i] << 8 | data[2 * i + 1]);
  }
};

// ---------------------------------------------------------------------------
// PNG via libpng

struct PngReadContext {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
  char message[256] = {};
};

void png_read_bytes(png_structp png, png_bytep out, png_size_t n) {
  auto* ctx = static_cast<PngReadContext*>(png_get_io_ptr(png));
  if (ctx->pos + n > ctx->bytes.size()) png_error(png, "truncated file");
  std::memcpy(out, ctx->bytes.data() + ctx->pos, n);
  ctx->pos += n;
}

void png_on_error(png_structp png, png_const_charp msg) {
  auto* ctx = static_cast<PngReadContext*>(png_get_error_ptr(png));
  std::snprintf(ctx->message, sizeof ctx->message, "%s", msg);
  png_longjmp(png, 1);
}

void png_on_warning(png_structp, png_const_charp) {}

Raster decode_png(std::span<const std::uint8_t> bytes) {
  PngReadContext ctx;
  ctx.bytes = bytes;
  Raster out;
  std::vector<png_bytep> rows;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &ctx, png_on_error, png_on_warning);
  if (!png) throw FormatError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw FormatError("png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(at_offset(std::string("png: ") + ctx.message, ctx.pos));
  }
  png_set_read_fn(png, &ctx, png_read_bytes);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (png_get_interlace_type(png, info) != PNG_INTERLACE_NONE) png_set_interlace_handling(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  out.data.resize(row_bytes * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[y] = out.data.data() + row_bytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (out.channels != 1 && out.channels != 3)
    throw FormatError("png: unsupported channel count " + std::to_string(out.channels));
  return out;
}

struct PngWriteContext {
  std::vector<std::uint8_t> bytes;
  char message[256] = {};
};

void png_write_bytes(png_structp png, png_bytep data, png_size_t n) {
  auto* ctx = static_cast<PngWriteContext*>(png_get_io_ptr(png));
  ctx->bytes.insert(ctx->bytes.end(), data, data + n);
}

void png_flush(png_structp) {}

void png_on_write_error(png_structp png, png_const_charp msg) {
  auto* ctx = static_cast<PngWriteContext*>(png_get_error_ptr(png));
  std::snprintf(ctx->message, sizeof ctx->message, "%s", msg);
  png_longjmp(png, 1);
}

// `data` rows are packed; 16-bit samples big-endian.
void encode_png(int width, int height, int channels, int bit_depth,
                std::span<const std::uint8_t> data, const fs::path& path) {
  PngWriteContext ctx;
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  const std::size_t row_bytes =
      static_cast<std::size_t>(width) * channels * static_cast<std::size_t>(bit_depth / 8);
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(data.data() + row_bytes * y);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &ctx, png_on_write_error, png_on_warning);
  if (!png) throw FormatError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw FormatError("png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError(std::string("png write: ") + ctx.message);
  }
  png_set_write_fn(png, &ctx, png_write_bytes, png_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  write_file(path, ctx.bytes);
}

// ---------------------------------------------------------------------------
// PGM / PPM (binary)

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (is_space(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  long number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long v = 0;
    while (pos_ < b_.size() && is_digit(b_[pos_])) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > 1'000'000'000L) throw FormatError(at_offset(std::string("pnm: ") + what + " too large", start));
      ++pos_;
    }
    if (pos_ == start) throw FormatError(at_offset(std::string("pnm: expected ") + what, pos_));
    return v;
  }

  std::size_t& pos() { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

Raster decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError(at_offset("pnm: expected P5 or P6 magic", 0));
  Raster out;
  out.channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader h(bytes);
  h.pos() = 2;
  const long w = h.number("width");
  const long ht = h.number("height");
  const std::size_t maxval_at = h.pos();
  const long maxval = h.number("maxval");
  if (w <= 0 || ht <= 0) throw FormatError(at_offset("pnm: empty image", maxval_at));
  if (maxval <= 0 || maxval > 65535) throw FormatError(at_offset("pnm: bad maxval", maxval_at));
  if (h.pos() >= bytes.size() || !is_space(bytes[h.pos()]))
    throw FormatError(at_offset("pnm: expected whitespace after header", h.pos()));
  ++h.pos();
  out.width = static_cast<int>(w);
  out.height = static_cast<int>(ht);
  out.bit_depth = maxval > 255 ? 16 : 8;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(ht) *
                           out.channels * (out.bit_depth / 8);
  if (bytes.size() - h.pos() < need)
    throw FormatError(at_offset("pnm: truncated pixel data", bytes.size()));
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.pos()),
                  bytes.begin() + static_cast<std::ptrdiff_t>(h.pos() + need));
  if (maxval != 255 && maxval != 65535) {
    const long top = out.bit_depth == 8 ? 255 : 65535;
    for (std::size_t i = 0; i < need / (out.bit_depth / 8); ++i) {
      const long s = std::min<long>(out.sample(i), maxval);
      const long v = (s * top + maxval / 2) / maxval;
      if (out.bit_depth == 8) {
        out.data[i] = static_cast<std::uint8_t>(v);
      } else {
        out.data[2 * i] = static_cast<std::uint8_t>(v >> 8);
        out.data[2 * i + 1] = static_cast<std::uint8_t>(v & 0xff);
      }
    }
  }
  return out;
}

Raster decode_any(const fs::path& path) {
  const auto bytes = read_file(path);
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() >= 8 && std::equal(kPngMagic, kPngMagic + 8, bytes.begin()))
    return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P') return decode_pnm(bytes);
  throw FormatError(at_offset("unsupported image format: " + path.string(), 0));
}

// ---------------------------------------------------------------------------
// Little-endian byte buffers

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
      put(std::bit_cast<U>(v));
    } else {
      using U = std::make_unsigned_t<T>;
      auto u = static_cast<U>(v);
      for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
  }
  void raw(const char* s, std::size_t n) { bytes_.insert(bytes_.end(), s, s + n); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  template <class T>
  T get() {
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
      return std::bit_cast<T>(get<U>());
    } else {
      if (pos_ + sizeof(T) > b_.size()) throw FormatError(at_offset("map: truncated file", pos_));
      using U = std::make_unsigned_t<T>;
      U u = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
      pos_ += sizeof(T);
      return static_cast<T>(u);
    }
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

// Locale-independent number formatting and parsing.
std::string fmt(float v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && end == tok.data() + tok.size();
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace

// ---------------------------------------------------------------------------
// Images

ColorImage load_color_image(const fs::path& path) {
  const Raster r = decode_any(path);
  if (r.bit_depth != 8)
    throw FormatError("16-bit samples are not supported for colour images: " + path.string());
  ColorImage img(r.width, r.height);
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  for (std::size_t i = 0; i < n; ++i) {
    if (r.channels == 3) {
      img.data[i] = {r.data[3 * i], r.data[3 * i + 1], r.data[3 * i + 2]};
    } else {
      img.data[i] = {r.data[i], r.data[i], r.data[i]};
    }
  }
  return img;
}

GrayImage load_gray_image(const fs::path& path) {
  const Raster r = decode_any(path);
  if (r.bit_depth != 8) throw FormatError("16-bit samples are not supported: " + path.string());
  GrayImage img(r.width, r.height);
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  for (std::size_t i = 0; i < n; ++i)
    img.data[i] = r.channels == 3 ? luminance({r.data[3 * i], r.data[3 * i + 1], r.data[3 * i + 2]})
                                  : r.data[i];
  return img;
}

void write_png(const ColorImage& img, const fs::path& path) {
  std::vector<std::uint8_t> packed;
  packed.reserve(img.data.size() * 3);
  for (const auto& c : img.data) packed.insert(packed.end(), c.begin(), c.end());
  encode_png(img.width, img.height, 3, 8, packed, path);
}

void write_png(const GrayImage& img, const fs::path& path) {
  encode_png(img.width, img.height, 1, 8, img.data, path);
}

void write_png_gray16(int width, int height, std::span<const std::uint16_t> data,
                      const fs::path& path) {
  if (data.size() != static_cast<std::size_t>(width) * height)
    throw ParameterError("write_png_gray16: size mismatch");
  std::vector<std::uint8_t> packed(data.size() * 2);
  for (std::size_t i = 0; i < data.size(); ++i) {
    packed[2 * i] = static_cast<std::uint8_t>(data[i] >> 8);
    packed[2 * i + 1] = static_cast<std::uint8_t>(data[i] & 0xff);
  }
  encode_png(width, height, 1, 16, packed, path);
}

void write_ppm(const ColorImage& img, const fs::path& path) {
  std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (const auto& c : img.data) bytes.insert(bytes.end(), c.begin(), c.end());
  write_file(path, bytes);
}

// ---------------------------------------------------------------------------
// Disparity

DisparityFormat parse_disparity_format(std::string_view name) {
  if (name == "kitti_png16") return DisparityFormat::KittiPng16;
  if (name == "pfm") return DisparityFormat::Pfm;
  if (name == "raw_f32") return DisparityFormat::RawF32;
  throw ParameterError("unknown disparity format: " + std::string(name));
}

std::string_view to_string(DisparityFormat f) {
  switch (f) {
    case DisparityFormat::KittiPng16: return "kitti_png16";
    case DisparityFormat::Pfm: return "pfm";
    case DisparityFormat::RawF32: return "raw_f32";
  }
  return "?";
}

namespace {

DisparityMap decode_png16(const fs::path& path) {
  const Raster r = decode_any(path);
  if (r.channels != 1) throw FormatError("kitti_png16: expected a single-channel image");
  if (r.bit_depth != 16) throw FormatError("kitti_png16: expected 16-bit samples");
  DisparityMap map(r.width, r.height);
  for (std::size_t i = 0; i < map.disp.size(); ++i) {
    const std::uint16_t raw = r.sample(i);
    map.disp[i] = raw == 0 ? DisparityMap::kInvalid : static_cast<float>(raw) / 256.0f;
  }
  return map;
}

DisparityMap decode_pfm(const fs::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != 'f' && bytes[1] != 'F'))
    throw FormatError(at_offset("pfm: expected Pf magic", 0));
  if (bytes[1] == 'F') throw FormatError(at_offset("pfm: colour PFM is not a disparity map", 1));
  HeaderReader h(bytes);
  h.pos() = 2;
  const long w = h.number("width");
  const long ht = h.number("height");
  h.skip_space_and_comments();
  const std::size_t scale_at = h.pos();
  std::size_t end = scale_at;
  while (end < bytes.size() && !is_space(bytes[end])) ++end;
  double scale = 0.0;
  if (!parse_double({reinterpret_cast<const char*>(bytes.data()) + scale_at, end - scale_at}, scale) ||
      scale == 0.0)
    throw FormatError(at_offset("pfm: bad scale", scale_at));
  if (end >= bytes.size()) throw FormatError(at_offset("pfm: truncated header", end));
  const std::size_t data_at = end + 1;
  const bool little = scale < 0.0;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(ht) * 4;
  if (w <= 0 || ht <= 0) throw FormatError(at_offset("pfm: empty image", 2));
  if (bytes.size() - data_at < need) throw FormatError(at_offset("pfm: truncated pixel data", bytes.size()));
  DisparityMap map(static_cast<int>(w), static_cast<int>(ht));
  for (long y = 0; y < ht; ++y) {
    const long row = ht - 1 - y;  // bottom-up
    for (long x = 0; x < w; ++x) {
      const std::uint8_t* p = bytes.data() + data_at + 4 * (static_cast<std::size_t>(y) * w + x);
      std::uint32_t u = little ? (p[0] | p[1] << 8 | p[2] << 16 | static_cast<std::uint32_t>(p[3]) << 24)
                               : (p[3] | p[2] << 8 | p[1] << 16 | static_cast<std::uint32_t>(p[0]) << 24);
      const float d = std::bit_cast<float>(u);
      map.at(static_cast<int>(x), static_cast<int>(row)) =
          (std::isfinite(d) && d >= 0.0f) ? d : DisparityMap::kInvalid;
    }
  }
  return map;
}

DisparityMap decode_raw(const fs::path& path, int width, int height) {
  if (width <= 0 || height <= 0) throw ParameterError("raw_f32 needs an explicit width and height");
  const auto bytes = read_file(path);
  const std::size_t need = static_cast<std::size_t>(width) * height * 4;
  if (bytes.size() != need)
    throw FormatError(at_offset("raw_f32: expected " + std::to_string(need) + " bytes", bytes.size()));
  DisparityMap map(width, height);
  ByteReader r(bytes);
  for (auto& d : map.disp) {
    const float v = r.get<float>();
    d = (std::isfinite(v) && v >= 0.0f) ? v : DisparityMap::kInvalid;
  }
  return map;
}

}  // namespace

DisparityMap load_disparity(const fs::path& path, DisparityFormat format, int width, int height) {
  switch (format) {
    case DisparityFormat::KittiPng16: return decode_png16(path);
    case DisparityFormat::Pfm: return decode_pfm(path);
    case DisparityFormat::RawF32: return decode_raw(path, width, height);
  }
  throw ParameterError("unknown disparity format");
}

void write_pfm(const DisparityMap& map, const fs::path& path) {
  ByteWriter w;
  const std::string header =
      "Pf\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n-1.0\n";
  w.raw(header.data(), header.size());
  for (int y = map.height - 1; y >= 0; --y)
    for (int x = 0; x < map.width; ++x) {
      const float d = map.at(x, y);
      w.put(DisparityMap::is_valid(d) ? d : std::numeric_limits<float>::infinity());
    }
  write_file(path, w.bytes());
}

void write_png16(const DisparityMap& map, const fs::path& path) {
  std::vector<std::uint16_t> raw(map.disp.size(), 0);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float d = map.disp[i];
    if (!DisparityMap::is_valid(d) || d < 0.0f) continue;
    const double r = std::round(static_cast<double>(d) * 256.0);
    raw[i] = static_cast<std::uint16_t>(std::clamp(r, 1.0, 65535.0));
  }
  write_png_gray16(map.width, map.height, raw, path);
}

void write_raw_f32(const DisparityMap& map, const fs::path& path) {
  ByteWriter w;
  for (float d : map.disp) w.put(DisparityMap::is_valid(d) ? d : -1.0f);
  write_file(path, w.bytes());
}

// ---------------------------------------------------------------------------
// Calibration and poses

CalibInfo load_kitti_calib(const fs::path& path) {
  const auto lines = read_lines(path);
  std::array<std::optional<std::array<double, 12>>, 4> p;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto toks = split_ws(lines[n]);
    if (toks.empty()) continue;
    std::string_view key = toks[0];
    if (key.size() != 3 || key[0] != 'P' || key[2] != ':' || key[1] < '0' || key[1] > '3') continue;
    const std::string where = path.string() + ":" + std::to_string(n + 1);
    if (toks.size() != 13) throw ParseError(where + ": expected 12 numbers after " + std::string(key));
    std::array<double, 12> m{};
    for (int k = 0; k < 12; ++k)
      if (!parse_double(toks[k + 1], m[k]))
        throw ParseError(where + ": not a number: '" + std::string(toks[k + 1]) + "'");
    p[key[1] - '0'] = m;
  }
  if (!p[0] || !p[1]) throw ParseError(path.string() + ": missing P0 or P1");
  CalibInfo info;
  info.rig.f = (*p[0])[0];
  info.rig.cu = (*p[0])[2];
  info.rig.cv = (*p[0])[6];
  info.rig.baseline = -(*p[1])[3] / info.rig.f;
  info.source = path.string();
  try {
    info.rig.validate();
  } catch (const ParameterError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return info;
}

std::vector<projection::Pose> load_poses(const fs::path& path) {
  const auto lines = read_lines(path);
  std::vector<projection::Pose> poses;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto toks = split_ws(lines[n]);
    if (toks.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(n + 1);
    if (toks.size() != 12)
      throw ParseError(where + ": expected 12 numbers, got " + std::to_string(toks.size()));
    double m[12];
    for (int k = 0; k < 12; ++k)
      if (!parse_double(toks[k], m[k]) || !std::isfinite(m[k]))
        throw ParseError(where + ": not a number: '" + std::string(toks[k]) + "'");
    projection::Pose pose;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pose.rotation(r, c) = m[4 * r + c];
      pose.translation[r] = m[4 * r + 3];
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(pose.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d nearest = svd.matrixU() * svd.matrixV().transpose();
    if ((nearest - pose.rotation).cwiseAbs().maxCoeff() > 1e-6 || nearest.determinant() < 0.0)
      throw ParseError(where + ": rotation is not orthonormal within 1e-6");
    pose.rotation = nearest;
    if (!pose.is_valid()) throw ParseError(where + ": invalid pose");
    poses.push_back(pose);
  }
  return poses;
}

// ---------------------------------------------------------------------------
// Map file

bool MapCell::operator==(const MapCell& o) const {
  if (id != o.id || frame != o.frame || surface != o.surface || area != o.area ||
      mean_rgb != o.mean_rgb || !(plane2d == o.plane2d) || plane3d.index() != o.plane3d.index())
    return false;
  if (plane3d.index() == 0) {
    if (!(std::get<0>(plane3d) == std::get<0>(o.plane3d))) return false;
  } else if (!(std::get<1>(plane3d) == std::get<1>(o.plane3d))) {
    return false;
  }
  if (rings.size() != o.rings.size()) return false;
  for (std::size_t r = 0; r < rings.size(); ++r)
    if (rings[r].corners != o.rings[r].corners || rings[r].points != o.rings[r].points) return false;
  return true;
}

bool PlanecellMap::operator==(const PlanecellMap& o) const {
  if (poses.size() != o.poses.size()) return false;
  for (std::size_t i = 0; i < poses.size(); ++i)
    if (poses[i].frame != o.poses[i].frame || !(poses[i].pose == o.poses[i].pose)) return false;
  return frame_count == o.frame_count && rig.f == o.rig.f && rig.cu == o.rig.cu &&
         rig.cv == o.rig.cv && rig.baseline == o.rig.baseline && cells == o.cells;
}

void derive_points(PlanecellMap& map) {
  const projection::Pose identity;
  for (auto& c : map.cells) {
    const auto it = std::lower_bound(map.poses.begin(), map.poses.end(), c.frame,
                                     [](const FramePose& p, std::int32_t f) { return p.frame < f; });
    const auto& pose = it != map.poses.end() && it->frame == c.frame ? it->pose : identity;
    for (auto& ring : c.rings) {
      ring.points.resize(ring.corners.size());
      for (std::size_t k = 0; k < ring.corners.size(); ++k) {
        const double u = projection::corner_coord(ring.corners[k].u);
        const double v = projection::corner_coord(ring.corners[k].v);
        // same expression as Planecell::lift
        const auto p = pose.apply(projection::vertex_to_3d(u, v, c.plane2d(u, v), map.rig));
        ring.points[k] = p.cast<float>();
      }
    }
  }
}

PlanecellMap make_map(std::span<const projection::Planecell> cells,
                      std::span<const std::int32_t> surface_of, const projection::CameraRig& rig,
                      std::uint32_t frame_count) {
  if (!surface_of.empty() && surface_of.size() != cells.size())
    throw ParameterError("make_map: surface list does not match cells");
  PlanecellMap map;
  map.frame_count = frame_count;
  map.rig = rig;
  map.cells.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    MapCell m;
    m.id = c.id;
    m.frame = c.frame;
    m.surface = surface_of.empty() ? -1 : surface_of[i];
    m.area = static_cast<std::uint32_t>(c.area_px);
    m.mean_rgb = c.mean_rgb;
    m.plane2d = c.plane2d;
    if (c.plane3d) {
      m.plane3d = *c.plane3d;
    } else {
      m.plane3d = c.plane;
    }
    m.rings.push_back(MapRing{c.polygon.outer, {}});
    for (const auto& h : c.polygon.holes) m.rings.push_back(MapRing{h, {}});
    if (!(c.pose == projection::Pose{})) {
      const auto it = std::lower_bound(map.poses.begin(), map.poses.end(), c.frame,
                                       [](const FramePose& p, std::int32_t f) { return p.frame < f; });
      if (it != map.poses.end() && it->frame == c.frame) {
        if (!(it->pose == c.pose)) throw ParameterError("make_map: frame " + std::to_string(c.frame) + " has two poses");
      } else {
        map.poses.insert(it, FramePose{c.frame, c.pose});
      }
    }
    map.cells.push_back(std::move(m));
  }
  for (const auto& c : cells)
    if (c.pose == projection::Pose{})
      for (const auto& fp : map.poses)
        if (fp.frame == c.frame) throw ParameterError("make_map: frame " + std::to_string(c.frame) + " has two poses");
  derive_points(map);
  return map;
}

std::vector<std::uint8_t> encode_map(const PlanecellMap& map) {
  ByteWriter w;
  w.raw("PCEL", 4);
  w.put<std::uint16_t>(kMapVersion);
  if (map.poses.size() > 0xffff) throw ParameterError("map: too many frame poses");
  w.put<std::uint16_t>(static_cast<std::uint16_t>(map.poses.size()));
  w.put<std::uint32_t>(map.frame_count);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(map.cells.size()));
  w.put(map.rig.f);
  w.put(map.rig.cu);
  w.put(map.rig.cv);
  w.put(map.rig.baseline);
  for (std::size_t i = 0; i < map.poses.size(); ++i) {
    const auto& fp = map.poses[i];
    if (i > 0 && fp.frame <= map.poses[i - 1].frame) throw ParameterError("map: poses must be sorted by frame");
    w.put(fp.frame);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) w.put(fp.pose.rotation(r, c));
      w.put(fp.pose.translation[r]);
    }
  }
  for (const auto& c : map.cells) {
    w.put(c.id);
    w.put(c.frame);
    w.put(c.surface);
    w.put(c.area);
    const bool z_form = c.plane3d.index() == 0;
    w.put<std::uint8_t>(z_form ? 1 : 0);
    for (auto ch : c.mean_rgb) w.put(ch);
    w.put(c.plane2d.a);
    w.put(c.plane2d.b);
    w.put(c.plane2d.c);
    if (z_form) {
      const auto& p = std::get<PlaneFn3D>(c.plane3d);
      w.put(p.a);
      w.put(p.b);
      w.put(p.c);
    } else {
      const auto& p = std::get<NormalPlane>(c.plane3d);
      w.put(p.normal.x());
      w.put(p.normal.y());
      w.put(p.normal.z());
      w.put(p.offset);
    }
    if (c.rings.size() > 0xffff) throw ParameterError("map: too many rings in one cell");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(c.rings.size()));
    for (const auto& r : c.rings) {
      if (r.corners.size() > 0xffff) throw ParameterError("map: ring too long");
      w.put<std::uint16_t>(static_cast<std::uint16_t>(r.corners.size()));
      for (std::size_t k = 0; k < r.corners.size(); ++k) {
        const auto& q = r.corners[k];
        if (q.u < 0 || q.v < 0 || q.u > 0xffff || q.v > 0xffff)
          throw ParameterError("map: corner outside 16-bit range");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(q.u));
        w.put<std::uint16_t>(static_cast<std::uint16_t>(q.v));
      }
    }
  }
  return std::move(w.bytes());
}

PlanecellMap decode_map(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMapHeaderBytes) throw FormatError(at_offset("map: truncated header", bytes.size()));
  if (std::memcmp(bytes.data(), "PCEL", 4) != 0) throw FormatError(at_offset("map: bad magic", 0));
  ByteReader r(bytes.subspan(4));
  const auto version = r.get<std::uint16_t>();
  if (version != kMapVersion)
    throw FormatError("map: version mismatch (file " + std::to_string(version) + ", reader " +
                      std::to_string(kMapVersion) + ")");
  const auto pose_count = r.get<std::uint16_t>();
  PlanecellMap map;
  map.frame_count = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();
  map.rig.f = r.get<double>();
  map.rig.cu = r.get<double>();
  map.rig.cv = r.get<double>();
  map.rig.baseline = r.get<double>();
  for (std::uint16_t i = 0; i < pose_count; ++i) {
    const std::size_t at = 4 + r.pos();
    FramePose fp;
    fp.frame = r.get<std::int32_t>();
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) fp.pose.rotation(row, col) = r.get<double>();
      fp.pose.translation[row] = r.get<double>();
    }
    if (!map.poses.empty() && fp.frame <= map.poses.back().frame)
      throw FormatError(at_offset("map: poses out of order", at));
    if (!fp.pose.is_valid(1e-6)) throw FormatError(at_offset("map: invalid pose", at));
    map.poses.push_back(fp);
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    MapCell c;
    c.id = r.get<std::int32_t>();
    c.frame = r.get<std::int32_t>();
    c.surface = r.get<std::int32_t>();
    c.area = r.get<std::uint32_t>();
    const auto flags = r.get<std::uint8_t>();
    for (auto& ch : c.mean_rgb) ch = r.get<std::uint8_t>();
    c.plane2d.a = r.get<double>();
    c.plane2d.b = r.get<double>();
    c.plane2d.c = r.get<double>();
    if (flags & 1) {
      PlaneFn3D p;
      p.a = r.get<double>();
      p.b = r.get<double>();
      p.c = r.get<double>();
      c.plane3d = p;
    } else {
      NormalPlane p;
      p.normal.x() = r.get<double>();
      p.normal.y() = r.get<double>();
      p.normal.z() = r.get<double>();
      p.offset = r.get<double>();
      c.plane3d = p;
    }
    const auto ring_count = r.get<std::uint16_t>();
    c.rings.resize(ring_count);
    for (auto& ring : c.rings) {
      const auto n = r.get<std::uint16_t>();
      if (r.remaining() < static_cast<std::size_t>(n) * 4)
        throw FormatError(at_offset("map: truncated ring", 4 + r.pos()));
      ring.corners.resize(n);
      for (std::uint16_t k = 0; k < n; ++k) {
        ring.corners[k].u = r.get<std::uint16_t>();
        ring.corners[k].v = r.get<std::uint16_t>();
      }
    }
    map.cells.push_back(std::move(c));
  }
  if (r.remaining() != 0) throw FormatError(at_offset("map: trailing bytes", 4 + r.pos()));
  try {
    derive_points(map);
  } catch (const DegenerateError& e) {
    throw FormatError(std::string("map: ") + e.what());
  }
  return map;
}

std::size_t write_map(const PlanecellMap& map, const fs::path& path) {
  const auto bytes = encode_map(map);
  write_file(path, bytes);
  return bytes.size();
}

PlanecellMap read_map(const fs::path& path) { return decode_map(read_file(path)); }

void write_map_json(const PlanecellMap& map, const fs::path& path) {
  using nlohmann::json;
  json root;
  root["version"] = kMapVersion;
  root["frame_count"] = map.frame_count;
  root["rig"] = {{"f", map.rig.f}, {"cu", map.rig.cu}, {"cv", map.rig.cv}, {"baseline", map.rig.baseline}};
  json poses = json::array();
  for (const auto& fp : map.poses) {
    json m = json::array();
    for (int r = 0; r < 3; ++r)
      m.push_back({fp.pose.rotation(r, 0), fp.pose.rotation(r, 1), fp.pose.rotation(r, 2), fp.pose.translation[r]});
    poses.push_back({{"frame", fp.frame}, {"pose", std::move(m)}});
  }
  root["poses"] = std::move(poses);
  json cells = json::array();
  for (const auto& c : map.cells) {
    json jc;
    jc["id"] = c.id;
    jc["frame"] = c.frame;
    jc["surface"] = c.surface;
    jc["area"] = c.area;
    jc["mean_rgb"] = {c.mean_rgb[0], c.mean_rgb[1], c.mean_rgb[2]};
    jc["plane2d"] = {c.plane2d.a, c.plane2d.b, c.plane2d.c};
    if (const auto* z = std::get_if<PlaneFn3D>(&c.plane3d)) {
      jc["plane3d"] = {{"form", "z"}, {"coeffs", {z->a, z->b, z->c}}};
    } else {
      const auto& n = std::get<NormalPlane>(c.plane3d);
      jc["plane3d"] = {{"form", "normal"},
                       {"coeffs", {n.normal.x(), n.normal.y(), n.normal.z(), n.offset}}};
    }
    json rings = json::array();
    for (const auto& ring : c.rings) {
      json jr = json::array();
      for (std::size_t k = 0; k < ring.corners.size(); ++k)
        jr.push_back({{"u", ring.corners[k].u},
                      {"v", ring.corners[k].v},
                      {"xyz", {ring.points[k].x(), ring.points[k].y(), ring.points[k].z()}}});
      rings.push_back(std::move(jr));
    }
    jc["rings"] = std::move(rings);
    cells.push_back(std::move(jc));
  }
  root["cells"] = std::move(cells);
  write_text(path, root.dump(1) + "\n");
}

// ---------------------------------------------------------------------------
// Exports

ColorMode parse_color_mode(std::string_view name) {
  if (name == "rgb") return ColorMode::Rgb;
  if (name == "height") return ColorMode::Height;
  if (name == "surface") return ColorMode::Surface;
  throw ParameterError("unknown colour mode: " + std::string(name));
}

Rgb height_color(double y) {
  // Piecewise-linear blue -> cyan -> green -> yellow -> red over 256 entries.
  const double t = (std::clamp(std::isfinite(y) ? y : 0.0, -2.0, 5.0) + 2.0) / 7.0;
  const int idx = static_cast<int>(std::lround(t * 255.0));
  const double s = idx / 255.0 * 4.0;
  const int seg = std::min(3, static_cast<int>(s));
  const auto ramp = static_cast<std::uint8_t>(std::lround((s - seg) * 255.0));
  const auto down = static_cast<std::uint8_t>(255 - ramp);
  switch (seg) {
    case 0: return {0, ramp, 255};
    case 1: return {0, 255, down};
    case 2: return {ramp, 255, 0};
    default: return {255, down, 0};
  }
}

Rgb surface_color(std::int32_t surface) {
  std::uint64_t z = static_cast<std::uint64_t>(static_cast<std::uint32_t>(surface)) + 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  // keep colours away from black so faces stay visible
  return {static_cast<std::uint8_t>(64 + (z & 0xff) % 192),
          static_cast<std::uint8_t>(64 + ((z >> 8) & 0xff) % 192),
          static_cast<std::uint8_t>(64 + ((z >> 16) & 0xff) % 192)};
}

std::vector<std::array<int, 3>> triangulate(const topology::Ring& ring) {
  const int n = static_cast<int>(ring.size());
  std::vector<std::array<int, 3>> tris;
  if (n < 3) return tris;
  const double orient = topology::signed_area(ring) >= 0.0 ? 1.0 : -1.0;
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  const auto cross = [&](int a, int b, int c) {
    const auto& A = ring[a];
    const auto& B = ring[b];
    const auto& C = ring[c];
    return static_cast<double>(B.u - A.u) * (C.v - A.v) - static_cast<double>(B.v - A.v) * (C.u - A.u);
  };
  // point p inside or on the closed triangle abc (same orientation as the ring)
  const auto inside = [&](int a, int b, int c, int p) {
    return orient * cross(a, b, p) >= 0 && orient * cross(b, c, p) >= 0 && orient * cross(c, a, p) >= 0;
  };
  std::size_t guard = 0;
  while (idx.size() > 3 && guard < ring.size() * ring.size() + 8) {
    ++guard;
    bool clipped = false;
    const int m = static_cast<int>(idx.size());
    for (int k = 0; k < m; ++k) {
      const int a = idx[(k + m - 1) % m], b = idx[k], c = idx[(k + 1) % m];
      const double cr = orient * cross(a, b, c);
      if (cr < 0) continue;  // reflex
      if (cr == 0) {         // collinear: drop the middle vertex
        idx.erase(idx.begin() + k);
        clipped = true;
        break;
      }
      bool ear = true;
      for (int q = 0; q < m && ear; ++q) {
        const int p = idx[q];
        if (p == a || p == b || p == c) continue;
        if (ring[p] == ring[a] || ring[p] == ring[b] || ring[p] == ring[c]) continue;
        if (inside(a, b, c, p)) ear = false;
      }
      if (!ear) continue;
      tris.push_back(orient > 0 ? std::array<int, 3>{a, b, c} : std::array<int, 3>{a, c, b});
      idx.erase(idx.begin() + k);
      clipped = true;
      break;
    }
    if (!clipped) break;
  }
  if (idx.size() == 3 && orient * cross(idx[0], idx[1], idx[2]) > 0)
    tris.push_back(orient > 0 ? std::array<int, 3>{idx[0], idx[1], idx[2]}
                              : std::array<int, 3>{idx[0], idx[2], idx[1]});
  return tris;
}

void write_ply(const PlanecellMap& map, ColorMode mode, const fs::path& path) {
  std::size_t vertex_count = 0;
  std::vector<std::vector<std::array<int, 3>>> tris(map.cells.size());
  std::size_t face_count = 0;
  for (std::size_t i = 0; i < map.cells.size(); ++i) {
    const auto& c = map.cells[i];
    if (c.rings.empty()) continue;
    vertex_count += c.rings[0].points.size();
    tris[i] = triangulate(c.rings[0].corners);
    face_count += tris[i].size();
  }
  std::string out;
  out += "ply\nformat ascii 1.0\ncomment planecell map\n";
  out += "element vertex " + std::to_string(vertex_count) + "\n";
  out += "property float x\nproperty float y\nproperty float z\n";
  out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "element face " + std::to_string(face_count) + "\n";
  out += "property list uchar int vertex_indices\nend_header\n";
  for (const auto& c : map.cells) {
    if (c.rings.empty()) continue;
    for (const auto& p : c.rings[0].points) {
      Rgb col = c.mean_rgb;
      if (mode == ColorMode::Height) col = height_color(p.y());
      if (mode == ColorMode::Surface) col = surface_color(c.surface >= 0 ? c.surface : c.id);
      out += fmt(p.x()) + " " + fmt(p.y()) + " " + fmt(p.z()) + " " + std::to_string(col[0]) + " " +
             std::to_string(col[1]) + " " + std::to_string(col[2]) + "\n";
    }
  }
  std::size_t base = 0;
  for (std::size_t i = 0; i < map.cells.size(); ++i) {
    if (map.cells[i].rings.empty()) continue;
    for (const auto& t : tris[i])
      out += "3 " + std::to_string(base + t[0]) + " " + std::to_string(base + t[1]) + " " +
             std::to_string(base + t[2]) + "\n";
    base += map.cells[i].rings[0].points.size();
  }
  write_text(path, out);
}

void write_label_png(int width, int height, std::span<const std::int32_t> labels,
                     const fs::path& path) {
  std::vector<std::uint16_t> raw(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) raw[i] = static_cast<std::uint16_t>(labels[i]);
  write_png_gray16(width, height, raw, path);
}

void write_boundary_overlay(const ColorImage& img, std::span<const std::int32_t> labels,
                            const fs::path& path) {
  if (labels.size() != img.data.size()) throw ParameterError("overlay: label map size mismatch");
  ColorImage out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto l = labels[static_cast<std::size_t>(y) * img.width + x];
      const bool edge = (x + 1 < img.width && labels[static_cast<std::size_t>(y) * img.width + x + 1] != l) ||
                        (y + 1 < img.height && labels[static_cast<std::size_t>(y + 1) * img.width + x] != l);
      if (edge) out.at(x, y) = {255, 0, 0};
    }
  write_png(out, path);
}

void write_svg(const PlanecellMap& map, std::int32_t frame, int width, int height,
               const fs::path& path) {
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
                    "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " +
                    std::to_string(width) + " " + std::to_string(height) + "\">\n";
  for (const auto& c : map.cells) {
    if (c.frame != frame) continue;
    std::string d;
    for (const auto& ring : c.rings) {
      for (std::size_t k = 0; k < ring.corners.size(); ++k)
        d += (k == 0 ? "M" : "L") + std::to_string(ring.corners[k].u) + " " +
             std::to_string(ring.corners[k].v) + " ";
      d += "Z ";
    }
    char fill[8];
    std::snprintf(fill, sizeof fill, "#%02x%02x%02x", c.mean_rgb[0], c.mean_rgb[1], c.mean_rgb[2]);
    out += "<path d=\"" + d + "\" fill=\"" + fill +
           "\" fill-rule=\"evenodd\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
  }
  out += "</svg>\n";
  write_text(path, out);
}

}  // namespace planecell::io
