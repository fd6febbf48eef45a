#pragma once

// Grayscale stay-time images and their per-car K-channel stacks.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <zlib.h>

#include "rsdetect/core.hpp"

namespace rsdetect {

inline constexpr double kDefaultSaturationSeconds = 3600.0;
inline constexpr int kDefaultDays = 7;

struct TrajectoryImage {
  Grid<double> pixels;  // real values in [0, 255]
  int day_index = 0;
};

/// pixel = min(t / T, 1) * 255, left unquantised.
inline TrajectoryImage render_image(const Grid<double>& stay_seconds, double saturation_seconds = kDefaultSaturationSeconds,
                                    int day_index = 0) {
  if (!(saturation_seconds > 0.0)) throw Error(ErrorKind::ConfigError, "image saturation time must be positive");
  TrajectoryImage img{Grid<double>(stay_seconds.rows, stay_seconds.cols, 0.0), day_index};
  for (std::size_t i = 0; i < stay_seconds.data.size(); ++i)
    img.pixels.data[i] = std::min(stay_seconds.data[i] / saturation_seconds, 1.0) * 255.0;
  return img;
}

inline Grid<double> normalize(const TrajectoryImage& img) {
  Grid<double> out(img.pixels.rows, img.pixels.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = img.pixels.data[i] / 255.0;
  return out;
}

struct ImageStack {
  std::string vehicle_id;
  int rows = 0;
  int cols = 0;
  std::vector<TrajectoryImage> channels;  // K entries in day order
  std::vector<std::uint8_t> missing;      // 1 where the day had no data

  int days() const { return static_cast<int>(channels.size()); }
  int present_days() const {
    return static_cast<int>(std::count(missing.begin(), missing.end(), std::uint8_t{0}));
  }

  std::uint64_t missing_mask() const {
    std::uint64_t m = 0;
    for (std::size_t k = 0; k < missing.size() && k < 64; ++k)
      if (missing[k]) m |= (std::uint64_t{1} << k);
    return m;
  }

  /// Normalised K x M x N tensor, channel-major.
  template <typename T>
  std::vector<T> tensor() const {
    std::vector<T> out;
    out.reserve(channels.size() * static_cast<std::size_t>(rows) * cols);
    for (const auto& ch : channels)
      for (double v : ch.pixels.data) out.push_back(static_cast<T>(v / 255.0));
    return out;
  }

  /// Normalised single channel.
  template <typename T>
  std::vector<T> channel_tensor(int k) const {
    std::vector<T> out;
    out.reserve(static_cast<std::size_t>(rows) * cols);
    for (double v : channels.at(static_cast<std::size_t>(k)).pixels.data) out.push_back(static_cast<T>(v / 255.0));
    return out;
  }
};

/// Places each image at its day_index channel; absent days become zero
/// channels flagged in `missing`.
inline ImageStack stack(const std::vector<TrajectoryImage>& images, int K, int rows, int cols,
                        std::string vehicle_id = {}) {
  if (K < 1) throw Error(ErrorKind::ConfigError, "stack needs K >= 1");
  if (static_cast<int>(images.size()) > K)
    throw Error(ErrorKind::ConfigError, "more day images than configured channel count");
  ImageStack s;
  s.vehicle_id = std::move(vehicle_id);
  s.rows = rows;
  s.cols = cols;
  s.missing.assign(static_cast<std::size_t>(K), 1);
  for (int k = 0; k < K; ++k) s.channels.push_back(TrajectoryImage{Grid<double>(rows, cols, 0.0), k});
  for (const auto& img : images) {
    if (img.pixels.rows != rows || img.pixels.cols != cols)
      throw Error(ErrorKind::ShapeError, "image dimensions differ from the stack");
    if (img.day_index < 0 || img.day_index >= K)
      throw Error(ErrorKind::ConfigError, "day index outside the stack's day range");
    s.channels[static_cast<std::size_t>(img.day_index)] = img;
    s.missing[static_cast<std::size_t>(img.day_index)] = 0;
  }
  return s;
}

struct ImageConfig {
  double tz_offset_hours = 0.0;
  double gap_cap = kDefaultGapCapSeconds;
  double saturation_seconds = kDefaultSaturationSeconds;
  int days = kDefaultDays;
};

/// Renders a vehicle's stay-time images, channel k being local day first_day + k.
inline ImageStack build_image_stack(const Trajectory& t, const GridSpec& g, const ImageConfig& cfg,
                                    std::int64_t first_day) {
  std::vector<TrajectoryImage> imgs;
  for (const auto& seg : segment_days(t, cfg.tz_offset_hours)) {
    const std::int64_t k = seg.calendar_day - first_day;
    if (k < 0 || k >= cfg.days) continue;
    imgs.push_back(render_image(stay_time_grid(seg, g, cfg.gap_cap), cfg.saturation_seconds, static_cast<int>(k)));
  }
  return stack(imgs, cfg.days, g.rows, g.cols, t.vehicle_id);
}

// --- TIMG tensor file -------------------------------------------------------
// 'TIMG', u32 version=1, u32 M, u32 N, u32 K, then K*M*N little-endian f32
// pixel values (0..255) row-major. All-zero channels read back as missing.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorKind::DataError, "truncated binary file");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

inline void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

}  // namespace detail

inline void write_timg(std::ostream& out, const ImageStack& s) {
  out.write("TIMG", 4);
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(s.rows));
  detail::put_u32(out, static_cast<std::uint32_t>(s.cols));
  detail::put_u32(out, static_cast<std::uint32_t>(s.channels.size()));
  for (const auto& ch : s.channels)
    for (double v : ch.pixels.data) detail::put_f32(out, static_cast<float>(v));
}

inline ImageStack read_timg(std::istream& in, std::string vehicle_id = {}) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "TIMG", 4) != 0) throw Error(ErrorKind::DataError, "not a TIMG file");
  const auto version = detail::get_u32(in);
  if (version != 1) throw Error(ErrorKind::DataError, "unsupported TIMG version " + std::to_string(version));
  const auto m = static_cast<int>(detail::get_u32(in));
  const auto n = static_cast<int>(detail::get_u32(in));
  const auto k = static_cast<int>(detail::get_u32(in));
  if (m < 1 || n < 1 || k < 1 || m > 4096 || n > 4096 || k > 366) throw Error(ErrorKind::DataError, "bad TIMG dims");
  std::vector<TrajectoryImage> imgs;
  for (int c = 0; c < k; ++c) {
    TrajectoryImage img{Grid<double>(m, n, 0.0), c};
    bool any = false;
    for (auto& v : img.pixels.data) {
      v = detail::get_f32(in);
      any = any || v != 0.0;
    }
    if (any) imgs.push_back(std::move(img));
  }
  return stack(imgs, k, m, n, std::move(vehicle_id));
}

inline void write_timg_file(const std::string& path, const ImageStack& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::DataError, "cannot write " + path);
  write_timg(out, s);
}

inline ImageStack read_timg_file(const std::string& path, std::string vehicle_id = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::DataError, "cannot open " + path);
  return read_timg(in, std::move(vehicle_id));
}

// --- PNG export (8-bit grayscale, inspection only) --------------------------

/// Rounds half to even into 0..255.
inline std::uint8_t quantize_pixel(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
}

namespace detail {

inline void png_chunk(std::ostream& out, const char* type, const std::vector<unsigned char>& data) {
  const auto be32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  be32(static_cast<std::uint32_t>(data.size()));
  out.write(type, 4);
  if (!data.empty()) out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
  be32(static_cast<std::uint32_t>(crc));
}

}  // namespace detail

inline void write_png(std::ostream& out, const TrajectoryImage& img) {
  const int h = img.pixels.rows;
  const int w = img.pixels.cols;
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<unsigned char> ihdr = {
      static_cast<unsigned char>(w >> 24), static_cast<unsigned char>(w >> 16), static_cast<unsigned char>(w >> 8),
      static_cast<unsigned char>(w),       static_cast<unsigned char>(h >> 24), static_cast<unsigned char>(h >> 16),
      static_cast<unsigned char>(h >> 8),  static_cast<unsigned char>(h),       8, 0, 0, 0, 0};
  detail::png_chunk(out, "IHDR", ihdr);

  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(h) * (w + 1));
  for (int r = 0; r < h; ++r) {
    raw.push_back(0);  // filter: none
    for (int c = 0; c < w; ++c) raw.push_back(quantize_pixel(img.pixels(r, c)));
  }
  uLongf clen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(clen);
  if (compress(comp.data(), &clen, raw.data(), static_cast<uLong>(raw.size())) != Z_OK)
    throw Error(ErrorKind::DataError, "PNG compression failed");
  comp.resize(clen);
  detail::png_chunk(out, "IDAT", comp);
  detail::png_chunk(out, "IEND", {});
}

}  // namespace rsdetect
