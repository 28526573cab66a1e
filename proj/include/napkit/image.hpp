#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "napkit/error.hpp"
#include "napkit/font.hpp"

namespace napkit {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb white{255, 255, 255};
inline constexpr Rgb black{0, 0, 0};

/// 8-bit RGB raster, row-major, top row first.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::size_t width, std::size_t height, Rgb fill = white)
      : width_(width), height_(height), pixels_(width * height * 3) {
    for (std::size_t i = 0; i < width * height; ++i) std::copy(fill.begin(), fill.end(), pixels_.begin() + i * 3);
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  const std::vector<std::uint8_t>& pixels() const { return pixels_; }

  Rgb at(std::size_t x, std::size_t y) const {
    const std::size_t o = (y * width_ + x) * 3;
    return {pixels_[o], pixels_[o + 1], pixels_[o + 2]};
  }

  void set(std::size_t x, std::size_t y, Rgb c) {
    const std::size_t o = (y * width_ + x) * 3;
    pixels_[o] = c[0];
    pixels_[o + 1] = c[1];
    pixels_[o + 2] = c[2];
  }

  // Clipped to the image bounds.
  void plot(long x, long y, Rgb c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(width_) || y >= static_cast<long>(height_)) return;
    set(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c);
  }

  void fill_rect(long x0, long y0, long w, long h, Rgb c) {
    for (long y = y0; y < y0 + h; ++y) {
      for (long x = x0; x < x0 + w; ++x) plot(x, y, c);
    }
  }

  void frame(long x0, long y0, long w, long h, Rgb c) {
    for (long x = x0; x < x0 + w; ++x) {
      plot(x, y0, c);
      plot(x, y0 + h - 1, c);
    }
    for (long y = y0; y < y0 + h; ++y) {
      plot(x0, y, c);
      plot(x0 + w - 1, y, c);
    }
  }

  void blit(const RgbImage& src, long x0, long y0) {
    for (std::size_t y = 0; y < src.height(); ++y) {
      for (std::size_t x = 0; x < src.width(); ++x) {
        plot(x0 + static_cast<long>(x), y0 + static_cast<long>(y), src.at(x, y));
      }
    }
  }

  void line(long x0, long y0, long x1, long y1, Rgb c) {
    const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    for (;;) {
      plot(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void text(long x, long y, std::string_view s, Rgb c) {
    for (char ch : s) {
      if (const auto* g = font::glyph(ch)) {
        for (int row = 0; row < font::glyph_height; ++row) {
          for (int col = 0; col < font::glyph_width; ++col) {
            if ((*g)[static_cast<std::size_t>(row)] & (1u << (font::glyph_width - 1 - col))) plot(x + col, y + row, c);
          }
        }
      }
      x += font::glyph_width;
    }
  }

  static long text_width(std::string_view s) { return static_cast<long>(s.size()) * font::glyph_width; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// Swaps the red and blue channels of every pixel.
inline RgbImage swap_red_blue(const RgbImage& img) {
  RgbImage out = img;
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const Rgb p = img.at(x, y);
      out.set(x, y, {p[2], p[1], p[0]});
    }
  }
  return out;
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  std::vector<std::uint8_t> raw;
  raw.reserve(img.height() * (img.width() * 3 + 1));
  for (std::size_t y = 0; y < img.height(); ++y) {
    raw.push_back(0);
    const auto row = img.pixels().begin() + static_cast<std::ptrdiff_t>(y * img.width() * 3);
    raw.insert(raw.end(), row, row + static_cast<std::ptrdiff_t>(img.width() * 3));
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw Error(ErrorKind::io, "zlib compression failed");
  }
  packed.resize(packed_size);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_u32(ihdr, static_cast<std::uint32_t>(img.width()));
  detail::put_u32(ihdr, static_cast<std::uint32_t>(img.height()));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit truecolor, no interlace
  detail::put_chunk(out, "IHDR", ihdr);
  detail::put_chunk(out, "IDAT", packed);
  detail::put_chunk(out, "IEND", {});
  return out;
}

inline void write_png(const RgbImage& img, const std::filesystem::path& path) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

struct ChartSeries {
  std::string name;
  std::vector<double> y;
  Rgb color;
};

/// Plain line chart over x = 0..n-1 with a fixed [0, 1] y range.
inline RgbImage line_chart(const std::string& title, const std::vector<std::string>& x_labels,
                           const std::vector<ChartSeries>& series, std::size_t width = 560, std::size_t height = 340) {
  RgbImage img(width, height);
  const long left = 44, right = static_cast<long>(width) - 16, top = 28, bottom = static_cast<long>(height) - 40;
  const Rgb axis{60, 60, 60}, grid{225, 225, 225};
  img.text(left, 8, title, black);
  for (int k = 0; k <= 4; ++k) {
    const long y = bottom - (bottom - top) * k / 4;
    img.line(left, y, right, y, grid);
    const std::string label = k == 0 ? "0" : k == 4 ? "1" : "0." + std::to_string(k * 25);
    img.text(left - 6 - RgbImage::text_width(label), y - 5, label, axis);
  }
  img.line(left, top, left, bottom, axis);
  img.line(left, bottom, right, bottom, axis);
  std::size_t n = 0;
  for (const auto& s : series) n = std::max(n, s.y.size());
  auto xpos = [&](std::size_t i) {
    return n <= 1 ? (left + right) / 2 : left + static_cast<long>(i) * (right - left) / static_cast<long>(n - 1);
  };
  auto ypos = [&](double v) {
    return bottom - static_cast<long>(std::lround(std::clamp(v, 0.0, 1.0) * static_cast<double>(bottom - top)));
  };
  if (!x_labels.empty() && n > 0) {
    const std::size_t every = std::max<std::size_t>(1, (x_labels.size() + 7) / 8);
    for (std::size_t i = 0; i < x_labels.size() && i < n; i += every) {
      const long x = xpos(i);
      img.line(x, bottom, x, bottom + 3, axis);
      img.text(x - RgbImage::text_width(x_labels[i]) / 2, bottom + 6, x_labels[i], axis);
    }
  }
  long legend_x = left + 8;
  for (const auto& s : series) {
    for (std::size_t i = 1; i < s.y.size(); ++i)
      img.line(xpos(i - 1), ypos(s.y[i - 1]), xpos(i), ypos(s.y[i]), s.color);
    for (std::size_t i = 0; i < s.y.size(); ++i) img.fill_rect(xpos(i) - 1, ypos(s.y[i]) - 1, 3, 3, s.color);
    img.fill_rect(legend_x, static_cast<long>(height) - 16, 10, 3, s.color);
    img.text(legend_x + 14, static_cast<long>(height) - 20, s.name, black);
    legend_x += 14 + RgbImage::text_width(s.name) + 16;
  }
  return img;
}

}  // namespace napkit
