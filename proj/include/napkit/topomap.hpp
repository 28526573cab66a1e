#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "napkit/delaunay.hpp"
#include "napkit/error.hpp"
#include "napkit/groups.hpp"
#include "napkit/image.hpp"
#include "napkit/layout.hpp"

namespace napkit {

/// Percentile with linear interpolation between order statistics
/// (rank p/100 * (n - 1) in the sorted sample).
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorKind::argument, "percentile of an empty collection");
  std::sort(values.begin(), values.end());
  const double rank = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

/// Zero-symmetric blue -> white -> red scale over [-vmax, vmax].
class ColorScale {
 public:
  static constexpr Rgb negative_end{0, 0, 255};
  static constexpr Rgb positive_end{255, 0, 0};

  explicit ColorScale(double vmax = 1.0, double percentile = 99.5) : vmax_(vmax), percentile_(percentile) {
    if (!(vmax > 0.0) || !std::isfinite(vmax)) throw Error(ErrorKind::argument, "color scale end must be positive");
  }

  double vmax() const { return vmax_; }
  double percentile() const { return percentile_; }

  Rgb operator()(double value) const {
    const double t = std::clamp(value / vmax_, -1.0, 1.0);
    // Shared magnitude path for both signs keeps map(-v) an exact R/B swap of map(v).
    const auto fade = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::abs(t))));
    if (t > 0.0) return {255, fade, fade};
    if (t < 0.0) return {fade, fade, 255};
    return white;
  }

 private:
  double vmax_;
  double percentile_;
};

/// vmax = max(|P(100 - p)|, |P(p)|); an all-zero sample falls back to 1.
inline ColorScale build_color_scale(std::span<const double> values, double pct = 99.5) {
  if (values.empty()) throw Error(ErrorKind::argument, "color scale needs at least one value");
  std::vector<double> v(values.begin(), values.end());
  const double lo = percentile(v, 100.0 - pct);
  const double hi = percentile(std::move(v), pct);
  const double vmax = std::max(std::abs(lo), std::abs(hi));
  return ColorScale(vmax > 0.0 ? vmax : 1.0, pct);
}

/// Piecewise-linear interpolant over the Delaunay triangulation of the
/// particles, extended by the nearest particle's value outside the hull.
class LinearInterpolator {
 public:
  LinearInterpolator(std::span<const Vec2> points, std::span<const double> values)
      : points_(points.begin(), points.end()), values_(values.begin(), values.end()) {
    if (points.size() != values.size()) {
      throw Error(ErrorKind::shape, "profile has " + std::to_string(values.size()) + " values for " +
                                        std::to_string(points.size()) + " particles");
    }
    if (points.empty()) throw Error(ErrorKind::argument, "interpolation needs at least one particle");
    if (points.size() >= 3) triangles_ = delaunay(points);
  }

  const std::vector<Triangle>& triangles() const { return triangles_; }

  std::optional<double> in_triangle(const Triangle& t, double x, double y) const {
    const auto& a = points_[t[0]];
    const auto& b = points_[t[1]];
    const auto& c = points_[t[2]];
    const double det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if (det == 0.0) return std::nullopt;
    double w0 = ((b[1] - c[1]) * (x - c[0]) + (c[0] - b[0]) * (y - c[1])) / det;
    double w1 = ((c[1] - a[1]) * (x - c[0]) + (a[0] - c[0]) * (y - c[1])) / det;
    double w2 = 1.0 - w0 - w1;
    constexpr double eps = -1e-12;
    if (w0 < eps || w1 < eps || w2 < eps) return std::nullopt;
    w0 = std::max(w0, 0.0);
    w1 = std::max(w1, 0.0);
    w2 = std::max(w2, 0.0);
    const double sum = w0 + w1 + w2;
    const double v = (w0 * values_[t[0]] + w1 * values_[t[1]] + w2 * values_[t[2]]) / sum;
    const double lo = std::min({values_[t[0]], values_[t[1]], values_[t[2]]});
    const double hi = std::max({values_[t[0]], values_[t[1]], values_[t[2]]});
    return std::clamp(v, lo, hi);
  }

  double nearest(double x, double y) const {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const double dx = points_[i][0] - x, dy = points_[i][1] - y;
      const double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return values_[best];
  }

  double operator()(double x, double y) const {
    for (const auto& t : triangles_) {
      if (auto v = in_triangle(t, x, y)) return *v;
    }
    return nearest(x, y);
  }

 private:
  std::vector<Vec2> points_;
  std::vector<double> values_;
  std::vector<Triangle> triangles_;
};

/// Square grid of interpolated values; row 0 is the top (largest y).
struct RasterGrid {
  std::size_t resolution = 0;
  std::vector<double> values;
  double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;

  double at(std::size_t col, std::size_t row) const { return values[row * resolution + col]; }
};

struct GridFrame {
  double x0, x1, y0, y1;
};

// Bounding box of the layout plus a 5% margin on every side.
inline GridFrame layout_frame(std::span<const Vec2> coords) {
  double x0 = coords[0][0], x1 = x0, y0 = coords[0][1], y1 = y0;
  for (const auto& p : coords) {
    x0 = std::min(x0, p[0]);
    x1 = std::max(x1, p[0]);
    y0 = std::min(y0, p[1]);
    y1 = std::max(y1, p[1]);
  }
  double w = x1 - x0, h = y1 - y0;
  const double fallback = std::max({w, h, 1.0});
  if (!(w > 0.0)) {
    x0 -= fallback / 2;
    x1 += fallback / 2;
    w = fallback;
  }
  if (!(h > 0.0)) {
    y0 -= fallback / 2;
    y1 += fallback / 2;
    h = fallback;
  }
  return {x0 - 0.05 * w, x1 + 0.05 * w, y0 - 0.05 * h, y1 + 0.05 * h};
}

inline RasterGrid rasterize(const ParticleLayout& layout, std::span<const double> profile,
                            std::size_t resolution = 100) {
  if (resolution == 0) throw Error(ErrorKind::argument, "resolution must be positive");
  const LinearInterpolator interp(layout.coords, profile);
  const GridFrame f = layout_frame(layout.coords);
  RasterGrid g{resolution, std::vector<double>(resolution * resolution, 0.0), f.x0, f.x1, f.y0, f.y1};
  std::vector<char> filled(resolution * resolution, 0);
  const double res = static_cast<double>(resolution);
  auto px = [&](std::size_t col) { return f.x0 + (static_cast<double>(col) + 0.5) / res * (f.x1 - f.x0); };
  auto py = [&](std::size_t row) { return f.y1 - (static_cast<double>(row) + 0.5) / res * (f.y1 - f.y0); };
  auto col_of = [&](double x) { return (x - f.x0) / (f.x1 - f.x0) * res - 0.5; };
  auto row_of = [&](double y) { return (f.y1 - y) / (f.y1 - f.y0) * res - 0.5; };
  auto clamp_index = [&](double v) { return static_cast<std::size_t>(std::clamp(v, 0.0, res - 1.0)); };
  for (const auto& t : interp.triangles()) {
    double tx0 = layout.coords[t[0]][0], tx1 = tx0, ty0 = layout.coords[t[0]][1], ty1 = ty0;
    for (std::size_t k = 1; k < 3; ++k) {
      tx0 = std::min(tx0, layout.coords[t[k]][0]);
      tx1 = std::max(tx1, layout.coords[t[k]][0]);
      ty0 = std::min(ty0, layout.coords[t[k]][1]);
      ty1 = std::max(ty1, layout.coords[t[k]][1]);
    }
    const std::size_t c0 = clamp_index(std::floor(col_of(tx0))), c1 = clamp_index(std::ceil(col_of(tx1)));
    const std::size_t r0 = clamp_index(std::floor(row_of(ty1))), r1 = clamp_index(std::ceil(row_of(ty0)));
    for (std::size_t r = r0; r <= r1; ++r) {
      for (std::size_t c = c0; c <= c1; ++c) {
        const std::size_t idx = r * resolution + c;
        if (filled[idx]) continue;
        if (auto v = interp.in_triangle(t, px(c), py(r))) {
          g.values[idx] = *v;
          filled[idx] = 1;
        }
      }
    }
  }
  for (std::size_t r = 0; r < resolution; ++r) {
    for (std::size_t c = 0; c < resolution; ++c) {
      const std::size_t idx = r * resolution + c;
      if (!filled[idx]) g.values[idx] = interp.nearest(px(c), py(r));
    }
  }
  return g;
}

inline RgbImage render_group(const RasterGrid& grid, const ColorScale& scale) {
  RgbImage img(grid.resolution, grid.resolution);
  for (std::size_t r = 0; r < grid.resolution; ++r) {
    for (std::size_t c = 0; c < grid.resolution; ++c) img.set(c, r, scale(grid.at(c, r)));
  }
  return img;
}

/// Composite in frequency-table order: one row per (race, gender), one column
/// per age. Groups without a map are left as empty grey cells.
inline RgbImage render_grid(const std::map<GroupKey, RgbImage>& maps, const Schema& schema,
                            const std::string& title = {}) {
  const std::size_t R = schema.size(Variable::race), A = schema.size(Variable::age), G = schema.size(Variable::gender);
  std::size_t cell = 0;
  for (const auto& [k, img] : maps) cell = std::max({cell, img.width(), img.height()});
  if (cell == 0) cell = 100;
  long label_w = 0;
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t g = 0; g < G; ++g) {
      label_w = std::max(label_w, RgbImage::text_width(schema.vocabulary(Variable::race)[r] + ", " +
                                                       schema.vocabulary(Variable::gender)[g]));
    }
  }
  const long gap = 4;
  const long c = static_cast<long>(cell);
  const long left = label_w + 12;
  const long top = title.empty() ? 20 : 38;
  const long width = left + static_cast<long>(A) * (c + gap) + 8;
  const long height = top + static_cast<long>(R * G) * (c + gap) + 8;
  RgbImage out(static_cast<std::size_t>(width), static_cast<std::size_t>(height));
  const Rgb label_color{40, 40, 40}, border{190, 190, 190}, empty_fill{236, 236, 236};
  if (!title.empty()) out.text(8, 6, title, black);
  for (std::size_t a = 0; a < A; ++a) {
    const std::string& label = schema.vocabulary(Variable::age)[a];
    const long x = left + static_cast<long>(a) * (c + gap) + (c - RgbImage::text_width(label)) / 2;
    out.text(x, top - 16, label, label_color);
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t g = 0; g < G; ++g) {
      const long row = static_cast<long>(r * G + g);
      const long y = top + row * (c + gap);
      const std::string label = schema.vocabulary(Variable::race)[r] + ", " + schema.vocabulary(Variable::gender)[g];
      out.text(left - 8 - RgbImage::text_width(label), y + (c - font::glyph_height) / 2, label, label_color);
      for (std::size_t a = 0; a < A; ++a) {
        const long x = left + static_cast<long>(a) * (c + gap);
        const auto it = maps.find(GroupKey{r, a, g});
        if (it == maps.end()) {
          out.fill_rect(x, y, c, c, empty_fill);
        } else {
          out.blit(it->second, x, y);
        }
        out.frame(x - 1, y - 1, c + 2, c + 2, border);
      }
    }
  }
  return out;
}

// Cell grid dimensions of `render_grid` for a schema: rows, columns.
inline std::pair<std::size_t, std::size_t> grid_dims(const Schema& s) {
  return {s.size(Variable::race) * s.size(Variable::gender), s.size(Variable::age)};
}

}  // namespace napkit
