#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <span>
#include <utility>
#include <vector>

namespace napkit {

using Triangle = std::array<std::size_t, 3>;

/// Bowyer-Watson triangulation of 2D points. Exact duplicates of an earlier
/// point are skipped; collinear input yields no triangles.
inline std::vector<Triangle> delaunay(std::span<const std::array<double, 2>> input) {
  const std::size_t n = input.size();
  if (n < 3) return {};
  double x0 = input[0][0], x1 = x0, y0 = input[0][1], y1 = y0;
  for (const auto& p : input) {
    x0 = std::min(x0, p[0]);
    x1 = std::max(x1, p[0]);
    y0 = std::min(y0, p[1]);
    y1 = std::max(y1, p[1]);
  }
  const double extent = std::max(x1 - x0, y1 - y0);
  if (!(extent > 0.0)) return {};

  // Work in the unit box for conditioning; the three trailing points form the super-triangle.
  std::vector<std::array<double, 2>> pts(n + 3);
  for (std::size_t i = 0; i < n; ++i) pts[i] = {(input[i][0] - x0) / extent, (input[i][1] - y0) / extent};
  pts[n] = {-19.5, -0.5};
  pts[n + 1] = {0.5, 20.5};
  pts[n + 2] = {20.5, -0.5};

  struct Tri {
    Triangle v;
    double cx, cy, r2;
  };
  auto make = [&](std::size_t a, std::size_t b, std::size_t c) {
    const auto& A = pts[a];
    const auto& B = pts[b];
    const auto& C = pts[c];
    const double d = 2.0 * (A[0] * (B[1] - C[1]) + B[0] * (C[1] - A[1]) + C[0] * (A[1] - B[1]));
    const double a2 = A[0] * A[0] + A[1] * A[1], b2 = B[0] * B[0] + B[1] * B[1], c2 = C[0] * C[0] + C[1] * C[1];
    Tri t{{a, b, c}, 0.0, 0.0, 0.0};
    if (d == 0.0) {
      t.r2 = -1.0;  // degenerate: never contains a point
      return t;
    }
    t.cx = (a2 * (B[1] - C[1]) + b2 * (C[1] - A[1]) + c2 * (A[1] - B[1])) / d;
    t.cy = (a2 * (C[0] - B[0]) + b2 * (A[0] - C[0]) + c2 * (B[0] - A[0])) / d;
    t.r2 = (A[0] - t.cx) * (A[0] - t.cx) + (A[1] - t.cy) * (A[1] - t.cy);
    return t;
  };

  std::vector<Tri> tris = {make(n, n + 1, n + 2)};
  std::map<std::array<double, 2>, bool> inserted;
  for (std::size_t i = 0; i < n; ++i) {
    if (!inserted.emplace(pts[i], true).second) continue;
    const auto& p = pts[i];
    std::vector<Tri> keep;
    std::map<std::pair<std::size_t, std::size_t>, int> edges;
    for (const auto& t : tris) {
      const double dx = p[0] - t.cx, dy = p[1] - t.cy;
      if (t.r2 >= 0.0 && dx * dx + dy * dy < t.r2 * (1.0 + 1e-12)) {
        for (int e = 0; e < 3; ++e) {
          std::size_t a = t.v[static_cast<std::size_t>(e)], b = t.v[static_cast<std::size_t>((e + 1) % 3)];
          if (a > b) std::swap(a, b);
          ++edges[{a, b}];
        }
      } else {
        keep.push_back(t);
      }
    }
    for (const auto& [edge, count] : edges) {
      if (count == 1) keep.push_back(make(edge.first, edge.second, i));
    }
    tris.swap(keep);
  }
  std::vector<Triangle> out;
  for (const auto& t : tris) {
    if (t.r2 < 0.0) continue;
    if (t.v[0] >= n || t.v[1] >= n || t.v[2] >= n) continue;
    out.push_back(t.v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace napkit
