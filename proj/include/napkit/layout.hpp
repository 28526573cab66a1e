#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "napkit/csv.hpp"
#include "napkit/error.hpp"
#include "napkit/nap.hpp"
#include "napkit/parallel.hpp"
#include "napkit/rng.hpp"

namespace napkit {

using Vec2 = std::array<double, 2>;

/// Rows are channels, columns are per-group channel-profile values.
struct ChannelFeatureMatrix {
  std::size_t layer_id = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major [rows, cols]

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

template <typename Real>
ChannelFeatureMatrix channel_features(const NapSet<Real>& set) {
  ChannelFeatureMatrix m;
  m.layer_id = set.layer_id;
  m.rows = set.layer.channels();
  m.cols = set.naps.size();
  m.values.assign(m.rows * m.cols, 0.0);
  for (std::size_t g = 0; g < m.cols; ++g) {
    const auto& profile = set.naps[g].channel_profile;
    if (profile.size() != m.rows) throw Error(ErrorKind::shape, "channel profile length mismatch");
    for (std::size_t c = 0; c < m.rows; ++c) m.values[c * m.cols + g] = static_cast<double>(profile[c]);
  }
  return m;
}

enum class ProjectionMethod { pca, neighbor_embedding };

inline std::string to_string(ProjectionMethod m) { return m == ProjectionMethod::pca ? "pca" : "neighbor-embedding"; }

inline ProjectionMethod parse_projection_method(const std::string& s) {
  if (s == "pca") return ProjectionMethod::pca;
  if (s == "neighbor-embedding" || s == "umap") return ProjectionMethod::neighbor_embedding;
  throw Error(ErrorKind::argument, "unknown projection method '" + s + "'");
}

struct ParticleLayout {
  std::vector<Vec2> coords;
  std::uint64_t seed = 0;
  std::size_t iterations_run = 0;
};

// Shift to the centroid and scale so the RMS distance from it is 1; an
// all-coincident layout is left at the origin.
inline void normalize_rms(std::vector<Vec2>& pts) {
  if (pts.empty()) return;
  Vec2 centroid{0.0, 0.0};
  for (const auto& p : pts) {
    centroid[0] += p[0];
    centroid[1] += p[1];
  }
  centroid[0] /= static_cast<double>(pts.size());
  centroid[1] /= static_cast<double>(pts.size());
  double ms = 0.0;
  for (auto& p : pts) {
    p[0] -= centroid[0];
    p[1] -= centroid[1];
    ms += p[0] * p[0] + p[1] * p[1];
  }
  const double rms = std::sqrt(ms / static_cast<double>(pts.size()));
  if (!(rms > 1e-300)) {
    for (auto& p : pts) p = {0.0, 0.0};
    return;
  }
  for (auto& p : pts) {
    p[0] /= rms;
    p[1] /= rms;
  }
}

namespace detail {

inline std::vector<Vec2> pca_project(const ChannelFeatureMatrix& f) {
  std::vector<Vec2> pts(f.rows, Vec2{0.0, 0.0});
  if (f.rows < 2 || f.cols == 0) return pts;
  Eigen::MatrixXd X(f.rows, f.cols);
  for (std::size_t r = 0; r < f.rows; ++r) {
    for (std::size_t c = 0; c < f.cols; ++c) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f(r, c);
  }
  X.rowwise() -= X.colwise().mean();
  const Eigen::MatrixXd cov = X.transpose() * X;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const auto& evals = eig.eigenvalues();
  const Eigen::Index n = evals.size();
  const double top = std::max(evals(n - 1), 0.0);
  for (int k = 0; k < 2 && k < n; ++k) {
    const Eigen::Index col = n - 1 - k;
    // Components with numerically zero variance carry only noise.
    if (!(evals(col) > 1e-12 * top) || top <= 0.0) continue;
    Eigen::VectorXd proj = X * eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    proj.cwiseAbs().maxCoeff(&arg);
    if (proj(arg) < 0) proj = -proj;
    for (std::size_t r = 0; r < f.rows; ++r) pts[r][static_cast<std::size_t>(k)] = proj(static_cast<Eigen::Index>(r));
  }
  return pts;
}

// Fuzzy k-nearest-neighbor graph embedding optimized by edge sampling with
// negative samples, initialized from the PCA projection.
inline std::vector<Vec2> neighbor_embed(const ChannelFeatureMatrix& f, std::uint64_t seed) {
  const std::size_t n = f.rows;
  std::vector<Vec2> y = pca_project(f);
  if (n <= 3) return y;
  const std::size_t k = std::min<std::size_t>(15, n - 1);

  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < f.cols; ++c) {
        const double t = f(i, c) - f(j, c);
        d += t * t;
      }
      dist[i * n + j] = dist[j * n + i] = std::sqrt(d);
    }
  }
  std::vector<double> w(n * n, 0.0);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) order[j] = j;
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k + 1), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double da = a == i ? -1.0 : dist[i * n + a];
                        const double db = b == i ? -1.0 : dist[i * n + b];
                        return da < db || (da == db && a < b);
                      });
    const double rho = dist[i * n + order[1]];
    const double target = std::log2(static_cast<double>(k));
    double lo = 0.0, hi = std::numeric_limits<double>::infinity(), sigma = 1.0;
    for (int it = 0; it < 64; ++it) {
      double sum = 0.0;
      for (std::size_t m = 1; m <= k; ++m) sum += std::exp(-std::max(0.0, dist[i * n + order[m]] - rho) / sigma);
      if (std::abs(sum - target) < 1e-5) break;
      if (sum > target) {
        hi = sigma;
        sigma = (lo + hi) / 2.0;
      } else {
        lo = sigma;
        sigma = std::isinf(hi) ? sigma * 2.0 : (lo + hi) / 2.0;
      }
    }
    for (std::size_t m = 1; m <= k; ++m) {
      w[i * n + order[m]] = std::exp(-std::max(0.0, dist[i * n + order[m]] - rho) / sigma);
    }
  }
  struct Edge {
    std::size_t i, j;
    double weight;
  };
  std::vector<Edge> edges;
  double wmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = w[i * n + j], b = w[j * n + i];
      const double s = a + b - a * b;
      if (s > 0.0) {
        edges.push_back({i, j, s});
        wmax = std::max(wmax, s);
      }
    }
  }
  normalize_rms(y);
  for (auto& p : y) {
    p[0] *= 5.0;
    p[1] *= 5.0;
  }
  constexpr double a = 1.577, b = 0.895;  // curve parameters for a minimum distance of 0.1
  constexpr int epochs = 200;
  constexpr int negatives = 5;
  Rng rng(seed);
  auto clip = [](double g) { return std::clamp(g, -4.0, 4.0); };
  for (int e = 0; e < epochs; ++e) {
    const double lr = 1.0 - static_cast<double>(e) / epochs;
    for (const auto& edge : edges) {
      if (!rng.bernoulli(edge.weight / wmax)) continue;
      auto& yi = y[edge.i];
      auto& yj = y[edge.j];
      const double dx = yi[0] - yj[0], dy = yi[1] - yj[1];
      const double d2 = dx * dx + dy * dy;
      if (d2 > 0.0) {
        const double coef = -2.0 * a * b * std::pow(d2, b - 1.0) / (1.0 + a * std::pow(d2, b));
        const double gx = clip(coef * dx) * lr, gy = clip(coef * dy) * lr;
        yi[0] += gx;
        yi[1] += gy;
        yj[0] -= gx;
        yj[1] -= gy;
      }
      for (int s = 0; s < negatives; ++s) {
        const auto m = static_cast<std::size_t>(rng.below(n));
        if (m == edge.i) continue;
        const double nx = yi[0] - y[m][0], ny = yi[1] - y[m][1];
        const double n2 = nx * nx + ny * ny;
        const double coef = 2.0 * b / ((0.001 + n2) * (1.0 + a * std::pow(n2, b)));
        yi[0] += clip(coef * nx) * lr;
        yi[1] += clip(coef * ny) * lr;
      }
    }
  }
  return y;
}

}  // namespace detail

/// 2D starting positions for the channels, normalized to RMS radius 1.
inline ParticleLayout initial_projection(const ChannelFeatureMatrix& features,
                                         ProjectionMethod method = ProjectionMethod::pca, std::uint64_t seed = 0) {
  if (features.rows == 0) throw Error(ErrorKind::argument, "initial_projection needs at least one channel");
  for (double v : features.values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::numeric, "non-finite channel feature");
  }
  ParticleLayout layout;
  layout.seed = seed;
  layout.coords =
      method == ProjectionMethod::pca ? detail::pca_project(features) : detail::neighbor_embed(features, seed);
  normalize_rms(layout.coords);
  return layout;
}

inline double attraction(double dist) { return 1.5 * std::pow(dist + 1.0, -3.0); }
inline double repulsion(double dist) { return 15.0 * std::exp(-dist / 2.0); }

// Signed magnitude of the pairwise interaction; positive pulls the pair together.
inline double pair_scalar(double dist) { return attraction(dist) - repulsion(dist); }

// Direction from particle a toward particle b when the two coincide. The pair
// (min, max) shares one draw, so the two directions are exactly opposite.
inline Vec2 coincident_direction(std::size_t a, std::size_t b, std::uint64_t tie_seed) {
  const std::size_t lo = std::min(a, b), hi = std::max(a, b);
  const std::uint64_t h = mix_seed(mix_seed(tie_seed, lo), hi);
  const double theta = 2.0 * std::numbers::pi * static_cast<double>(h >> 11) * 0x1.0p-53;
  const double sign = a == lo ? 1.0 : -1.0;
  return {sign * std::cos(theta), sign * std::sin(theta)};
}

/// Mean pairwise force on particle i; each pair acts along the unit vector from i toward j.
inline Vec2 pair_forces(std::size_t i, std::span<const Vec2> coords, std::uint64_t tie_seed = 0) {
  const std::size_t n = coords.size();
  if (n < 2) return {0.0, 0.0};
  Vec2 f{0.0, 0.0};
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    const double dx = coords[j][0] - coords[i][0];
    const double dy = coords[j][1] - coords[i][1];
    const double d = std::hypot(dx, dy);
    const double s = pair_scalar(d);
    if (d > 0.0) {
      f[0] += s * dx / d;
      f[1] += s * dy / d;
    } else {
      const Vec2 u = coincident_direction(i, j, tie_seed);
      f[0] += s * u[0];
      f[1] += s * u[1];
    }
  }
  const double inv = 1.0 / static_cast<double>(n - 1);
  return {f[0] * inv, f[1] * inv};
}

inline constexpr double default_relax_step = 0.88;
inline constexpr std::size_t default_relax_iterations = 1000;

/// Synchronous explicit updates: x <- x + step * f(x) for every particle at once.
inline ParticleLayout relax(const ParticleLayout& layout, std::size_t iterations = default_relax_iterations,
                            double step = default_relax_step, std::size_t jobs = 1) {
  if (!(step > 0.0)) throw Error(ErrorKind::argument, "relaxation step must be positive");
  ParticleLayout out = layout;
  const std::size_t n = out.coords.size();
  std::vector<Vec2> next(n);
  for (std::size_t it = 0; it < iterations; ++it) {
    const std::uint64_t tie_seed = mix_seed(layout.seed, it);
    const std::span<const Vec2> cur(out.coords);
    parallel_for(n, n >= 64 ? jobs : 1, [&](std::size_t i) {
      const Vec2 f = pair_forces(i, cur, tie_seed);
      next[i] = {cur[i][0] + step * f[0], cur[i][1] + step * f[1]};
    });
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(next[i][0]) || !std::isfinite(next[i][1])) {
        throw Error(ErrorKind::numeric, "relaxation diverged at iteration " + std::to_string(it) + " (particle " +
                                            std::to_string(i) + "); reduce the step size");
      }
    }
    out.coords.swap(next);
    ++out.iterations_run;
  }
  return out;
}

inline double min_pairwise_distance(std::span<const Vec2> coords) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < coords.size(); ++i) {
    for (std::size_t j = i + 1; j < coords.size(); ++j) {
      best = std::min(best, std::hypot(coords[i][0] - coords[j][0], coords[i][1] - coords[j][1]));
    }
  }
  return best;
}

struct LayoutMetadata {
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  double step = 0.0;
  ProjectionMethod projection = ProjectionMethod::pca;
};

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void save_layout(const ParticleLayout& layout, const LayoutMetadata& meta, const std::filesystem::path& csv_path,
                        const std::filesystem::path& json_path) {
  csv::Writer w({"channel_index", "x", "y"});
  for (std::size_t i = 0; i < layout.coords.size(); ++i) {
    w.row({std::to_string(i), format_double(layout.coords[i][0]), format_double(layout.coords[i][1])});
  }
  w.save(csv_path);
  const nlohmann::json j = {{"seed", meta.seed},
                            {"iterations", meta.iterations},
                            {"iterations_run", layout.iterations_run},
                            {"step", meta.step},
                            {"projection", to_string(meta.projection)},
                            {"channels", layout.coords.size()}};
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + json_path.string());
  out << j.dump(2) << '\n';
}

inline ParticleLayout load_layout(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw Error(ErrorKind::prerequisite, "no layout at " + csv_path.string());
  std::vector<std::string> fields;
  if (!csv::read_record(in, fields) || fields != std::vector<std::string>{"channel_index", "x", "y"}) {
    throw Error(ErrorKind::format, csv_path.string() + ": bad layout header");
  }
  ParticleLayout layout;
  while (csv::read_record(in, fields)) {
    if (fields.size() != 3) continue;
    Vec2 p{};
    for (int k = 0; k < 2; ++k) {
      const auto& s = fields[static_cast<std::size_t>(k) + 1];
      const auto res = std::from_chars(s.data(), s.data() + s.size(), p[static_cast<std::size_t>(k)]);
      if (res.ec != std::errc()) throw Error(ErrorKind::format, csv_path.string() + ": bad coordinate '" + s + "'");
    }
    layout.coords.push_back(p);
  }
  return layout;
}

}  // namespace napkit
