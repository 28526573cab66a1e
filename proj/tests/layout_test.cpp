#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "napkit/layout.hpp"
#include "napkit/rng.hpp"
#include "test_util.hpp"

namespace napkit {
namespace {

double distance(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

// Root of 1.5 (d+1)^-3 = 15 e^{-d/2} by bisection.
double equilibrium_distance() {
  auto g = [](double d) { return 1.5 * std::pow(d + 1.0, -3.0) - 15.0 * std::exp(-d / 2.0); };
  double lo = 0.0, hi = 100.0;
  EXPECT_LT(g(lo), 0.0);
  EXPECT_GT(g(hi), 0.0);
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<Vec2> random_points(std::size_t n, std::uint64_t seed, double spread) {
  Rng rng(seed);
  std::vector<Vec2> pts(n);
  for (auto& p : pts) p = {spread * rng.normal(), spread * rng.normal()};
  return pts;
}

ChannelFeatureMatrix features(std::size_t rows, std::size_t cols, const std::vector<double>& values) {
  return ChannelFeatureMatrix{0, rows, cols, values};
}

TEST(ForceLaw, PointValues) {
  EXPECT_DOUBLE_EQ(attraction(0.0), 1.5);
  EXPECT_DOUBLE_EQ(repulsion(0.0), 15.0);
  EXPECT_DOUBLE_EQ(pair_scalar(0.0), -13.5);
  EXPECT_DOUBLE_EQ(attraction(1.0), 0.1875);
  EXPECT_NEAR(repulsion(2.0), 5.5182, 1e-4);
}

TEST(ForceLaw, EquilibriumOracleSignChange) {
  const double d = equilibrium_distance();
  EXPECT_NEAR(pair_scalar(d), 0.0, 1e-12);
  EXPECT_LT(pair_scalar(0.9 * d), 0.0);
  EXPECT_GT(pair_scalar(1.1 * d), 0.0);
}

TEST(PairForces, DirectionFollowsSign) {
  const std::vector<Vec2> close{{0.0, 0.0}, {1.0, 0.0}};
  EXPECT_LT(pair_forces(0, close)[0], 0.0);  // repelled away from j
  const std::vector<Vec2> far{{0.0, 0.0}, {40.0, 0.0}};
  EXPECT_GT(pair_forces(0, far)[0], 0.0);  // attracted toward j
  const std::vector<Vec2> one{{3.0, 4.0}};
  EXPECT_EQ(pair_forces(0, one), (Vec2{0.0, 0.0}));
}

TEST(PairForces, SymmetricPair) {
  const std::vector<Vec2> pts{{0.3, -1.2}, {2.1, 0.7}};
  const Vec2 fi = pair_forces(0, pts), fj = pair_forces(1, pts);
  EXPECT_NEAR(std::hypot(fi[0], fi[1]), std::hypot(fj[0], fj[1]), 1e-15);
  EXPECT_NEAR(fi[0], -fj[0], 1e-15);
  EXPECT_NEAR(fi[1], -fj[1], 1e-15);
}

TEST(PairForces, MeanOverNeighbors) {
  const std::vector<Vec2> pts{{0.0, 0.0}, {1.0, 0.0}, {0.0, 2.0}};
  const Vec2 f = pair_forces(0, pts);
  EXPECT_NEAR(f[0], pair_scalar(1.0) / 2.0, 1e-15);
  EXPECT_NEAR(f[1], pair_scalar(2.0) / 2.0, 1e-15);
}

TEST(PairForces, ZeroNetDrift) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto pts = random_points(40, seed, 2.0);
    pts[7] = pts[3];  // a coincident pair must cancel too
    Vec2 total{0.0, 0.0};
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec2 f = pair_forces(i, pts, seed);
      total[0] += f[0] * static_cast<double>(pts.size() - 1);
      total[1] += f[1] * static_cast<double>(pts.size() - 1);
    }
    EXPECT_NEAR(total[0], 0.0, 1e-6);
    EXPECT_NEAR(total[1], 0.0, 1e-6);
  }
}

TEST(PairForces, CoincidentDirectionsAreOppositeUnitVectors) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Vec2 a = coincident_direction(2, 9, seed), b = coincident_direction(9, 2, seed);
    EXPECT_NEAR(std::hypot(a[0], a[1]), 1.0, 1e-15);
    EXPECT_EQ(a[0], -b[0]);
    EXPECT_EQ(a[1], -b[1]);
  }
  EXPECT_NE(coincident_direction(2, 9, 1), coincident_direction(2, 9, 2));
}

TEST(PairForces, RotationEquivariance) {
  const auto pts = random_points(50, 12, 3.0);
  for (double theta : {0.3, 1.0, 2.5, -4.0}) {
    const double c = std::cos(theta), s = std::sin(theta);
    std::vector<Vec2> rot(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
      rot[i] = {c * pts[i][0] - s * pts[i][1], s * pts[i][0] + c * pts[i][1]};
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec2 f = pair_forces(i, pts), fr = pair_forces(i, rot);
      EXPECT_NEAR(fr[0], c * f[0] - s * f[1], 1e-6);
      EXPECT_NEAR(fr[1], s * f[0] + c * f[1], 1e-6);
    }
  }
}

TEST(Relax, TranslationEquivariance) {
  ParticleLayout base{random_points(50, 5, 2.0), 5, 0};
  ParticleLayout shifted = base;
  const Vec2 v{3.25, -1.5};
  for (auto& p : shifted.coords) p = {p[0] + v[0], p[1] + v[1]};
  const auto a = relax(base);
  const auto b = relax(shifted);
  for (std::size_t i = 0; i < a.coords.size(); ++i) {
    EXPECT_NEAR(b.coords[i][0], a.coords[i][0] + v[0], 1e-6);
    EXPECT_NEAR(b.coords[i][1], a.coords[i][1] + v[1], 1e-6);
  }
}

TEST(Relax, SingleParticleIsIdentity) {
  const ParticleLayout l{{{0.7, -0.2}}, 0, 0};
  const auto r = relax(l, 100);
  EXPECT_EQ(r.coords, l.coords);
  EXPECT_EQ(r.iterations_run, 100u);
}

TEST(Relax, TwoCoincidentParticlesReachEquilibrium) {
  const double d_star = equilibrium_distance();
  const ParticleLayout l{{{0.0, 0.0}, {0.0, 0.0}}, 42, 0};
  const auto r = relax(l);
  EXPECT_EQ(r.iterations_run, 1000u);
  EXPECT_NEAR(distance(r.coords[0], r.coords[1]), d_star, 0.05 * d_star);
  // Midpoint stays put because the pair forces cancel.
  EXPECT_NEAR(r.coords[0][0] + r.coords[1][0], 0.0, 1e-9);
  EXPECT_NEAR(r.coords[0][1] + r.coords[1][1], 0.0, 1e-9);
}

TEST(Relax, TwoParticlesMoveTowardEquilibrium) {
  const double d_star = equilibrium_distance();
  for (double d0 : {0.5, 5.0, 20.0, 30.0}) {
    const ParticleLayout l{{{0.0, 0.0}, {d0, 0.0}}, 0, 0};
    const auto r = relax(l);
    const double d = distance(r.coords[0], r.coords[1]);
    EXPECT_LT(std::abs(d - d_star), std::abs(d0 - d_star)) << "start " << d0;
  }
}

TEST(Relax, CoincidentCloudSpreadsOut) {
  ParticleLayout l{std::vector<Vec2>(100, Vec2{0.5, 0.5}), 9, 0};
  double prev = min_pairwise_distance(l.coords);
  EXPECT_EQ(prev, 0.0);
  for (int it = 0; it < 3; ++it) {
    l = relax(l, 1, 0.05);
    const double cur = min_pairwise_distance(l.coords);
    EXPECT_GT(cur, prev);
    prev = cur;
  }
  const auto r = relax(ParticleLayout{std::vector<Vec2>(100, Vec2{0.5, 0.5}), 9, 0});
  EXPECT_GT(min_pairwise_distance(r.coords), 0.0);
  for (const auto& p : r.coords) EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
}

TEST(Relax, DeterministicAndJobIndependent) {
  const ParticleLayout l{random_points(80, 4, 1.0), 17, 0};
  const auto a = relax(l, 200, default_relax_step, 1);
  const auto b = relax(l, 200, default_relax_step, 1);
  const auto c = relax(l, 200, default_relax_step, 8);
  EXPECT_EQ(a.coords, b.coords);
  EXPECT_EQ(a.coords, c.coords);
}

TEST(Relax, RejectsBadStepAndDivergence) {
  const ParticleLayout l{random_points(3, 1, 1.0), 0, 0};
  EXPECT_THROW(relax(l, 10, 0.0), Error);
  EXPECT_THROW(relax(l, 10, -1.0), Error);
  try {
    relax(l, 10, 1e308);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
}

TEST(Projection, SingleChannelAtOrigin) {
  const auto l = initial_projection(features(1, 3, {1.0, 2.0, 3.0}));
  ASSERT_EQ(l.coords.size(), 1u);
  EXPECT_EQ(l.coords[0], (Vec2{0.0, 0.0}));
}

TEST(Projection, IdenticalRowsShareCoordinates) {
  const auto l = initial_projection(features(4, 3, {1, 2, 3, 1, 2, 3, -4, 0, 2, 5, 5, 1}));
  EXPECT_EQ(l.coords[0], l.coords[1]);
  EXPECT_NE(l.coords[0], l.coords[2]);
}

TEST(Projection, ZeroVarianceCollapsesToOrigin) {
  const auto l = initial_projection(features(5, 2, std::vector<double>(10, 0.25)));
  for (const auto& p : l.coords) EXPECT_EQ(p, (Vec2{0.0, 0.0}));
}

TEST(Projection, EquilateralSimplexStaysEquilateral) {
  // Rows are the standard basis of R^3, embedded in 6 features with an offset.
  const auto l = initial_projection(features(3, 6, {1, 0, 0, 7, 7, 7, 0, 1, 0, 7, 7, 7, 0, 0, 1, 7, 7, 7}));
  const double d01 = distance(l.coords[0], l.coords[1]);
  EXPECT_NEAR(distance(l.coords[1], l.coords[2]), d01, 1e-6);
  EXPECT_NEAR(distance(l.coords[0], l.coords[2]), d01, 1e-6);
  // RMS radius 1 puts the vertices of the triangle at radius 1, side sqrt(3).
  EXPECT_NEAR(d01, std::sqrt(3.0), 1e-9);
}

TEST(Projection, RmsRadiusOneAndCentered) {
  Rng rng(2);
  std::vector<double> v(30 * 8);
  for (auto& x : v) x = 50.0 * rng.normal();
  for (auto method : {ProjectionMethod::pca, ProjectionMethod::neighbor_embedding}) {
    const auto l = initial_projection(features(30, 8, v), method, 7);
    double cx = 0, cy = 0, ms = 0;
    for (const auto& p : l.coords) {
      cx += p[0];
      cy += p[1];
      ms += p[0] * p[0] + p[1] * p[1];
    }
    EXPECT_NEAR(cx / 30.0, 0.0, 1e-9);
    EXPECT_NEAR(cy / 30.0, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(ms / 30.0), 1.0, 1e-9);
  }
}

TEST(Projection, PcaRecoversDominantAxis) {
  // Points on a line in feature space project onto a line in 2D.
  std::vector<double> v;
  for (int i = 0; i < 10; ++i) {
    const double t = i - 4.5;
    v.insert(v.end(), {t, 2.0 * t, -t});
  }
  const auto l = initial_projection(features(10, 3, v));
  for (const auto& p : l.coords) EXPECT_NEAR(p[1], 0.0, 1e-9);
  EXPECT_LT(l.coords[0][0] * l.coords[9][0], 0.0);
}

TEST(Projection, NeighborEmbeddingDeterministicAndSeeded) {
  Rng rng(3);
  std::vector<double> v(40 * 6);
  for (std::size_t r = 0; r < 40; ++r) {
    for (std::size_t c = 0; c < 6; ++c) v[r * 6 + c] = (r < 20 ? 5.0 : -5.0) + rng.normal();
  }
  const auto f = features(40, 6, v);
  const auto a = initial_projection(f, ProjectionMethod::neighbor_embedding, 1);
  const auto b = initial_projection(f, ProjectionMethod::neighbor_embedding, 1);
  EXPECT_EQ(a.coords, b.coords);
  // Two well separated clusters stay separated: each point's nearest neighbor is in its own cluster.
  for (std::size_t i = 0; i < 40; ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < 40; ++j) {
      if (j != i && distance(a.coords[i], a.coords[j]) < distance(a.coords[i], a.coords[best])) best = j;
    }
    EXPECT_EQ(i < 20, best < 20);
  }
  EXPECT_EQ(parse_projection_method("neighbor-embedding"), ProjectionMethod::neighbor_embedding);
  EXPECT_THROW(parse_projection_method("tsne"), Error);
}

TEST(Projection, RejectsNonFinite) {
  EXPECT_THROW(initial_projection(features(2, 1, {1.0, std::nan("")})), Error);
  EXPECT_THROW(initial_projection(features(0, 0, {})), Error);
}

TEST(LayoutIo, CsvRoundTripIsExact) {
  testing::TempDir tmp;
  ParticleLayout l{random_points(25, 6, 3.0), 1, 0};
  l.coords[3] = {1e-300, -0.1};
  save_layout(l, LayoutMetadata{1, 1000, default_relax_step, ProjectionMethod::pca}, tmp.path() / "layout.csv",
              tmp.path() / "layout.json");
  const auto back = load_layout(tmp.path() / "layout.csv");
  EXPECT_EQ(back.coords, l.coords);
  EXPECT_THROW(load_layout(tmp.path() / "missing.csv"), Error);
}

}  // namespace
}  // namespace napkit
