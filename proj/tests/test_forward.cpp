#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "anchored/forward/darcy.hpp"
#include "anchored/forward/eikonal.hpp"
#include "anchored/forward/runoff.hpp"
#include "anchored/forward/synthetic.hpp"
#include "oracles.hpp"

using namespace anchored;
using namespace anchored::oracles;

TEST(Darcy, TwoLayerHeadAtInterface) {
  const int n = 100;
  Vector k(n);
  k.head(n / 2).setConstant(1.0);
  k.tail(n / 2).setConstant(2.0);
  const Vector h = darcy_face_heads(k, 1.0 / n);
  EXPECT_NEAR(h(n / 2), 1.0 / 3.0, 1e-10);
  EXPECT_DOUBLE_EQ(h(0), 1.0);
  EXPECT_NEAR(h(n), 0.0, 1e-15);
}

TEST(Darcy, ConductivityScalingInvariance) {
  Rng rng = substream(31, "darcy-scale");
  const Vector logk = standard_normal(80, rng);
  const Vector k = logk.array().exp();
  const Vector h1 = darcy_center_heads(k);
  const Vector h2 = darcy_center_heads(4.0 * k);
  EXPECT_EQ(h1, h2);
  const Vector f1 = darcy_face_heads(k), f2 = darcy_face_heads(0.125 * k);
  EXPECT_EQ(f1, f2);
}

TEST(Darcy, UniformFieldIsLinear) {
  const Vector h = darcy_center_heads(Vector::Constant(10, 3.0));
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(h(i), 1.0 - (i + 0.5) / 10.0, 1e-14);
  std::vector<int> cells{0, 5, 9};
  const Vector obs = darcy1d(Vector::Zero(10), cells);
  EXPECT_NEAR(obs(1), 0.45, 1e-14);
  Vector bad = Vector::Zero(10);
  bad(3) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(darcy1d(bad, cells), ForwardFailure);
}

TEST(Eikonal, UniformFieldMatchesStraightRays) {
  const Grid g = Grid::plane(60, 40, 1.0, 1.0);
  const double s = 0.3;
  const auto lay = crosshole_layout(g);
  const Vector logt = eikonal2d(g, Vector::Constant(g.n_cells(), std::log(s)), lay);
  int k = 0;
  for (std::size_t src = 0; src < lay.sources.size(); ++src)
    for (int r : lay.pairs[src]) {
      const auto a = lay.sources[src], b = lay.receivers[static_cast<std::size_t>(r)];
      const double want = s * std::hypot(a.x - b.x, a.y - b.y);
      EXPECT_NEAR(std::exp(logt(k)), want, 0.02 * want) << "pair " << k;
      ++k;
    }
  EXPECT_EQ(k, lay.n_pairs());
  EXPECT_EQ(lay.n_pairs(), 12 * 25);
}

TEST(Eikonal, AgreesWithDenseGraphShortestPaths) {
  // Slow background with a fast layer near the top edge.
  const Grid g = Grid::plane(30, 20, 2.0, 2.0);
  std::vector<double> s(static_cast<std::size_t>(g.n_cells()), 1.0);
  for (int j = 0; j < 6; ++j)
    for (int i = 0; i < 30; ++i) s[static_cast<std::size_t>(g.index_to_cell(i, j))] = 0.5;
  const auto lay = crosshole_layout(g);
  double worst = 0.0;
  for (std::size_t src = 0; src < lay.sources.size(); ++src) {
    const auto sol = fast_march(g, s, lay.sources[src]);
    const auto ref = dijkstra_times(g, s, cell_of(g, lay.sources[src]));
    for (int r : lay.pairs[src]) {
      const auto p = lay.receivers[static_cast<std::size_t>(r)];
      const double want = ref[static_cast<std::size_t>(cell_of(g, p))];
      const double got = sol.at(p);
      worst = std::max(worst, std::abs(got - want) / want);
      EXPECT_NEAR(got, want, 0.03 * want) << "source " << src << " receiver " << r;
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Eikonal, FastLayerBeatsStraightSlowRay) {
  const Grid g = Grid::plane(30, 20, 2.0, 2.0);
  std::vector<double> s(static_cast<std::size_t>(g.n_cells()), 1.0);
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 30; ++i) s[static_cast<std::size_t>(g.index_to_cell(i, j))] = 0.25;
  const Point2 a{1.0, 13.0}, b{59.0, 13.0};
  const double straight = 1.0 * (b.x - a.x);
  const double got = fast_march(g, s, a).at(b);
  EXPECT_LT(got, straight);
  const auto ref = dijkstra_times(g, s, cell_of(g, a));
  EXPECT_NEAR(got, ref[static_cast<std::size_t>(cell_of(g, b))], 0.03 * got);
}

TEST(Eikonal, TraveltimeBounds) {
  const Grid g = Grid::plane(30, 20, 2.0, 2.0);
  Rng rng = substream(32, "eikonal-bounds");
  const Vector logs = (DistanceTable(g).covariance({0, 8.0, 0.1, 0.0}).llt().matrixL() *
                       standard_normal(g.n_cells(), rng)).array() - 1.0;
  std::vector<double> s(static_cast<std::size_t>(g.n_cells()));
  for (int c = 0; c < g.n_cells(); ++c) s[static_cast<std::size_t>(c)] = std::exp(logs(c));
  const double smin = *std::min_element(s.begin(), s.end()), smax = *std::max_element(s.begin(), s.end());
  const auto lay = crosshole_layout(g);
  const std::vector<double> ones(s.size(), 1.0);
  for (std::size_t src = 0; src < lay.sources.size(); ++src) {
    const auto sol = fast_march(g, s, lay.sources[src]);
    const auto geo = dijkstra_times(g, ones, cell_of(g, lay.sources[src]));
    for (int r : lay.pairs[src]) {
      const auto a = lay.sources[src], b = lay.receivers[static_cast<std::size_t>(r)];
      const double t = sol.at(b);
      EXPECT_GE(t, smin * std::hypot(a.x - b.x, a.y - b.y) * (1 - 1e-9));
      EXPECT_LE(t, smax * geo[static_cast<std::size_t>(cell_of(g, b))] * 1.03);
    }
  }
}

TEST(Eikonal, RejectsBadSlowness) {
  const Grid g = Grid::plane(6, 5);
  std::vector<double> s(30, 1.0);
  s[4] = 0.0;
  EXPECT_THROW(fast_march(g, s, {0.5, 0.5}), ForwardFailure);
}

TEST(Runoff, SteadyStateOutflowEqualsRain) {
  const int n = 50;
  RunoffSettings set;
  set.dx = 2.0;
  const double b = RainEvent::mm_per_hour(20.0);
  RainEvent ev{b, 1e9, RainEvent::Observe::discharge, 1800.0, 6 * 3600.0};
  Rng rng = substream(33, "runoff-steady");
  const Vector r = (std::log(0.05) + 0.4 * standard_normal(n, rng).array()).exp();
  const auto out = runoff_event(r, ev, set);
  const double want = b * n * set.dx;
  EXPECT_NEAR(out.values.back(), want, 0.01 * want);
}

TEST(Runoff, MassBalance) {
  const auto events = default_rain_events();
  const Vector r = Vector::Constant(150, 0.05);
  for (const auto& ev : events) {
    const auto out = runoff_event(r, ev);
    EXPECT_NEAR(out.outflow_volume + out.storage, out.rain_volume, 1e-6 * out.rain_volume);
  }
}

TEST(Runoff, OutputLayoutAndStepBudget) {
  const auto events = default_rain_events();
  const RunoffForward fwd(events, {});
  EXPECT_EQ(fwd.data_dim(), 18 + 48);
  const Vector z = fwd.evaluate(Vector::Constant(150, std::log(0.05)));
  EXPECT_EQ(z.size(), 66);
  EXPECT_TRUE(z.allFinite());
  RunoffSettings tight;
  tight.max_steps = 10;
  EXPECT_THROW(runoff1d(Vector::Constant(150, std::log(0.05)), events, tight), ForwardFailure);
}

TEST(Synthetic, CoarsenIsBlockMean) {
  const Grid fine = Grid::plane(60, 40);
  Rng rng = substream(34, "coarsen");
  const Vector y = standard_normal(fine.n_cells(), rng);
  Grid coarse;
  const Vector c = coarsen(fine, y, {2, 2}, &coarse);
  EXPECT_EQ(coarse.dims(), (std::vector<int>{30, 20}));
  EXPECT_EQ(coarse.spacing(), (std::vector<double>{2.0, 2.0}));
  for (int j = 0; j < 20; ++j)
    for (int i = 0; i < 30; ++i) {
      double sum = 0.0;
      for (int b = 0; b < 2; ++b)
        for (int a = 0; a < 2; ++a) sum += y(fine.index_to_cell(2 * i + a, 2 * j + b));
      EXPECT_NEAR(c(coarse.index_to_cell(i, j)), sum / 4.0, 1e-14);
    }
  EXPECT_THROW(coarsen(fine, y, {7, 2}), InvalidArgument);
}

TEST(Synthetic, TruthIsSeeded) {
  const Grid g = Grid::line(50);
  const GeostatParams p{0.0, 5.0, 1.0, 0.0};
  EXPECT_EQ(make_synthetic_truth(g, p, 3), make_synthetic_truth(g, p, 3));
  EXPECT_NE(make_synthetic_truth(g, p, 3), make_synthetic_truth(g, p, 4));
}

TEST(Synthetic, VariogramWithinMonteCarloBands) {
  const Grid g = Grid::line(300);
  const GeostatParams p{1.0, 6.0, 2.0, 0.0};
  const int n_truths = 10;
  for (int lag : {1, 3, 6, 12}) {
    std::vector<double> gam;
    for (int t = 0; t < n_truths; ++t) {
      const Vector y = make_synthetic_truth(g, p, 100 + t);
      double acc = 0.0;
      for (int i = 0; i + lag < 300; ++i) acc += 0.5 * (y(i + lag) - y(i)) * (y(i + lag) - y(i));
      gam.push_back(acc / (300 - lag));
    }
    const double mean = std::accumulate(gam.begin(), gam.end(), 0.0) / n_truths;
    double ss = 0.0;
    for (double v : gam) ss += (v - mean) * (v - mean);
    const double se = std::sqrt(ss / (n_truths - 1) / n_truths);
    const double want = p.eta2 * (1.0 - matern15_correlation(lag, p.lambda));
    EXPECT_NEAR(mean, want, 3.0 * se + 1e-12) << "lag " << lag;
  }
}
