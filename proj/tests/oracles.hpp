#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <vector>

#include "anchored/forward/eikonal.hpp"

namespace anchored::oracles {

// Shortest paths on a dense cell-centre graph: every node links to all
// nodes within `radius` cells along a primitive direction; edge cost is the
// slowness integrated along the segment by the midpoint rule.
inline std::vector<double> dijkstra_times(const Grid& g, const std::vector<double>& s, int src, int radius = 5) {
  const int nx = g.dims()[0], ny = g.dims()[1];
  const double hx = g.spacing()[0], hy = g.spacing()[1];
  std::vector<std::array<int, 2>> dirs;
  for (int di = -radius; di <= radius; ++di)
    for (int dj = -radius; dj <= radius; ++dj)
      if ((di || dj) && std::gcd(std::abs(di), std::abs(dj)) == 1) dirs.push_back({di, dj});
  auto slow_at = [&](double x, double y) {
    const int i = std::clamp(static_cast<int>(x / hx), 0, nx - 1);
    const int j = std::clamp(static_cast<int>(y / hy), 0, ny - 1);
    return s[static_cast<std::size_t>(g.index_to_cell(i, j))];
  };
  std::vector<double> t(static_cast<std::size_t>(g.n_cells()), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  t[static_cast<std::size_t>(src)] = 0.0;
  pq.push({0.0, src});
  while (!pq.empty()) {
    const auto [tc, c] = pq.top();
    pq.pop();
    if (tc > t[static_cast<std::size_t>(c)]) continue;
    const auto ij = g.cell_to_index(c);
    const auto p = g.coord(c);
    for (const auto& d : dirs) {
      const int ni = ij[0] + d[0], nj = ij[1] + d[1];
      if (ni < 0 || nj < 0 || ni >= nx || nj >= ny) continue;
      const int nc = g.index_to_cell(ni, nj);
      const auto q = g.coord(nc);
      const int steps = 64;
      double acc = 0.0;
      for (int k = 0; k < steps; ++k) {
        const double f = (k + 0.5) / steps;
        acc += slow_at(p[0] + f * (q[0] - p[0]), p[1] + f * (q[1] - p[1]));
      }
      const double cost = acc / steps * std::hypot(q[0] - p[0], q[1] - p[1]);
      if (tc + cost < t[static_cast<std::size_t>(nc)]) {
        t[static_cast<std::size_t>(nc)] = tc + cost;
        pq.push({tc + cost, nc});
      }
    }
  }
  return t;
}

inline int cell_of(const Grid& g, Point2 p) {
  return g.index_to_cell(static_cast<int>(p.x / g.spacing()[0]), static_cast<int>(p.y / g.spacing()[1]));
}

}  // namespace anchored::oracles

namespace anchored::oracles {

// Composite Simpson on [lo, hi] with an even number of panels.
template <class F>
double simpson(F f, double lo, double hi, int panels) {
  const double h = (hi - lo) / panels;
  double s = f(lo) + f(hi);
  for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
  return s * h / 3.0;
}

}  // namespace anchored::oracles
