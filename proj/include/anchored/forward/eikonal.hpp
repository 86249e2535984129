#pragma once

// First-arrival traveltimes |∇t| = s on a 2-D grid by first-order fast
// marching on the source-factored form t = t0·τ, t0 = s_src·|x − x_src|.
// Nodes are cell centres.

#include <array>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include "anchored/forward/model.hpp"

namespace anchored {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Sources, receivers, and which receivers record each source.
struct CrossholeLayout {
  std::vector<Point2> sources;
  std::vector<Point2> receivers;
  std::vector<std::vector<int>> pairs;  // per source, receiver indices in output order

  int n_pairs() const {
    int n = 0;
    for (const auto& p : pairs) n += static_cast<int>(p.size());
    return n;
  }
};

/// Sources on both vertical edges, receivers on both vertical edges and the
/// top edge (axis 1 index 0), all at boundary cell centres of `g` and evenly
/// spaced. Each source is recorded on the opposite edge, then on the top.
inline CrossholeLayout crosshole_layout(const Grid& g, int sources_per_side = 6, int receivers_per_side = 10,
                                        int receivers_top = 15) {
  if (g.ndim() != 2) throw InvalidArgument("crosshole layout: needs a 2-D grid");
  const int nx = g.dims()[0], ny = g.dims()[1];
  const double dx = g.spacing()[0], dy = g.spacing()[1];
  auto at = [&](int i, int j) { return Point2{(i + 0.5) * dx, (j + 0.5) * dy}; };
  auto spread = [](int n, int count, int k) { return static_cast<int>((k + 0.5) * n / count); };

  CrossholeLayout lay;
  std::vector<int> left_rx, right_rx, top_rx;
  for (int k = 0; k < receivers_per_side; ++k) {
    left_rx.push_back(static_cast<int>(lay.receivers.size()));
    lay.receivers.push_back(at(0, spread(ny, receivers_per_side, k)));
  }
  for (int k = 0; k < receivers_per_side; ++k) {
    right_rx.push_back(static_cast<int>(lay.receivers.size()));
    lay.receivers.push_back(at(nx - 1, spread(ny, receivers_per_side, k)));
  }
  for (int k = 0; k < receivers_top; ++k) {
    top_rx.push_back(static_cast<int>(lay.receivers.size()));
    lay.receivers.push_back(at(spread(nx, receivers_top, k), 0));
  }
  for (int side = 0; side < 2; ++side)
    for (int k = 0; k < sources_per_side; ++k) {
      lay.sources.push_back(at(side == 0 ? 0 : nx - 1, spread(ny, sources_per_side, k)));
      std::vector<int> rx = side == 0 ? right_rx : left_rx;
      rx.insert(rx.end(), top_rx.begin(), top_rx.end());
      lay.pairs.push_back(std::move(rx));
    }
  return lay;
}

namespace detail {

inline double bilinear(const Grid& g, const std::vector<double>& v, Point2 p) {
  const int nx = g.dims()[0], ny = g.dims()[1];
  const double fx = std::clamp(p.x / g.spacing()[0] - 0.5, 0.0, nx - 1.0);
  const double fy = std::clamp(p.y / g.spacing()[1] - 0.5, 0.0, ny - 1.0);
  const int i0 = std::min(static_cast<int>(fx), nx - 2), j0 = std::min(static_cast<int>(fy), ny - 2);
  const double ax = fx - i0, ay = fy - j0;
  auto f = [&](int i, int j) { return v[static_cast<std::size_t>(g.index_to_cell(i, j))]; };
  return (1 - ax) * (1 - ay) * f(i0, j0) + ax * (1 - ay) * f(i0 + 1, j0) + (1 - ax) * ay * f(i0, j0 + 1) +
         ax * ay * f(i0 + 1, j0 + 1);
}

}  // namespace detail

/// Traveltime field from one source. Returns the factor τ per node and the
/// source slowness so receivers can be read off as t0·τ.
class EikonalSolution {
 public:
  EikonalSolution(const Grid& g, Point2 src, double s_src, std::vector<double> tau)
      : grid_(g), src_(src), s_src_(s_src), tau_(std::move(tau)) {}

  double t0(Point2 p) const { return s_src_ * std::hypot(p.x - src_.x, p.y - src_.y); }
  double at_node(int c) const { return t0(node(c)) * tau_[static_cast<std::size_t>(c)]; }
  double at(Point2 p) const { return t0(p) * detail::bilinear(grid_, tau_, p); }
  Point2 node(int c) const {
    const auto x = grid_.coord(c);
    return {x[0], x[1]};
  }

 private:
  Grid grid_;
  Point2 src_;
  double s_src_;
  std::vector<double> tau_;
};

inline EikonalSolution fast_march(const Grid& g, const std::vector<double>& slowness, Point2 src) {
  const int nx = g.dims()[0], ny = g.dims()[1];
  const double hx = g.spacing()[0], hy = g.spacing()[1];
  const auto n = static_cast<std::size_t>(g.n_cells());
  for (double s : slowness)
    if (!(s > 0.0) || !std::isfinite(s)) throw ForwardFailure("eikonal: slowness must be positive and finite");

  const double s_src = detail::bilinear(g, slowness, src);
  std::vector<double> tau(n, std::numeric_limits<double>::infinity());
  std::vector<double> t(n, std::numeric_limits<double>::infinity());
  std::vector<char> done(n, 0);
  auto pos = [&](int c) {
    const auto x = g.coord(c);
    return Point2{x[0], x[1]};
  };
  auto t0 = [&](Point2 p) { return s_src * std::hypot(p.x - src.x, p.y - src.y); };

  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;

  // Nodes within one cell of the source take the locally homogeneous value.
  const double r0 = std::max(hx, hy) * (1.0 + 1e-9);
  for (int c = 0; c < static_cast<int>(n); ++c) {
    const Point2 p = pos(c);
    if (std::hypot(p.x - src.x, p.y - src.y) <= r0) {
      tau[static_cast<std::size_t>(c)] = 1.0;
      t[static_cast<std::size_t>(c)] = t0(p);
      heap.push({t[static_cast<std::size_t>(c)], c});
    }
  }

  auto update = [&](int c) {
    const auto ij = g.cell_to_index(c);
    const Point2 p = pos(c);
    const double tp0 = t0(p);
    const double dist = std::hypot(p.x - src.x, p.y - src.y);
    const double sp = slowness[static_cast<std::size_t>(c)];
    struct Axis {
      double alpha, beta, sigma, t_nb, h;
      bool ok;
    };
    std::array<Axis, 2> ax{};
    for (int a = 0; a < 2; ++a) {
      ax[a].ok = false;
      const double h = a == 0 ? hx : hy;
      const double grad0 = dist > 0.0 ? s_src * ((a == 0 ? p.x - src.x : p.y - src.y) / dist) : 0.0;
      double best = std::numeric_limits<double>::infinity();
      for (int sgn : {-1, 1}) {
        const int ni = ij[0] + (a == 0 ? sgn : 0), nj = ij[1] + (a == 1 ? sgn : 0);
        if (ni < 0 || nj < 0 || ni >= nx || nj >= ny) continue;
        const int nc = g.index_to_cell(ni, nj);
        if (!done[static_cast<std::size_t>(nc)] || t[static_cast<std::size_t>(nc)] >= best) continue;
        best = t[static_cast<std::size_t>(nc)];
        // backward difference (neighbour at −1) has σ = +1
        const double sigma = sgn < 0 ? 1.0 : -1.0;
        ax[a] = {grad0 + sigma * tp0 / h, -sigma * tp0 * tau[static_cast<std::size_t>(nc)] / h, sigma, best, h, true};
      }
    }
    double result = std::numeric_limits<double>::infinity();
    auto accept = [&](double tau_c, int only) {
      if (!std::isfinite(tau_c) || !(tau_c > 0.0)) return;
      const double tc = tp0 * tau_c;
      for (int a = 0; a < 2; ++a) {
        if (!ax[a].ok || (only >= 0 && only != a)) continue;
        if (tc < ax[a].t_nb - 1e-12 * std::max(1.0, ax[a].t_nb)) return;
        // the difference must point upwind along this axis
        if (ax[a].sigma * (ax[a].alpha * tau_c + ax[a].beta) < -1e-12 * sp) return;
      }
      result = std::min(result, tau_c);
    };
    if (ax[0].ok && ax[1].ok) {
      const double A = ax[0].alpha * ax[0].alpha + ax[1].alpha * ax[1].alpha;
      const double B = 2.0 * (ax[0].alpha * ax[0].beta + ax[1].alpha * ax[1].beta);
      const double C = ax[0].beta * ax[0].beta + ax[1].beta * ax[1].beta - sp * sp;
      const double disc = B * B - 4.0 * A * C;
      if (A > 0.0 && disc >= 0.0) accept((-B + std::sqrt(disc)) / (2.0 * A), -1);
    }
    if (!std::isfinite(result)) {
      for (int a = 0; a < 2; ++a) {
        if (!ax[a].ok || ax[a].alpha == 0.0) continue;
        accept((ax[a].sigma * sp - ax[a].beta) / ax[a].alpha, a);
      }
    }
    if (!std::isfinite(result)) {
      // plain upwind fallback, always causal
      double tmin = std::numeric_limits<double>::infinity();
      for (const auto& a : ax)
        if (a.ok) tmin = std::min(tmin, a.t_nb + sp * a.h);
      if (std::isfinite(tmin) && tp0 > 0.0) result = tmin / tp0;
    }
    if (std::isfinite(result) && tp0 * result < t[static_cast<std::size_t>(c)]) {
      tau[static_cast<std::size_t>(c)] = result;
      t[static_cast<std::size_t>(c)] = tp0 * result;
      heap.push({t[static_cast<std::size_t>(c)], c});
    }
  };

  while (!heap.empty()) {
    const auto [tc, c] = heap.top();
    heap.pop();
    if (done[static_cast<std::size_t>(c)] || tc > t[static_cast<std::size_t>(c)]) continue;
    done[static_cast<std::size_t>(c)] = 1;
    const auto ij = g.cell_to_index(c);
    const std::array<std::array<int, 2>, 4> nbs{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
    for (const auto& d : nbs) {
      const int ni = ij[0] + d[0], nj = ij[1] + d[1];
      if (ni < 0 || nj < 0 || ni >= nx || nj >= ny) continue;
      const int nc = g.index_to_cell(ni, nj);
      if (!done[static_cast<std::size_t>(nc)]) update(nc);
    }
  }
  return EikonalSolution(g, src, s_src, std::move(tau));
}

/// Log first-arrival times for every (source, receiver) pair, source-major.
inline Vector eikonal2d(const Grid& g, const Vector& log_s, const CrossholeLayout& layout) {
  if (g.ndim() != 2) throw InvalidArgument("eikonal2d: needs a 2-D grid");
  if (log_s.size() != g.n_cells()) throw InvalidArgument("eikonal2d: field size mismatch");
  if (!log_s.allFinite()) throw ForwardFailure("eikonal2d: non-finite log-slowness");
  std::vector<double> s(static_cast<std::size_t>(log_s.size()));
  for (Eigen::Index i = 0; i < log_s.size(); ++i) s[static_cast<std::size_t>(i)] = std::exp(log_s(i));
  Vector out(layout.n_pairs());
  Eigen::Index k = 0;
  for (std::size_t src = 0; src < layout.sources.size(); ++src) {
    const auto sol = fast_march(g, s, layout.sources[src]);
    for (int r : layout.pairs[src]) {
      const double tt = sol.at(layout.receivers[static_cast<std::size_t>(r)]);
      if (!(tt > 0.0) || !std::isfinite(tt)) throw ForwardFailure("eikonal2d: invalid traveltime");
      out(k++) = std::log(tt);
    }
  }
  return out;
}

class EikonalForward final : public ForwardModel {
 public:
  EikonalForward(Grid g, CrossholeLayout layout) : grid_(std::move(g)), layout_(std::move(layout)) {}
  int data_dim() const override { return layout_.n_pairs(); }
  Vector evaluate(const Vector& y) const override { return eikonal2d(grid_, y, layout_); }
  std::string name() const override { return "eikonal"; }
  const CrossholeLayout& layout() const { return layout_; }

 private:
  Grid grid_;
  CrossholeLayout layout_;
};

}  // namespace anchored
