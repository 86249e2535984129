#pragma once

// 1-D overland plane: ∂h/∂t + ∂q/∂x = b, q = h·u, u = r⁻¹ h^{2/3} s_f^{1/2},
// s_f = s0 − ∂h/∂x. Dry start, no inflow at x = 0. Explicit upwind march
// with an adaptive step bounded by the advective and diffusive limits.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "anchored/forward/model.hpp"

namespace anchored {

struct RainEvent {
  enum class Observe { discharge, depth };

  double intensity = 0.0;  // m/s
  double duration = 0.0;   // s
  Observe observe = Observe::discharge;
  double interval = 600.0;  // s between outlet samples
  double horizon = 10800.0; // s, last sample time

  int n_samples() const { return static_cast<int>(std::floor(horizon / interval + 1e-9)); }

  static double mm_per_hour(double v) { return v / 1000.0 / 3600.0; }
};

struct RunoffSettings {
  double dx = 1.0;
  double bed_slope = 0.01;
  double cfl = 0.5;
  double max_step = 10.0;
  double slope_floor = 1e-8;
  double log_floor = 1e-10;
  long max_steps = 400000;  // per event; beyond this the draw is rejected
};

struct RunoffSeries {
  std::vector<double> times;
  std::vector<double> values;
  double rain_volume = 0.0;     // per unit width
  double outflow_volume = 0.0;  // per unit width
  double storage = 0.0;         // per unit width at the final time
};

namespace detail {

inline void runoff_fluxes(const std::vector<double>& h, const Vector& roughness, const RunoffSettings& s,
                          std::vector<double>& q, std::vector<double>& sf) {
  const std::size_t n = h.size();
  for (std::size_t i = 0; i < n; ++i) {
    double slope = s.bed_slope;
    if (i + 1 < n) slope -= (h[i + 1] - h[i]) / s.dx;
    slope = std::max(slope, s.slope_floor);
    sf[i] = slope;
    q[i] = h[i] > 0.0 ? std::pow(h[i], 5.0 / 3.0) * std::sqrt(slope) / roughness(static_cast<Eigen::Index>(i)) : 0.0;
  }
}

}  // namespace detail

/// Outlet series for one rain event on a roughness field r (s m^-1/3).
inline RunoffSeries runoff_event(const Vector& roughness, const RainEvent& ev, const RunoffSettings& s = {}) {
  const auto n = static_cast<std::size_t>(roughness.size());
  if (n < 2) throw InvalidArgument("runoff: need at least 2 cells");
  if (!(s.bed_slope > 0.0)) throw InvalidArgument("runoff: bed slope must be positive");
  if (!((roughness.array() > 0.0).all() && roughness.allFinite()))
    throw ForwardFailure("runoff: roughness must be positive and finite");

  std::vector<double> h(n, 0.0), q(n, 0.0), sf(n, 0.0);
  RunoffSeries out;
  const int ns = ev.n_samples();
  double t = 0.0;
  int next_sample = 1;
  const double length = static_cast<double>(n) * s.dx;
  long steps = 0;

  while (next_sample <= ns) {
    if (++steps > s.max_steps)
      throw ForwardFailure("runoff: step budget of " + std::to_string(s.max_steps) + " exhausted at t = " +
                           std::to_string(t) + " s");
    detail::runoff_fluxes(h, roughness, s, q, sf);
    double dt = s.max_step;
    for (std::size_t i = 0; i < n; ++i) {
      if (h[i] <= 0.0) continue;
      const double celerity = (5.0 / 3.0) * q[i] / h[i];
      if (celerity > 0.0) dt = std::min(dt, s.cfl * s.dx / celerity);
      const double diffusivity = q[i] / (2.0 * sf[i]);
      if (diffusivity > 0.0) dt = std::min(dt, s.cfl * s.dx * s.dx / (2.0 * diffusivity));
    }
    const double t_sample = next_sample * ev.interval;
    if (t < ev.duration && t + dt > ev.duration) dt = ev.duration - t;
    if (t + dt > t_sample) dt = t_sample - t;
    if (!(dt > 0.0)) dt = std::min(s.max_step, t_sample - t);

    const double rain = t < ev.duration ? ev.intensity : 0.0;
    double upstream = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      h[i] += dt * (rain - (q[i] - upstream) / s.dx);
      upstream = q[i];
      if (h[i] < 0.0) h[i] = 0.0;
      if (!std::isfinite(h[i])) throw ForwardFailure("runoff: non-finite depth");
    }
    out.rain_volume += rain * dt * length;
    out.outflow_volume += q[n - 1] * dt;
    t += dt;

    if (std::abs(t - t_sample) < 1e-9 * std::max(1.0, t_sample)) {
      t = t_sample;
      detail::runoff_fluxes(h, roughness, s, q, sf);
      out.times.push_back(t);
      out.values.push_back(ev.observe == RainEvent::Observe::discharge ? q[n - 1] : h[n - 1]);
      ++next_sample;
    }
  }
  for (double v : h) out.storage += v * s.dx;
  return out;
}

/// The two-event plan: 60 min at 5 mm/hr with discharge every 10 min for
/// 3 h, then 30 min at 20 mm/hr with depth every 5 min for 4 h.
inline std::vector<RainEvent> default_rain_events() {
  RainEvent a{RainEvent::mm_per_hour(5.0), 3600.0, RainEvent::Observe::discharge, 600.0, 10800.0};
  RainEvent b{RainEvent::mm_per_hour(20.0), 1800.0, RainEvent::Observe::depth, 300.0, 14400.0};
  return {a, b};
}

/// Concatenated (log q, log h) outlet series for a log-roughness field.
inline Vector runoff1d(const Vector& log_r, const std::vector<RainEvent>& events, const RunoffSettings& s = {}) {
  if (!log_r.allFinite()) throw ForwardFailure("runoff: non-finite log-roughness");
  const Vector r = log_r.array().exp();
  std::vector<double> all;
  for (const auto& ev : events) {
    const auto series = runoff_event(r, ev, s);
    for (double v : series.values) all.push_back(std::log(std::max(v, s.log_floor)));
  }
  return Eigen::Map<const Vector>(all.data(), static_cast<Eigen::Index>(all.size()));
}

class RunoffForward final : public ForwardModel {
 public:
  RunoffForward(std::vector<RainEvent> events, RunoffSettings settings)
      : events_(std::move(events)), settings_(settings) {
    for (const auto& e : events_) dim_ += e.n_samples();
  }
  int data_dim() const override { return dim_; }
  Vector evaluate(const Vector& y) const override { return runoff1d(y, events_, settings_); }
  std::string name() const override { return "runoff"; }

 private:
  std::vector<RainEvent> events_;
  RunoffSettings settings_;
  int dim_ = 0;
};

}  // namespace anchored
