#pragma once

// Steady 1-D saturated flow d/dx(K dh/dx) = 0 with h = 1 at the left edge and
// h = 0 at the right edge. The discrete solution has constant flux, so head
// drops in proportion to the accumulated series resistance Δx/K.

#include <vector>

#include "anchored/forward/model.hpp"

namespace anchored {

/// Heads at the n + 1 cell faces from conductivities K.
inline Vector darcy_face_heads(const Vector& k, double dx = 1.0) {
  const Eigen::Index n = k.size();
  Vector r(n + 1);
  r(0) = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) r(i + 1) = r(i) + dx / k(i);
  return Vector::Ones(n + 1) - r / r(n);
}

/// Heads at cell centres from conductivities K; the half-cell resistance
/// of cell i is included.
inline Vector darcy_center_heads(const Vector& k, double dx = 1.0) {
  const Eigen::Index n = k.size();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += dx / k(i);
  Vector h(n);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double half = 0.5 * dx / k(i);
    h(i) = 1.0 - (acc + half) / total;
    acc += 2.0 * half;
  }
  return h;
}

/// Heads at the observed cells for a log-conductivity field.
inline Vector darcy1d(const Vector& log_k, const std::vector<int>& cells, double dx = 1.0) {
  if (!log_k.allFinite()) throw ForwardFailure("darcy1d: non-finite log-conductivity");
  const Vector h = darcy_center_heads(log_k.array().exp().matrix(), dx);
  Vector out(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t j = 0; j < cells.size(); ++j) {
    if (cells[j] < 0 || cells[j] >= h.size()) throw InvalidArgument("darcy1d: observation cell outside grid");
    out(static_cast<Eigen::Index>(j)) = h(cells[j]);
  }
  return out;
}

/// `count` cells spread evenly over a 1-D grid of `n` cells.
inline std::vector<int> evenly_spaced_cells(int n, int count) {
  std::vector<int> cells;
  for (int k = 0; k < count; ++k) cells.push_back(static_cast<int>((k + 0.5) * n / count));
  return cells;
}

class DarcyForward final : public ForwardModel {
 public:
  DarcyForward(std::vector<int> cells, double dx) : cells_(std::move(cells)), dx_(dx) {}
  int data_dim() const override { return static_cast<int>(cells_.size()); }
  Vector evaluate(const Vector& y) const override { return darcy1d(y, cells_, dx_); }
  std::string name() const override { return "darcy"; }
  const std::vector<int>& cells() const { return cells_; }

 private:
  std::vector<int> cells_;
  double dx_;
};

}  // namespace anchored
