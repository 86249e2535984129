#pragma once

#include <string>

#include "anchored/field.hpp"

namespace anchored {

/// Deterministic map from a field realization to the observable data
/// vector. Implementations must be reentrant; failures are reported by
/// throwing ForwardFailure (or returning non-finite values).
class ForwardModel {
 public:
  virtual ~ForwardModel() = default;
  virtual int data_dim() const = 0;
  virtual Vector evaluate(const Vector& y) const = 0;
  virtual std::string name() const = 0;
};

/// z = G·y, used by the conjugate oracle problem.
class LinearForward final : public ForwardModel {
 public:
  explicit LinearForward(Matrix g) : g_(std::move(g)) {}
  int data_dim() const override { return static_cast<int>(g_.rows()); }
  Vector evaluate(const Vector& y) const override {
    if (y.size() != g_.cols()) throw ForwardFailure("linear forward: field size mismatch");
    return g_ * y;
  }
  std::string name() const override { return "linear"; }
  const Matrix& matrix() const { return g_; }

 private:
  Matrix g_;
};

}  // namespace anchored
