#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <vector>
#include <algorithm>

#include "anchored/errors.hpp"
#include "anchored/rng.hpp"

namespace anchored {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Cholesky factor of `a + jitter*I`, where jitter climbs a decade ladder
/// from `min_rel*scale` to `max_rel*scale` until the factorization succeeds.
struct JitteredCholesky {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;

  Matrix L() const { return llt.matrixL(); }
  double log_det() const {
    const auto& m = llt.matrixLLT();
    double s = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) s += std::log(m(i, i));
    return 2.0 * s;
  }
};

inline bool factor_ok(const Eigen::LLT<Matrix>& llt) {
  if (llt.info() != Eigen::Success) return false;
  const auto& m = llt.matrixLLT();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (!(m(i, i) > 0.0) || !std::isfinite(m(i, i))) return false;
  return true;
}

inline JitteredCholesky cholesky_with_jitter(const Matrix& a, double scale, double min_rel = 1e-12,
                                             double max_rel = 1e-8) {
  if (a.rows() != a.cols()) throw InvalidArgument("cholesky: matrix is not square");
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    scale = a.rows() > 0 ? a.diagonal().cwiseAbs().maxCoeff() : 1.0;
    if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
  }
  JitteredCholesky out;
  out.llt.compute(a);
  if (factor_ok(out.llt)) return out;
  for (double rel = min_rel; rel <= max_rel * (1.0 + 1e-9); rel *= 10.0) {
    Matrix b = a;
    b.diagonal().array() += rel * scale;
    out.llt.compute(b);
    if (factor_ok(out.llt)) {
      out.jitter = rel * scale;
      return out;
    }
  }
  std::ostringstream msg;
  msg << "cholesky failed after jitter " << max_rel * scale << " (n=" << a.rows()
      << ", min diag=" << (a.rows() ? a.diagonal().minCoeff() : 0.0)
      << ", max diag=" << (a.rows() ? a.diagonal().maxCoeff() : 0.0) << ")";
  throw NumericalError(msg.str());
}

/// log N(x | mean, LLᵀ).
inline double log_normal_density(const Vector& x, const Vector& mean, const JitteredCholesky& f) {
  Vector r = x - mean;
  f.llt.matrixL().solveInPlace(r);
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + f.log_det() + r.squaredNorm());
}

inline double log_normal_density(const Vector& x, const Vector& mean, const Matrix& cov) {
  const double scale = cov.rows() ? cov.diagonal().cwiseAbs().maxCoeff() : 1.0;
  return log_normal_density(x, mean, cholesky_with_jitter(cov, scale));
}

inline double log_normal_1d(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + r * r / var);
}

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline Vector standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

inline void symmetrize(Matrix& a) { a = 0.5 * (a + a.transpose()).eval(); }

/// Weighted mean of the rows of `x`.
inline Vector weighted_mean(const Matrix& x, const Vector& w) {
  return (x.transpose() * w) / w.sum();
}

/// Weighted covariance Σ wᵢ (xᵢ − x̄)(xᵢ − x̄)ᵀ / Σ wᵢ.
inline Matrix weighted_cov(const Matrix& x, const Vector& w) {
  const Vector mu = weighted_mean(x, w);
  Matrix c = x.rowwise() - mu.transpose();
  Matrix out = c.transpose() * (c.array().colwise() * w.array()).matrix() / w.sum();
  symmetrize(out);
  return out;
}

inline bool is_psd(const Matrix& a, double rel_tol = 1e-8) {
  if (a.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  const auto ev = es.eigenvalues();
  const double top = std::max(ev.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  return ev.minCoeff() >= -rel_tol * top;
}

inline Eigen::Index numeric_rank(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0) return 0;
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  qr.setThreshold(1e-10);
  return qr.rank();
}

inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - f) + sorted[hi] * f;
}

/// Linear-interpolation quantile (type 7).
inline double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, p);
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

}  // namespace anchored
