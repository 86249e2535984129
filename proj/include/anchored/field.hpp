#pragma once

// Gaussian random fields on regular grids: Matérn-1.5 covariance, sampling,
// and exact linear conditioning.

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "anchored/linalg.hpp"

namespace anchored {

/// Regular 1-D or 2-D grid. Cell `c` of a 2-D grid sits at
/// (c % dims[0], c / dims[0]); axis 0 varies fastest.
class Grid {
 public:
  Grid() = default;
  Grid(std::vector<int> dims, std::vector<double> spacing)
      : dims_(std::move(dims)), spacing_(std::move(spacing)) {
    if (dims_.empty() || dims_.size() > 2) throw InvalidArgument("grid: 1 or 2 axes supported");
    if (spacing_.size() != dims_.size()) throw InvalidArgument("grid: spacing/axis count mismatch");
    for (std::size_t a = 0; a < dims_.size(); ++a) {
      if (dims_[a] < 2) throw InvalidArgument("grid: every axis needs at least 2 cells");
      if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a]))
        throw InvalidArgument("grid: spacing must be positive");
    }
  }

  static Grid line(int n, double dx = 1.0) { return Grid({n}, {dx}); }
  static Grid plane(int nx, int ny, double dx = 1.0, double dy = 1.0) {
    return Grid({nx, ny}, {dx, dy});
  }

  int ndim() const { return static_cast<int>(dims_.size()); }
  const std::vector<int>& dims() const { return dims_; }
  const std::vector<double>& spacing() const { return spacing_; }
  int n_cells() const {
    int n = 1;
    for (int d : dims_) n *= d;
    return n;
  }

  std::array<int, 2> cell_to_index(int c) const {
    if (ndim() == 1) return {c, 0};
    return {c % dims_[0], c / dims_[0]};
  }
  int index_to_cell(int i0, int i1 = 0) const { return ndim() == 1 ? i0 : i0 + dims_[0] * i1; }

  /// Cell-centre coordinates.
  std::array<double, 2> coord(int c) const {
    const auto ij = cell_to_index(c);
    std::array<double, 2> x{(ij[0] + 0.5) * spacing_[0], 0.0};
    if (ndim() == 2) x[1] = (ij[1] + 0.5) * spacing_[1];
    return x;
  }

  double distance(int a, int b) const {
    const auto p = coord(a), q = coord(b);
    return std::hypot(p[0] - q[0], p[1] - q[1]);
  }

  /// Physical extent along an axis.
  double length(int axis) const { return dims_[axis] * spacing_[axis]; }
  double max_length() const {
    double m = 0.0;
    for (int a = 0; a < ndim(); ++a) m = std::max(m, length(a));
    return m;
  }

  bool operator==(const Grid&) const = default;

 private:
  std::vector<int> dims_;
  std::vector<double> spacing_;
};

namespace detail {
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
}  // namespace detail

/// Mean, range, variance and nugget fraction of a Matérn-1.5 field.
struct GeostatParams {
  double beta = 0.0;
  double lambda = 1.0;
  double eta2 = 1.0;
  double tau = 0.0;

  static constexpr int kSize = 4;

  void validate() const {
    if (!std::isfinite(beta)) throw InvalidParameter("geostat: beta must be finite");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidParameter("geostat: lambda must be positive");
    if (!(eta2 > 0.0) || !std::isfinite(eta2)) throw InvalidParameter("geostat: eta2 must be positive");
    if (!(tau >= 0.0 && tau < 1.0)) throw InvalidParameter("geostat: tau must lie in [0,1)");
  }

  /// (β, log λ, log η², logit τ)
  Vector transformed() const {
    Vector t(kSize);
    t << beta, std::log(lambda), std::log(eta2), std::log(tau) - std::log1p(-tau);
    return t;
  }

  static GeostatParams from_transformed(const Eigen::Ref<const Vector>& t) {
    if (t.size() != kSize) throw InvalidArgument("geostat: transformed vector must have 4 entries");
    GeostatParams p;
    p.beta = t(0);
    p.lambda = std::exp(t(1));
    p.eta2 = std::exp(t(2));
    p.tau = 1.0 / (1.0 + std::exp(-t(3)));
    if (p.tau >= 1.0) p.tau = std::nextafter(1.0, 0.0);
    return p;
  }
};

struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

/// Matérn correlation with smoothness 1.5: (1 + d/λ)·exp(−d/λ).
inline double matern15_correlation(double d, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw InvalidParameter("matern15: range must be positive and finite");
  if (!(d >= 0.0)) throw InvalidParameter("matern15: distance must be non-negative");
  const double r = d / lambda;
  return (1.0 + r) * std::exp(-r);
}

inline constexpr int kDefaultMaxDenseCells = 4096;

/// Pairwise cell-centre distances, cached so per-sample covariance builds
/// only pay for the correlation evaluations.
class DistanceTable {
 public:
  explicit DistanceTable(const Grid& grid, int max_cells = kDefaultMaxDenseCells) : grid_(grid) {
    const int n = grid.n_cells();
    if (n > max_cells)
      throw CapacityError("grid of " + std::to_string(n) + " cells exceeds dense cap " +
                          std::to_string(max_cells));
    d_.resize(n, n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) d_(i, j) = grid.distance(i, j);
  }
  const Grid& grid() const { return grid_; }
  const Matrix& distances() const { return d_; }

  /// (1 − τ)η²ρ(d) off the diagonal, η² on it.
  Matrix covariance(const GeostatParams& p) const {
    p.validate();
    const double sill = (1.0 - p.tau) * p.eta2;
    const double inv = 1.0 / p.lambda;
    Matrix c = d_.unaryExpr([&](double d) {
      const double r = d * inv;
      return sill * (1.0 + r) * std::exp(-r);
    });
    c.diagonal().setConstant(p.eta2);
    return c;
  }

  GaussianMoments moments(const GeostatParams& p) const {
    return {Vector::Constant(grid_.n_cells(), p.beta), covariance(p)};
  }

 private:
  Grid grid_;
  Matrix d_;
};

inline Matrix build_covariance(const Grid& grid, const GeostatParams& params,
                               int max_cells = kDefaultMaxDenseCells) {
  return DistanceTable(grid, max_cells).covariance(params);
}

/// Draw from N(mean, cov) by (jittered) Cholesky. A zero covariance returns
/// the mean unchanged.
inline Vector sample_gaussian(const GaussianMoments& m, Rng& rng) {
  const Eigen::Index n = m.mean.size();
  if (m.cov.rows() != n || m.cov.cols() != n) throw InvalidArgument("sample_gaussian: shape mismatch");
  const double scale = n ? m.cov.diagonal().cwiseAbs().maxCoeff() : 0.0;
  if (scale == 0.0) return m.mean;
  const auto f = cholesky_with_jitter(m.cov, scale);
  return m.mean + f.llt.matrixL() * standard_normal(n, rng);
}

/// Gaussian conditioning on exact linear constraints A·y = v.
class LinearConditioner {
 public:
  LinearConditioner(GaussianMoments prior, Matrix a) : prior_(std::move(prior)), a_(std::move(a)) {
    const Eigen::Index n = prior_.mean.size();
    if (a_.cols() != n) throw InvalidArgument("conditioning: constraint matrix has wrong width");
    if (a_.rows() > n) throw InvalidConstraint("conditioning: more constraints than cells");
    if (numeric_rank(a_) < a_.rows()) throw InvalidConstraint("conditioning: constraint matrix is rank deficient");
    sat_ = prior_.cov * a_.transpose();
    Matrix k = a_ * sat_;
    symmetrize(k);
    const double scale = k.rows() ? k.diagonal().cwiseAbs().maxCoeff() : 1.0;
    try {
      k_ = cholesky_with_jitter(k, scale);
    } catch (const NumericalError& e) {
      throw InvalidConstraint(std::string("conditioning: A Σ Aᵀ is singular: ") + e.what());
    }
  }

  const Matrix& constraint() const { return a_; }
  const GaussianMoments& prior() const { return prior_; }

  GaussianMoments condition(const Vector& values) const {
    check(values);
    GaussianMoments out;
    out.mean = prior_.mean + sat_ * k_.llt.solve(values - a_ * prior_.mean);
    out.cov = prior_.cov - sat_ * k_.llt.solve(sat_.transpose());
    symmetrize(out.cov);
    return out;
  }

  /// Two-step conditional simulation: unconditional draw, then kriging update
  /// of the residual so that A·y = v holds for the returned field.
  Vector simulate(const Vector& values, Rng& rng) const {
    check(values);
    const Vector y = sample_gaussian(prior_, rng);
    return update(y, values);
  }

  Vector update(const Vector& y, const Vector& values) const {
    return y + sat_ * k_.llt.solve(values - a_ * y);
  }

 private:
  void check(const Vector& values) const {
    if (values.size() != a_.rows()) throw InvalidArgument("conditioning: value count mismatch");
  }

  GaussianMoments prior_;
  Matrix a_;
  Matrix sat_;
  JitteredCholesky k_;
};

inline GaussianMoments condition_gaussian(const GaussianMoments& m, const Matrix& a, const Vector& values) {
  if (a.rows() >= m.mean.size()) throw InvalidConstraint("condition_gaussian: needs fewer constraints than cells");
  return LinearConditioner(m, a).condition(values);
}

inline Vector conditional_simulate(const GaussianMoments& m, const Matrix& a, const Vector& values, Rng& rng) {
  return LinearConditioner(m, a).simulate(values, rng);
}

/// Gamma prior on the range, beta prior on the nugget; β and log η² flat.
/// β's flat prior and (η²)⁻¹ are improper, so only density ratios are
/// meaningful and the initial approximation must be proper.
struct GeostatPrior {
  double range_shape = 2.0;
  double range_scale = 1.0;
  double nugget_a = 1.0;
  double nugget_b = 9.0;

  static GeostatPrior defaults_for(const Grid& g) {
    GeostatPrior p;
    p.range_scale = 0.25 * g.max_length();
    return p;
  }
};

/// Log prior density in transformed coordinates, Jacobians included.
inline double geostat_prior_logdensity(const Eigen::Ref<const Vector>& t, const GeostatPrior& prior) {
  if (t.size() != GeostatParams::kSize) throw InvalidArgument("geostat prior: need 4 entries");
  const double log_lambda = t(1);
  const double lambda = std::exp(log_lambda);
  const double k = prior.range_shape, s = prior.range_scale;
  const double log_gamma = (k - 1.0) * log_lambda - lambda / s - std::lgamma(k) - k * std::log(s);
  const double u = t(3);
  const double log_tau = -detail::softplus(-u);
  const double log_1m_tau = -detail::softplus(u);
  const double a = prior.nugget_a, b = prior.nugget_b;
  const double log_beta = (a - 1.0) * log_tau + (b - 1.0) * log_1m_tau -
                          (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
  // dλ/d(log λ) = λ; dτ/d(logit τ) = τ(1−τ); (η²)⁻¹·η² = 1.
  return log_gamma + log_lambda + log_beta + log_tau + log_1m_tau;
}

}  // namespace anchored
