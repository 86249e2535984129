#pragma once

// Weighted Gaussian kernel density estimation and normal-mixture algebra.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "anchored/linalg.hpp"
#include "anchored/parallel.hpp"

namespace anchored {

struct WeightedSample {
  Matrix points;   // n × d
  Vector weights;  // n, sums to 1

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
  double n_eff() const { return 1.0 / weights.squaredNorm(); }

  void validate() const {
    if (weights.size() != points.rows()) throw InvalidArgument("weighted sample: weight count mismatch");
    if (!points.allFinite()) throw InvalidArgument("weighted sample: non-finite point");
    if ((weights.array() < 0.0).any()) throw InvalidArgument("weighted sample: negative weight");
    if (std::abs(weights.sum() - 1.0) > 1e-10) throw InvalidArgument("weighted sample: weights must sum to 1");
  }
};

struct NormalMixture {
  Vector weights;
  Matrix means;  // k × d
  std::vector<Matrix> covs;
  std::vector<std::string> labels;

  Eigen::Index size() const { return weights.size(); }
  Eigen::Index dim() const { return means.cols(); }

  void validate() const {
    if (means.rows() != weights.size() || static_cast<Eigen::Index>(covs.size()) != weights.size())
      throw InvalidArgument("mixture: component count mismatch");
    if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-9)
      throw InvalidArgument("mixture: weights must be non-negative and normalized");
    for (const auto& c : covs)
      if (c.rows() != dim() || c.cols() != dim()) throw InvalidArgument("mixture: covariance shape mismatch");
  }

  static NormalMixture single(const Vector& mean, const Matrix& cov) {
    NormalMixture m;
    m.weights = Vector::Ones(1);
    m.means = mean.transpose();
    m.covs = {cov};
    return m;
  }
};

/// Per-component Cholesky factors, built once and reused for density
/// evaluation and sampling.
class MixtureEvaluator {
 public:
  explicit MixtureEvaluator(const NormalMixture& mix) : mix_(&mix) {
    mix.validate();
    factors_.reserve(static_cast<std::size_t>(mix.size()));
    for (Eigen::Index i = 0; i < mix.size(); ++i) {
      const Matrix& c = mix.covs[static_cast<std::size_t>(i)];
      factors_.push_back(cholesky_with_jitter(c, c.diagonal().cwiseAbs().maxCoeff()));
    }
    log_w_ = mix.weights.array().log();
  }

  double logdensity(const Vector& x) const {
    Matrix one = x.transpose();
    return logdensity_rows(one)(0);
  }

  /// Log density at every row of `x`, by streaming log-sum-exp over
  /// components so no n × k table is held.
  Vector logdensity_rows(const Matrix& x) const {
    const Eigen::Index n = x.rows(), d = mix_->dim();
    if (x.cols() != d) throw InvalidArgument("mixture: evaluation point dimension mismatch");
    Vector run_max = Vector::Constant(n, -std::numeric_limits<double>::infinity());
    Vector run_sum = Vector::Zero(n);
    Matrix r(d, n);
    for (Eigen::Index k = 0; k < mix_->size(); ++k) {
      if (!(mix_->weights(k) > 0.0)) continue;
      const auto& f = factors_[static_cast<std::size_t>(k)];
      r = x.transpose().colwise() - mix_->means.row(k).transpose();
      f.llt.matrixL().solveInPlace(r);
      const double c = log_w_(k) - 0.5 * (static_cast<double>(d) * kLog2Pi + f.log_det());
      const Vector q = r.colwise().squaredNorm().transpose();
      for (Eigen::Index i = 0; i < n; ++i) {
        const double v = c - 0.5 * q(i);
        if (v > run_max(i)) {
          run_sum(i) = run_sum(i) * std::exp(run_max(i) - v) + 1.0;
          run_max(i) = v;
        } else {
          run_sum(i) += std::exp(v - run_max(i));
        }
      }
    }
    return run_max.array() + run_sum.array().log();
  }

  /// Pick a component by weight, then draw from it. One stream serves the
  /// whole batch, so output depends only on the seed.
  Matrix sample(Eigen::Index n, Rng& rng) const {
    std::vector<double> cdf(static_cast<std::size_t>(mix_->size()));
    std::partial_sum(mix_->weights.begin(), mix_->weights.end(), cdf.begin());
    std::uniform_real_distribution<double> u(0.0, cdf.back());
    Matrix out(n, mix_->dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = u(rng);
      auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
      auto k = static_cast<Eigen::Index>(std::min<std::ptrdiff_t>(it - cdf.begin(), mix_->size() - 1));
      while (!(mix_->weights(k) > 0.0) && k > 0) --k;
      const auto& f = factors_[static_cast<std::size_t>(k)];
      out.row(i) = (mix_->means.row(k).transpose() + f.llt.matrixL() * standard_normal(mix_->dim(), rng)).transpose();
    }
    return out;
  }

 private:
  const NormalMixture* mix_;
  std::vector<JitteredCholesky> factors_;
  Vector log_w_;
};

inline double mixture_logdensity(const NormalMixture& mix, const Vector& x) {
  return MixtureEvaluator(mix).logdensity(x);
}

inline Matrix mixture_sample(const NormalMixture& mix, Eigen::Index n, Rng& rng) {
  return MixtureEvaluator(mix).sample(n, rng);
}

/// Component-wise affine map x ↦ B·x + c.
inline NormalMixture mixture_linear_map(const NormalMixture& mix, const Matrix& b, const Vector& c) {
  if (b.rows() < 1) throw InvalidArgument("mixture_linear_map: map needs at least one row");
  if (b.cols() != mix.dim()) throw InvalidArgument("mixture_linear_map: map width mismatch");
  if (c.size() != b.rows()) throw InvalidArgument("mixture_linear_map: offset length mismatch");
  NormalMixture out;
  out.weights = mix.weights;
  out.means = (mix.means * b.transpose()).rowwise() + c.transpose();
  out.covs.reserve(mix.covs.size());
  for (const auto& v : mix.covs) {
    Matrix m = b * v * b.transpose();
    symmetrize(m);
    out.covs.push_back(std::move(m));
  }
  return out;
}

inline NormalMixture mixture_linear_map(const NormalMixture& mix, const Matrix& b) {
  return mixture_linear_map(mix, b, Vector::Zero(b.rows()));
}

/// Overall mean and covariance of a mixture.
inline std::pair<Vector, Matrix> mixture_moments(const NormalMixture& mix) {
  const Vector mean = mix.means.transpose() * mix.weights;
  Matrix cov = Matrix::Zero(mix.dim(), mix.dim());
  for (Eigen::Index i = 0; i < mix.size(); ++i) {
    const Vector d = mix.means.row(i).transpose() - mean;
    cov += mix.weights(i) * (mix.covs[static_cast<std::size_t>(i)] + d * d.transpose());
  }
  return {mean, cov};
}

inline constexpr double kComponentWeightFloor = 1e-12;

/// Condition a mixture over (θ, z) on z = z_obs. Each component is
/// conditioned exactly and reweighted by its z-marginal likelihood;
/// `err_cov`, when given, is added to every z-block first.
inline NormalMixture mixture_condition(const NormalMixture& mix, const Vector& z_obs,
                                       const std::vector<int>& theta_dims, const std::vector<int>& z_dims,
                                       const Matrix* err_cov = nullptr, int threads = 1) {
  const auto nt = static_cast<Eigen::Index>(theta_dims.size());
  const auto nz = static_cast<Eigen::Index>(z_dims.size());
  if (z_obs.size() != nz) throw InvalidArgument("mixture_condition: observation length mismatch");
  if (err_cov && (err_cov->rows() != nz || err_cov->cols() != nz))
    throw InvalidArgument("mixture_condition: error covariance shape mismatch");
  const Eigen::Index k = mix.size();
  std::vector<Vector> means(static_cast<std::size_t>(k));
  std::vector<Matrix> covs(static_cast<std::size_t>(k));
  Vector logv = Vector::Constant(k, -std::numeric_limits<double>::infinity());

  parallel_for(static_cast<std::size_t>(k), threads, [&](std::size_t ci) {
    const auto i = static_cast<Eigen::Index>(ci);
    if (!(mix.weights(i) > 0.0)) return;
    const Matrix& v = mix.covs[ci];
    const Vector m = mix.means.row(i).transpose();
    Vector m_t(nt), m_z(nz);
    Matrix v_tt(nt, nt), v_tz(nt, nz), v_zz(nz, nz);
    for (Eigen::Index a = 0; a < nt; ++a) {
      m_t(a) = m(theta_dims[a]);
      for (Eigen::Index b = 0; b < nt; ++b) v_tt(a, b) = v(theta_dims[a], theta_dims[b]);
      for (Eigen::Index b = 0; b < nz; ++b) v_tz(a, b) = v(theta_dims[a], z_dims[b]);
    }
    for (Eigen::Index a = 0; a < nz; ++a) {
      m_z(a) = m(z_dims[a]);
      for (Eigen::Index b = 0; b < nz; ++b) v_zz(a, b) = v(z_dims[a], z_dims[b]);
    }
    if (err_cov) v_zz += *err_cov;
    const auto f = cholesky_with_jitter(v_zz, v_zz.diagonal().cwiseAbs().maxCoeff());
    const Vector resid = z_obs - m_z;
    means[ci] = m_t + v_tz * f.llt.solve(resid);
    covs[ci] = v_tt - v_tz * f.llt.solve(v_tz.transpose());
    symmetrize(covs[ci]);
    logv(i) = std::log(mix.weights(i)) + log_normal_density(z_obs, m_z, f);
  });

  const double top = logv.maxCoeff();
  if (!std::isfinite(top))
    throw ConditioningFailure("mixture_condition: every component likelihood underflowed (max log-likelihood " +
                              std::to_string(top) + "); observation lies outside the simulated range");
  std::vector<double> lv(logv.begin(), logv.end());
  const double norm = log_sum_exp(lv);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < k; ++i)
    if (std::exp(logv(i) - norm) >= kComponentWeightFloor) keep.push_back(i);

  NormalMixture out;
  out.weights.resize(static_cast<Eigen::Index>(keep.size()));
  out.means.resize(static_cast<Eigen::Index>(keep.size()), nt);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const auto i = keep[r];
    out.weights(static_cast<Eigen::Index>(r)) = std::exp(logv(i) - norm);
    out.means.row(static_cast<Eigen::Index>(r)) = means[static_cast<std::size_t>(i)].transpose();
    out.covs.push_back(std::move(covs[static_cast<std::size_t>(i)]));
  }
  out.weights /= out.weights.sum();
  if (!mix.labels.empty())
    for (int t : theta_dims) out.labels.push_back(mix.labels[static_cast<std::size_t>(t)]);
  return out;
}

/// Candidate grid for the two kernel tuning parameters.
struct KdeTuning {
  std::vector<double> bandwidths;
  std::vector<double> localizations{0.1, 0.25, 0.5, 1.0};
  double min_ess = 30.0;
  bool weighted_local = true;  // false: Ĉᵢ from the unweighted neighbourhood

  KdeTuning() {
    for (int i = 0; i < 8; ++i) bandwidths.push_back(0.2 * std::pow(6.0, i / 7.0));
  }
};

struct KdeResult {
  NormalMixture mixture;
  double bandwidth = 0.0;
  double localization = 0.0;
  double score = -std::numeric_limits<double>::infinity();
  Matrix scores;  // bandwidth × localization
};

namespace detail {

struct LocalCovariances {
  std::vector<Matrix> covs;  // regularized Ĉᵢ
  std::vector<JitteredCholesky> factors;
  int fallbacks = 0;
};

inline JitteredCholesky regularized_factor(Matrix& c, const Matrix& global_diag, bool& fell_back) {
  fell_back = false;
  double scale = c.diagonal().cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) scale = std::max(global_diag.diagonal().maxCoeff(), 1.0);
  try {
    auto f = cholesky_with_jitter(c, scale);
    c.diagonal().array() += f.jitter;
    return f;
  } catch (const NumericalError&) {
    fell_back = true;
    c = global_diag;
    double g = c.diagonal().maxCoeff();
    auto f = cholesky_with_jitter(c, g > 0.0 ? g : 1.0);
    c.diagonal().array() += f.jitter;
    return f;
  }
}

/// Ĉᵢ = covariance of the ⌈αn⌉ nearest points to xᵢ (standardized
/// Euclidean distance, xᵢ included), weighted by the sample weights unless
/// `weighted` is false.
inline LocalCovariances local_covariances(const WeightedSample& s, double alpha, int threads, bool weighted = true) {
  const Eigen::Index n = s.size(), d = s.dim();
  const Vector uniform = Vector::Constant(n, 1.0 / static_cast<double>(n));
  const Vector& cw = weighted ? s.weights : uniform;
  const Matrix global = weighted_cov(s.points, cw);
  Matrix global_diag = Matrix::Zero(d, d);
  global_diag.diagonal() = global.diagonal();
  const auto k_nn = static_cast<Eigen::Index>(std::ceil(alpha * static_cast<double>(n) - 1e-9));

  LocalCovariances out;
  out.covs.resize(static_cast<std::size_t>(n));
  out.factors.resize(static_cast<std::size_t>(n));
  std::vector<char> fell(static_cast<std::size_t>(n), 0);

  if (k_nn >= n) {
    Matrix c = global;
    bool fb = false;
    auto f = regularized_factor(c, global_diag, fb);
    for (Eigen::Index i = 0; i < n; ++i) {
      out.covs[static_cast<std::size_t>(i)] = c;
      out.factors[static_cast<std::size_t>(i)] = f;
    }
    out.fallbacks = fb ? static_cast<int>(n) : 0;
    return out;
  }

  Vector sd = global.diagonal().cwiseSqrt();
  for (Eigen::Index j = 0; j < d; ++j)
    if (!(sd(j) > 0.0)) sd(j) = 1.0;
  const Matrix z = s.points.array().rowwise() / sd.transpose().array();

  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t ui) {
    const auto i = static_cast<Eigen::Index>(ui);
    const Vector dist = (z.rowwise() - z.row(i)).rowwise().squaredNorm();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::nth_element(idx.begin(), idx.begin() + (k_nn - 1), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
      return dist(a) < dist(b) || (dist(a) == dist(b) && a < b);
    });
    Matrix pts(k_nn, d);
    Vector w(k_nn);
    for (Eigen::Index r = 0; r < k_nn; ++r) {
      pts.row(r) = s.points.row(idx[static_cast<std::size_t>(r)]);
      w(r) = cw(idx[static_cast<std::size_t>(r)]);
    }
    if (!(w.sum() > 0.0)) w.setOnes();
    Matrix c = weighted_cov(pts, w);
    bool fb = false;
    out.factors[ui] = regularized_factor(c, global_diag, fb);
    out.covs[ui] = std::move(c);
    fell[ui] = fb ? 1 : 0;
  });
  out.fallbacks = static_cast<int>(std::count(fell.begin(), fell.end(), 1));
  return out;
}

/// Weighted leave-one-out log score for every bandwidth at one
/// localization: Σᵢ wᵢ log Σ_{j≠i} wⱼ/(1−wᵢ) N(xᵢ | xⱼ, h²Ĉⱼ).
inline Vector loo_scores(const WeightedSample& s, const LocalCovariances& lc, const std::vector<double>& hs) {
  const Eigen::Index n = s.size(), d = s.dim();
  const auto nh = static_cast<Eigen::Index>(hs.size());
  Matrix run_max = Matrix::Constant(n, nh, -std::numeric_limits<double>::infinity());
  Matrix run_sum = Matrix::Zero(n, nh);
  Vector inv2h2(nh), norm_h(nh);
  for (Eigen::Index a = 0; a < nh; ++a) {
    inv2h2(a) = 0.5 / (hs[static_cast<std::size_t>(a)] * hs[static_cast<std::size_t>(a)]);
    norm_h(a) = -0.5 * static_cast<double>(d) * kLog2Pi - static_cast<double>(d) * std::log(hs[static_cast<std::size_t>(a)]);
  }
  const Matrix xt = s.points.transpose();
  Matrix r(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!(s.weights(j) > 0.0)) continue;
    const auto& f = lc.factors[static_cast<std::size_t>(j)];
    r = xt.colwise() - xt.col(j);
    f.llt.matrixL().solveInPlace(r);
    const Vector q = r.colwise().squaredNorm().transpose();
    const double base = std::log(s.weights(j)) - 0.5 * f.log_det();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) continue;
      for (Eigen::Index a = 0; a < nh; ++a) {
        const double v = base + norm_h(a) - q(i) * inv2h2(a);
        double& m = run_max(i, a);
        if (v > m) {
          run_sum(i, a) = run_sum(i, a) * std::exp(m - v) + 1.0;
          m = v;
        } else {
          run_sum(i, a) += std::exp(v - m);
        }
      }
    }
  }
  Vector score = Vector::Zero(nh);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double wi = s.weights(i);
    if (!(wi > 0.0)) continue;
    const double shift = -std::log1p(-wi);
    for (Eigen::Index a = 0; a < nh; ++a) score(a) += wi * (shift + run_max(i, a) + std::log(run_sum(i, a)));
  }
  return score;
}

inline void check_kde_input(const WeightedSample& s, double min_ess) {
  s.validate();
  if (s.size() < s.dim() + 2)
    throw DegenerateSample("kde_fit: need at least d + 2 points (n=" + std::to_string(s.size()) +
                           ", d=" + std::to_string(s.dim()) + ")");
  if (s.weights.maxCoeff() >= 1.0 - 1e-12) throw DegenerateSample("kde_fit: all weight sits on one point");
  if (s.n_eff() < min_ess)
    throw DegenerateSample("kde_fit: effective sample size " + std::to_string(s.n_eff()) + " below floor " +
                           std::to_string(min_ess));
}

inline NormalMixture assemble(const WeightedSample& s, const LocalCovariances& lc, double h) {
  NormalMixture m;
  m.weights = s.weights;
  m.means = s.points;
  m.covs.reserve(lc.covs.size());
  for (const auto& c : lc.covs) m.covs.push_back(h * h * c);
  return m;
}

}  // namespace detail

/// Kernel mixture with fixed tuning: component i is N(xᵢ, h²Ĉᵢ) with weight wᵢ.
inline NormalMixture kde_build(const WeightedSample& s, double bandwidth, double localization,
                               double min_ess = 0.0, int threads = 1, bool weighted_local = true) {
  detail::check_kde_input(s, min_ess);
  return detail::assemble(s, detail::local_covariances(s, localization, threads, weighted_local), bandwidth);
}

/// Choose (h, α) on the tuning grid by weighted leave-one-out likelihood and
/// return the fitted mixture. Ties keep the earlier grid entry.
inline KdeResult kde_fit(const WeightedSample& s, const KdeTuning& tuning = {}, int threads = 1) {
  detail::check_kde_input(s, tuning.min_ess);
  if (tuning.bandwidths.empty() || tuning.localizations.empty()) throw InvalidArgument("kde_fit: empty tuning grid");
  const auto nh = static_cast<Eigen::Index>(tuning.bandwidths.size());
  const auto na = static_cast<Eigen::Index>(tuning.localizations.size());
  KdeResult out;
  out.scores.resize(nh, na);
  detail::LocalCovariances best_locals;
  for (Eigen::Index a = 0; a < na; ++a) {
    auto locals = detail::local_covariances(s, tuning.localizations[static_cast<std::size_t>(a)], threads,
                                             tuning.weighted_local);
    out.scores.col(a) = detail::loo_scores(s, locals, tuning.bandwidths);
    bool improved = false;
    for (Eigen::Index h = 0; h < nh; ++h) {
      const double v = out.scores(h, a);
      if (std::isfinite(v) && (!std::isfinite(out.score) || v > out.score)) {
        out.score = v;
        out.bandwidth = tuning.bandwidths[static_cast<std::size_t>(h)];
        out.localization = tuning.localizations[static_cast<std::size_t>(a)];
        improved = true;
      }
    }
    if (improved) best_locals = std::move(locals);
  }
  if (!std::isfinite(out.score)) throw DegenerateSample("kde_fit: no finite leave-one-out score");
  out.mixture = detail::assemble(s, best_locals, out.bandwidth);
  return out;
}

}  // namespace anchored
