#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "anchored/linalg.hpp"

namespace anchored {

/// Sample size for iteration k (1-based): explicit list if given, else
/// round(base + extra·decay^(k−1)) with ties to even.
struct ScheduleSpec {
  std::vector<int> sizes;
  double base = 600.0;
  double extra = 1800.0;
  double decay = 0.75;
};

inline int sample_size_schedule(int k, const ScheduleSpec& spec = {}) {
  if (k < 1) throw InvalidArgument("schedule: iteration index starts at 1");
  if (!spec.sizes.empty()) {
    const auto i = static_cast<std::size_t>(k - 1);
    return spec.sizes[std::min(i, spec.sizes.size() - 1)];
  }
  return static_cast<int>(std::nearbyint(spec.base + spec.extra * std::pow(spec.decay, k - 1)));
}

/// Normalized importance weights from log prior and log proposal densities,
/// computed in log space with max-subtraction.
inline Vector importance_weights(const Vector& log_prior, const Vector& log_proposal) {
  if (log_prior.size() != log_proposal.size()) throw InvalidArgument("importance_weights: length mismatch");
  Vector lr = log_prior - log_proposal;
  double top = -std::numeric_limits<double>::infinity(), low = std::numeric_limits<double>::infinity();
  for (double v : lr)
    if (!std::isnan(v)) {
      top = std::max(top, v);
      low = std::min(low, v);
    }
  if (!std::isfinite(top))
    throw DegenerateWeights("importance_weights: every weight underflowed (log-ratio range [" + std::to_string(low) +
                            ", " + std::to_string(top) + "])");
  Vector w = lr.unaryExpr([&](double v) { return std::isnan(v) ? 0.0 : std::exp(v - top); });
  return w / w.sum();
}

/// Σ_j log N(z_obs[j] | weighted mean of z[·, j], weighted variance of
/// z[·, j]). Correlations between data dimensions are ignored. Variances
/// below 1e-12 are floored; `floored` counts those dimensions.
inline double integrated_log_likelihood(const Matrix& z, const Vector& w, const Vector& z_obs, int* floored = nullptr) {
  if (z.cols() != z_obs.size() || z.rows() != w.size()) throw InvalidArgument("lstar: shape mismatch");
  const double wsum = w.sum();
  double total = 0.0;
  int n_floor = 0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double mean = z.col(j).dot(w) / wsum;
    double var = (z.col(j).array() - mean).square().matrix().dot(w) / wsum;
    if (!(var >= 1e-12)) {
      var = 1e-12;
      ++n_floor;
    }
    total += log_normal_1d(z_obs(j), mean, var);
  }
  if (floored) *floored = n_floor;
  return total;
}

/// Importance weights that turn this iteration's data sample into a sample
/// of the next iteration's predictive under a candidate posterior:
/// ω ∝ (f_cand(θ_cand)/π(θ_cand)) / (f_prev(θ)/π(θ)).
inline Vector candidate_prediction_weights(const Vector& log_f_candidate, const Vector& log_prior_candidate,
                                           const Vector& log_f_previous, const Vector& log_prior_previous) {
  return importance_weights(log_f_candidate - log_prior_candidate + log_prior_previous, log_f_previous);
}

inline double predict_lstar(const Matrix& z, const Vector& log_f_candidate, const Vector& log_prior_candidate,
                            const Vector& log_f_previous, const Vector& log_prior_previous, const Vector& z_obs) {
  const Vector w =
      candidate_prediction_weights(log_f_candidate, log_prior_candidate, log_f_previous, log_prior_previous);
  return integrated_log_likelihood(z, w, z_obs);
}

/// Per-dimension median absolute prediction error, normalized by the
/// iteration-1 baseline. Dimensions with zero baseline are NaN and left out
/// of the summaries.
struct MadRatios {
  Vector mad;
  Vector ratios;
  double median = 0.0;
  double max = 0.0;
  int excluded = 0;
};

inline Vector median_abs_difference(const Matrix& z, const Vector& z_obs) {
  Vector out(z.cols());
  std::vector<double> col(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) col[static_cast<std::size_t>(i)] = std::abs(z(i, j) - z_obs(j));
    out(j) = median(col);
  }
  return out;
}

inline MadRatios mad_ratio(const Matrix& z, const Vector& baseline_mad, const Vector& z_obs) {
  MadRatios r;
  r.mad = median_abs_difference(z, z_obs);
  r.ratios.resize(r.mad.size());
  std::vector<double> kept;
  for (Eigen::Index j = 0; j < r.mad.size(); ++j) {
    if (!(baseline_mad(j) > 0.0)) {
      r.ratios(j) = std::numeric_limits<double>::quiet_NaN();
      ++r.excluded;
      continue;
    }
    r.ratios(j) = r.mad(j) / baseline_mad(j);
    kept.push_back(r.ratios(j));
  }
  if (!kept.empty()) {
    r.median = median(kept);
    r.max = *std::max_element(kept.begin(), kept.end());
  }
  return r;
}

/// Weighted PCA of simulated data; the observation is projected with the
/// same centre and loadings.
struct PcaReduction {
  Vector center;
  Matrix loadings;  // n_z × m, orthonormal columns
  double explained = 1.0;
  bool constant = false;

  int dims() const { return static_cast<int>(loadings.cols()); }
  Matrix transform(const Matrix& z) const { return (z.rowwise() - center.transpose()) * loadings; }
  Vector transform(const Vector& z) const { return loadings.transpose() * (z - center); }
};

inline PcaReduction pca_fit(const Matrix& z, const Vector& w, double threshold) {
  if (z.rows() <= 2 || z.cols() < 1) throw InvalidArgument("pca: need n > 2 samples and at least one dimension");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw InvalidArgument("pca: threshold must lie in (0, 1]");
  PcaReduction p;
  p.center = weighted_mean(z, w);
  const Matrix c = weighted_cov(z, w);
  Eigen::SelfAdjointEigenSolver<Matrix> es(c);
  const Vector ev = es.eigenvalues().reverse().cwiseMax(0.0);
  const Matrix vec = es.eigenvectors().rowwise().reverse();
  const double total = ev.sum();
  const Eigen::Index nz = z.cols();
  if (!(total > 0.0)) {
    p.constant = true;
    p.loadings = Matrix::Zero(nz, 1);
    p.loadings(0, 0) = 1.0;
    p.explained = 1.0;
    return p;
  }
  Eigen::Index m = 0;
  double acc = 0.0;
  while (m < nz) {
    acc += ev(m);
    ++m;
    if (acc >= threshold * total * (1.0 - 1e-12)) break;
  }
  p.loadings = vec.leftCols(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::Index arg = 0;
    p.loadings.col(j).cwiseAbs().maxCoeff(&arg);
    if (p.loadings(arg, j) < 0.0) p.loadings.col(j) *= -1.0;
  }
  p.explained = acc / total;
  return p;
}

struct PcaOutput {
  PcaReduction reduction;
  Matrix reduced;
  Vector reduced_obs;
};

inline PcaOutput pca_reduce(const Matrix& z, const Vector& w, double threshold, const Vector& z_obs) {
  PcaOutput o;
  o.reduction = pca_fit(z, w, threshold);
  o.reduced = o.reduction.transform(z);
  o.reduced_obs = o.reduction.transform(z_obs);
  return o;
}

}  // namespace anchored
