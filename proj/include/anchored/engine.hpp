#pragma once

// Iterative conditional-mixture inversion with adaptive anchorsets.

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "anchored/anchors.hpp"
#include "anchored/diagnostics.hpp"
#include "anchored/field.hpp"
#include "anchored/forward/model.hpp"
#include "anchored/mixture.hpp"
#include "anchored/parallel.hpp"
#include "anchored/rng.hpp"

namespace anchored {

/// Initial approximation f⁽⁰⁾: a single normal centred at the typical
/// geostatistical values with variances inflated from prior draws.
/// β and log η² have flat priors, so their draws use the given spreads.
struct InitialSpec {
  GeostatParams center{0.0, 10.0, 1.0, 0.1};
  double beta_sd = 1.0;
  double log_eta2_sd = 1.0;
  double inflation = 16.0;
  int prior_draws = 1000;
  bool full_covariance = false;
};

struct Problem {
  Grid grid = Grid::line(2);
  GeostatPrior prior;
  std::optional<GeostatParams> fixed_geostat;  // θ₁ known and left out of θ
  LinearData linear;
  Vector z_obs;
  std::optional<Matrix> err_cov;
  InitialSpec init;
};

struct EngineConfig {
  ScheduleSpec schedule;
  int iterations = 20;
  double pca_threshold = 0.99;
  bool use_pca = true;
  KdeTuning kde;
  bool adapt = true;
  bool pair_splits = false;
  double max_failure_fraction = 0.2;
  int threads = 1;
  std::uint64_t seed = 1;
  std::function<void(const std::string&)> log;
};

struct IterationRecord {
  int iteration = 0;
  int n = 0;
  int anchors = 0;        // anchors used while sampling
  int anchors_after = 0;  // after acceptance
  int m = 0;
  double explained = 1.0;      // weighted data variance kept by the reduction
  double lstar = 0.0;          // original data space, unweighted predictive sample
  double lstar_reduced = 0.0;  // incumbent's predicted value in the reduced space
  double mad_median = 0.0;
  double mad_max = 0.0;
  int accepted = 0;  // 0 = incumbent
  std::vector<int> accepted_splits;
  int candidates = 0;
  int failed = 0;
  double ess = 0.0;
  double bandwidth = 0.0;
  double localization = 0.0;
  double wall_seconds = 0.0;
};

struct InversionState {
  int iteration = 0;
  AnchorSet anchors;
  NormalMixture posterior;
  std::uint64_t seed = 0;
  std::vector<IterationRecord> history;
  Vector mad_baseline;
};

/// Extra per-iteration output for archives and exports.
struct IterationSummary {
  IterationRecord record;
  std::vector<double> candidate_lstar;  // reduced space; NaN for skipped candidates
  std::vector<Block> anchors_used;      // incumbent layout while sampling
  Matrix anchor_quantiles;              // anchors × 5, from the step-1 draws
  Matrix prediction_quantiles;          // n_z × 5, from this iteration's simulations
  Vector weights;                       // importance weights of the kept samples
};

inline const std::vector<double>& summary_probabilities() {
  static const std::vector<double> p{0.05, 0.25, 0.5, 0.75, 0.95};
  return p;
}

class InversionEngine {
 public:
  InversionEngine(Problem problem, const ForwardModel& forward, EngineConfig config)
      : problem_(std::move(problem)), forward_(&forward), config_(std::move(config)), dist_(problem_.grid) {
    if (problem_.z_obs.size() != forward.data_dim())
      throw ConfigError("engine: observation length " + std::to_string(problem_.z_obs.size()) +
                        " does not match forward model output " + std::to_string(forward.data_dim()));
    if (!problem_.linear.empty() && problem_.linear.L.cols() != problem_.grid.n_cells())
      throw ConfigError("engine: linear data operator has the wrong number of columns");
    if (problem_.err_cov &&
        (problem_.err_cov->rows() != forward.data_dim() || problem_.err_cov->cols() != forward.data_dim()))
      throw ConfigError("engine: error covariance shape does not match the data");
    if (problem_.fixed_geostat) problem_.fixed_geostat->validate();
  }

  const Problem& problem() const { return problem_; }
  const EngineConfig& config() const { return config_; }
  int theta1_dim() const { return problem_.fixed_geostat ? 0 : GeostatParams::kSize; }
  const LinearData* linear() const { return problem_.linear.empty() ? nullptr : &problem_.linear; }

  GeostatParams geostat(const Eigen::Ref<const Vector>& theta) const {
    if (problem_.fixed_geostat) return *problem_.fixed_geostat;
    return GeostatParams::from_transformed(theta.head(GeostatParams::kSize));
  }

  GaussianMoments field_moments(const GeostatParams& p) const {
    p.validate();
    return dist_.moments(p);
  }

  /// log π(θ₁) + log p(θ₂, ℓ | θ₁) up to the constant of the flat priors.
  double log_prior(const Eigen::Ref<const Vector>& theta, const AnchorSet& a) const {
    const int n1 = theta1_dim();
    const GeostatParams p = geostat(theta);
    const auto field = field_moments(p);
    const auto joint = anchor_joint_moments(a.H(), field, linear());
    const Vector v = stacked_values(theta.segment(n1, a.size()), linear());
    const double geo = n1 ? geostat_prior_logdensity(theta.head(n1), problem_.prior) : 0.0;
    return geo + log_normal_density(v, joint.mean, joint.cov);
  }

  std::vector<std::string> labels(const AnchorSet& a) const {
    std::vector<std::string> out;
    if (!problem_.fixed_geostat) out = {"beta", "log_lambda", "log_eta2", "logit_tau"};
    for (int s = 0; s < a.size(); ++s) out.push_back("anchor_" + std::to_string(s));
    return out;
  }

  InversionState init_state() const {
    InversionState st{0, initial_anchorset(problem_.grid), {}, config_.seed, {}, {}};
    const int n1 = theta1_dim();
    const int k = st.anchors.size();
    const auto& init = problem_.init;
    const int draws = init.prior_draws;
    if (draws < 2) throw ConfigError("init: need at least two prior draws");

    Matrix x(draws, n1 + k);
    parallel_for(static_cast<std::size_t>(draws), config_.threads, [&](std::size_t ui) {
      const auto i = static_cast<Eigen::Index>(ui);
      Rng rng = substream(config_.seed, "init", ui);
      GeostatParams p;
      if (problem_.fixed_geostat) {
        p = *problem_.fixed_geostat;
      } else {
        std::normal_distribution<double> nd;
        std::gamma_distribution<double> range(problem_.prior.range_shape, problem_.prior.range_scale);
        std::gamma_distribution<double> ga(problem_.prior.nugget_a, 1.0), gb(problem_.prior.nugget_b, 1.0);
        Vector t(4);
        t(0) = init.center.beta + init.beta_sd * nd(rng);
        t(1) = std::log(range(rng));
        t(2) = std::log(init.center.eta2) + init.log_eta2_sd * nd(rng);
        const double u = ga(rng), v = gb(rng);
        t(3) = std::log(u) - std::log(v);
        x.row(i).head(4) = t.transpose();
        p = GeostatParams::from_transformed(t);
      }
      const auto m = anchor_prior_moments(st.anchors, field_moments(p), linear());
      GaussianMoments gm = m;
      x.row(i).segment(n1, k) = sample_gaussian(gm, rng).transpose();
    });

    Vector mean(n1 + k);
    if (n1) mean.head(n1) = init.center.transformed();
    const GeostatParams c = problem_.fixed_geostat ? *problem_.fixed_geostat : init.center;
    mean.tail(k) = anchor_prior_moments(st.anchors, field_moments(c), linear()).mean;

    const Vector w = Vector::Constant(draws, 1.0 / draws);
    Matrix cov = weighted_cov(x, w) * (static_cast<double>(draws) / (draws - 1));
    if (!init.full_covariance) cov = Matrix(cov.diagonal().asDiagonal());
    cov *= init.inflation;
    st.posterior = NormalMixture::single(mean, cov);
    st.posterior.labels = labels(st.anchors);
    return st;
  }

  /// Importance weights are computed once per iteration and shared by every
  /// candidate anchorset; exposed so tests can check that directly.
  static const Vector& candidate_weights(const IterationSummary& s, int /*candidate*/) { return s.weights; }

  IterationSummary run_iteration(InversionState& state) const {
    const auto t_start = std::chrono::steady_clock::now();
    const int k = state.iteration + 1;
    const int n = sample_size_schedule(k, config_.schedule);
    const int n1 = theta1_dim();
    const AnchorSet& inc = state.anchors;
    const int k_inc = inc.size();
    const LinearData* lin = linear();
    const int n_lin = lin ? lin->size() : 0;

    // Umbrella anchorset and candidates.
    Umbrella umb{inc, {}};
    if (config_.adapt) {
      umb = umbrella_anchorset(inc, enumerate_split_candidates(inc), config_.pair_splits);
    } else {
      umb.candidates.push_back({{}, inc, Matrix::Identity(k_inc, k_inc)});
    }
    const AnchorSet& ua = umb.anchorset;
    const int k_star = ua.size();
    const auto n_cand = umb.candidates.size();
    std::vector<char> usable(n_cand, 1);
    for (std::size_t c = 1; c < n_cand; ++c) {
      const Matrix a = stacked_constraints(umb.candidates[c].anchorset.H(), lin);
      if (a.rows() > a.cols() || numeric_rank(a) < a.rows()) usable[c] = 0;
    }
    const Matrix a_star = stacked_constraints(ua.H(), lin);
    if (a_star.rows() > a_star.cols() || numeric_rank(a_star) < a_star.rows()) {
      // Fall back to the incumbent alone when the umbrella cannot be honoured.
      umb = Umbrella{inc, {{{}, inc, Matrix::Identity(k_inc, k_inc)}}};
      usable.assign(1, 1);
    }
    const AnchorSet& uset = umb.anchorset;
    const int ks = uset.size();
    (void)k_star;

    // Step 1: draw from f⁽ᵏ⁻¹⁾.
    MixtureEvaluator prev(state.posterior);
    Rng draw_rng = substream(state.seed, "proposal", static_cast<std::uint64_t>(k));
    const Matrix theta = prev.sample(n, draw_rng);
    const Vector log_prop = prev.logdensity_rows(theta);

    // Step 2: conditional fields and forward runs.
    const Eigen::Index nz = forward_->data_dim();
    std::vector<char> ok(static_cast<std::size_t>(n), 0);
    Vector log_prior = Vector::Constant(n, -std::numeric_limits<double>::infinity());
    Matrix z(n, nz), theta_star(n, ks);
    std::vector<GaussianMoments> joint_star(static_cast<std::size_t>(n));
    const Matrix p0 = blockdiag(umb.candidates[0].restriction, n_lin);

    parallel_for(static_cast<std::size_t>(n), config_.threads, [&](std::size_t ui) {
      const auto i = static_cast<Eigen::Index>(ui);
      Rng rng = substream(state.seed, "sample", static_cast<std::uint64_t>(k), ui);
      try {
        const Vector th = theta.row(i).transpose();
        const GeostatParams p = geostat(th);
        const auto field = field_moments(p);
        GaussianMoments js = anchor_joint_moments(uset.H(), field, lin);
        const Vector v = stacked_values(th.segment(n1, k_inc), lin);
        Matrix c0 = p0 * js.cov * p0.transpose();
        symmetrize(c0);
        const double geo = n1 ? geostat_prior_logdensity(th.head(n1), problem_.prior) : 0.0;
        const double lp = geo + log_normal_density(v, p0 * js.mean, c0);
        if (!std::isfinite(lp)) return;
        LinearConditioner cond(field, stacked_constraints(inc.H(), lin));
        const Vector y = cond.simulate(v, rng);
        const Vector zi = forward_->evaluate(y);
        if (zi.size() != nz || !zi.allFinite()) return;
        z.row(i) = zi.transpose();
        theta_star.row(i) = (uset.H() * y).transpose();
        joint_star[ui] = std::move(js);
        log_prior(i) = lp;
        ok[ui] = 1;
      } catch (const ForwardFailure&) {
      } catch (const NumericalError&) {
      } catch (const InvalidParameter&) {
      } catch (const InvalidConstraint&) {
      }
    });

    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < n; ++i)
      if (ok[static_cast<std::size_t>(i)]) keep.push_back(i);
    const int failed = n - static_cast<int>(keep.size());
    if (failed > config_.max_failure_fraction * n)
      throw SolverFailureRate("iteration " + std::to_string(k) + ": " + std::to_string(failed) + " of " +
                              std::to_string(n) + " simulations failed");
    const auto nk = static_cast<Eigen::Index>(keep.size());
    auto take = [&](const Matrix& m) {
      Matrix out(nk, m.cols());
      for (Eigen::Index r = 0; r < nk; ++r) out.row(r) = m.row(keep[static_cast<std::size_t>(r)]);
      return out;
    };
    auto take_v = [&](const Vector& v) {
      Vector out(nk);
      for (Eigen::Index r = 0; r < nk; ++r) out(r) = v(keep[static_cast<std::size_t>(r)]);
      return out;
    };
    const Matrix th_k = take(theta), z_k = take(z), ts_k = take(theta_star);
    const Vector lp_k = take_v(log_prior), lq_k = take_v(log_prop);
    const Vector w = importance_weights(lp_k, lq_k);

    // Step 3: reduce the data.
    PcaOutput pca;
    if (config_.use_pca) {
      pca = pca_reduce(z_k, w, config_.pca_threshold, problem_.z_obs);
    } else {
      pca.reduction.center = Vector::Zero(nz);
      pca.reduction.loadings = Matrix::Identity(nz, nz);
      pca.reduced = z_k;
      pca.reduced_obs = problem_.z_obs;
    }
    const Eigen::Index m = pca.reduced.cols();
    std::optional<Matrix> err;
    if (problem_.err_cov) err = pca.reduction.loadings.transpose() * (*problem_.err_cov) * pca.reduction.loadings;

    // Steps 4-5 on the umbrella.
    auto joint_points = [&](const Matrix& anchors_part) {
      Matrix x(nk, n1 + anchors_part.cols() + m);
      if (n1) x.leftCols(n1) = th_k.leftCols(n1);
      x.middleCols(n1, anchors_part.cols()) = anchors_part;
      x.rightCols(m) = pca.reduced;
      return x;
    };
    auto dims = [](int from, int count) {
      std::vector<int> d(static_cast<std::size_t>(count));
      for (int i = 0; i < count; ++i) d[static_cast<std::size_t>(i)] = from + i;
      return d;
    };
    const int mi = static_cast<int>(m);
    const WeightedSample umb_sample{joint_points(ts_k), w};
    const KdeResult kde = kde_fit(umb_sample, config_.kde, config_.threads);
    const NormalMixture f_star = mixture_condition(kde.mixture, pca.reduced_obs, dims(0, n1 + ks),
                                                   dims(n1 + ks, mi), err ? &*err : nullptr, config_.threads);

    // Step 6: predicted L* for every candidate.
    std::vector<double> cand_lstar(n_cand, std::numeric_limits<double>::quiet_NaN());
    std::vector<NormalMixture> cand_post(n_cand);
    std::size_t best = 0;
    for (std::size_t c = 0; c < n_cand; ++c) {
      if (!usable[c]) continue;
      const Matrix& b = umb.candidates[c].restriction;
      const Matrix pc = blockdiag_left(n1, b);
      cand_post[c] = mixture_linear_map(f_star, pc);
      const Matrix tc = ts_k * b.transpose();
      Matrix xc(nk, n1 + b.rows());
      if (n1) xc.leftCols(n1) = th_k.leftCols(n1);
      xc.rightCols(b.rows()) = tc;
      try {
        MixtureEvaluator ev(cand_post[c]);
        const Vector lf = ev.logdensity_rows(xc);
        Vector lpc = lp_k;
        if (c != 0) {
          const Matrix pcl = blockdiag(b, n_lin);
          for (Eigen::Index r = 0; r < nk; ++r) {
            const auto& js = joint_star[static_cast<std::size_t>(keep[static_cast<std::size_t>(r)])];
            Matrix cc = pcl * js.cov * pcl.transpose();
            symmetrize(cc);
            const Vector v = stacked_values(tc.row(r).transpose(), lin);
            const double geo = n1 ? geostat_prior_logdensity(th_k.row(r).head(n1).transpose(), problem_.prior) : 0.0;
            lpc(r) = geo + log_normal_density(v, pcl * js.mean, cc);
          }
        }
        cand_lstar[c] = predict_lstar(pca.reduced, lf, lpc, lq_k, lp_k, pca.reduced_obs);
      } catch (const Error& e) {
        note("iteration " + std::to_string(k) + ": candidate " + std::to_string(c) + " skipped: " + e.what());
        continue;
      }
      if (c != 0 && std::isfinite(cand_lstar[c]) &&
          (!std::isfinite(cand_lstar[best]) || cand_lstar[c] > cand_lstar[best]))
        best = c;
    }

    // Refit for the accepted anchorset with the umbrella's tuning.
    const auto& chosen = umb.candidates[best];
    NormalMixture post;
    if (n_cand == 1 && chosen.restriction.rows() == chosen.restriction.cols() &&
        chosen.restriction.isIdentity()) {
      post = f_star;
    } else {
      const WeightedSample s{joint_points(ts_k * chosen.restriction.transpose()), w};
      const NormalMixture refit = kde_build(s, kde.bandwidth, kde.localization, config_.kde.min_ess,
                                                config_.threads, config_.kde.weighted_local);
      const int kc = chosen.anchorset.size();
      post = mixture_condition(refit, pca.reduced_obs, dims(0, n1 + kc), dims(n1 + kc, mi), err ? &*err : nullptr,
                               config_.threads);
    }
    post.labels = labels(chosen.anchorset);

    // Diagnostics.
    IterationSummary out;
    IterationRecord& rec = out.record;
    rec.iteration = k;
    rec.n = n;
    rec.anchors = k_inc;
    rec.anchors_after = chosen.anchorset.size();
    rec.m = mi;
    rec.explained = pca.reduction.explained;
    int floored = 0;
    rec.lstar = integrated_log_likelihood(z_k, Vector::Ones(nk), problem_.z_obs, &floored);
    if (floored) note("iteration " + std::to_string(k) + ": " + std::to_string(floored) + " data variances floored");
    rec.lstar_reduced = cand_lstar[0];
    if (state.mad_baseline.size() == 0) state.mad_baseline = median_abs_difference(z_k, problem_.z_obs);
    const MadRatios mad = mad_ratio(z_k, state.mad_baseline, problem_.z_obs);
    if (mad.excluded) note("iteration " + std::to_string(k) + ": " + std::to_string(mad.excluded) +
                           " data dimensions with zero baseline mad excluded");
    rec.mad_median = mad.median;
    rec.mad_max = mad.max;
    rec.accepted = static_cast<int>(best);
    rec.accepted_splits = chosen.split_parents;
    rec.candidates = static_cast<int>(n_cand) - 1;
    rec.failed = failed;
    rec.ess = 1.0 / w.squaredNorm();
    rec.bandwidth = kde.bandwidth;
    rec.localization = kde.localization;

    out.candidate_lstar = cand_lstar;
    out.weights = w;
    out.prediction_quantiles = column_quantiles(z_k);
    out.anchors_used = inc.blocks();
    out.anchor_quantiles = column_quantiles(theta.rightCols(k_inc));

    state.anchors = chosen.anchorset;
    state.posterior = std::move(post);
    state.iteration = k;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    state.history.push_back(rec);
    return out;
  }

  /// Composition sampling: θ from f⁽ᵏ⁾, then y | θ honouring anchors and
  /// linear data. Draws whose field cannot be built are replaced.
  std::vector<Vector> posterior_field_ensemble(const InversionState& state, int n_fields, std::uint64_t seed) const {
    MixtureEvaluator ev(state.posterior);
    const int n1 = theta1_dim();
    std::vector<Vector> out(static_cast<std::size_t>(n_fields));
    parallel_for(static_cast<std::size_t>(n_fields), config_.threads, [&](std::size_t i) {
      for (std::uint64_t attempt = 0;; ++attempt) {
        if (attempt >= 1000) throw NumericalError("ensemble: could not draw a valid field");
        Rng rng = substream(seed, "ensemble", i, attempt);
        const Vector th = ev.sample(1, rng).row(0).transpose();
        try {
          const auto field = field_moments(geostat(th));
          out[i] = sample_field_given_anchors(state.anchors, th.segment(n1, state.anchors.size()), field, linear(),
                                              rng);
          return;
        } catch (const NumericalError&) {
        } catch (const InvalidParameter&) {
        } catch (const InvalidConstraint&) {
        }
      }
    });
    return out;
  }

  /// Run until `config.iterations` are complete, calling `after` per iteration.
  void run(InversionState& state, const std::function<void(const InversionState&, const IterationSummary&)>& after =
                                      {}) const {
    while (state.iteration < config_.iterations) {
      auto s = run_iteration(state);
      if (after) after(state, s);
    }
  }

 private:
  void note(const std::string& msg) const {
    if (config_.log) config_.log(msg);
  }

  static Matrix blockdiag(const Matrix& b, int identity) {
    Matrix out = Matrix::Zero(b.rows() + identity, b.cols() + identity);
    out.topLeftCorner(b.rows(), b.cols()) = b;
    out.bottomRightCorner(identity, identity).setIdentity();
    return out;
  }

  static Matrix blockdiag_left(int identity, const Matrix& b) {
    Matrix out = Matrix::Zero(identity + b.rows(), identity + b.cols());
    out.topLeftCorner(identity, identity).setIdentity();
    out.bottomRightCorner(b.rows(), b.cols()) = b;
    return out;
  }

  static Matrix column_quantiles(const Matrix& x) {
    const auto& ps = summary_probabilities();
    Matrix q(x.cols(), static_cast<Eigen::Index>(ps.size()));
    std::vector<double> col(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      for (Eigen::Index i = 0; i < x.rows(); ++i) col[static_cast<std::size_t>(i)] = x(i, j);
      std::sort(col.begin(), col.end());
      for (std::size_t p = 0; p < ps.size(); ++p)
        q(j, static_cast<Eigen::Index>(p)) = quantile_sorted(col, ps[p]);
    }
    return q;
  }

  Problem problem_;
  const ForwardModel* forward_;
  EngineConfig config_;
  DistanceTable dist_;
};

}  // namespace anchored
