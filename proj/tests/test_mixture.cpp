#include <gtest/gtest.h>

#include <cmath>

#include "anchored/mixture.hpp"
#include "oracles.hpp"

using namespace anchored;
using anchored::oracles::simpson;

namespace {

NormalMixture two_component() {
  NormalMixture m;
  m.weights = Vector(2);
  m.weights << 0.35, 0.65;
  m.means = Matrix(2, 2);
  m.means << -1.0, 0.5, 1.5, -0.4;
  Matrix a(2, 2), b(2, 2);
  a << 0.8, 0.3, 0.3, 0.5;
  b << 0.4, -0.15, -0.15, 0.9;
  m.covs = {a, b};
  return m;
}

double bivariate(const NormalMixture& m, double x, double z) {
  Vector p(2);
  p << x, z;
  return std::exp(mixture_logdensity(m, p));
}

}  // namespace

TEST(MixtureCondition, MatchesQuadrature) {
  const NormalMixture m = two_component();
  const double z_obs = 0.3;
  Vector zo(1);
  zo << z_obs;
  const NormalMixture c = mixture_condition(m, zo, {0}, {1});
  const double norm = simpson([&](double x) { return bivariate(m, x, z_obs); }, -12.0, 12.0, 20000);
  for (int i = 0; i < 50; ++i) {
    const double x = -3.0 + 6.0 * i / 49.0;
    Vector p(1);
    p << x;
    const double got = std::exp(mixture_logdensity(c, p));
    EXPECT_NEAR(got, bivariate(m, x, z_obs) / norm, 1e-6) << "x = " << x;
  }
}

TEST(MixtureCondition, ErrorCovarianceInflatesDataBlock) {
  const NormalMixture m = two_component();
  Matrix err(1, 1);
  err << 0.25;
  NormalMixture inflated = m;
  for (auto& v : inflated.covs) v(1, 1) += 0.25;
  Vector zo(1);
  zo << -0.2;
  const auto a = mixture_condition(m, zo, {0}, {1}, &err);
  const auto b = mixture_condition(inflated, zo, {0}, {1});
  EXPECT_LE((a.weights - b.weights).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((a.means - b.means).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MixtureMap, CoordinateRowGivesMarginal) {
  const NormalMixture m = two_component();
  Matrix b = Matrix::Zero(1, 2);
  b(0, 1) = 1.0;
  const NormalMixture marg = mixture_linear_map(m, b);
  for (double z : {-2.0, -0.5, 0.0, 0.7, 2.2}) {
    const double want = simpson([&](double x) { return bivariate(m, x, z); }, -12.0, 12.0, 20000);
    Vector p(1);
    p << z;
    EXPECT_NEAR(std::exp(mixture_logdensity(marg, p)), want, 1e-8);
  }
  EXPECT_THROW(mixture_linear_map(m, Matrix::Zero(1, 3)), InvalidArgument);
}

TEST(MixtureDensity, IntegratesToOne) {
  NormalMixture m;
  m.weights = Vector(3);
  m.weights << 0.2, 0.5, 0.3;
  m.means = Matrix(3, 1);
  m.means << -2.0, 0.0, 3.0;
  m.covs = {Matrix::Constant(1, 1, 0.3), Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.05)};
  const double total = simpson(
      [&](double x) {
        Vector p(1);
        p << x;
        return std::exp(mixture_logdensity(m, p));
      },
      -15.0, 15.0, 30000);
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(MixtureSample, MomentsMatch) {
  const NormalMixture m = two_component();
  Rng rng = substream(2, "mix-sample");
  const Matrix x = mixture_sample(m, 40000, rng);
  const auto [mean, cov] = mixture_moments(m);
  const Vector emp = x.colwise().mean();
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(emp(j), mean(j), 4.0 * std::sqrt(cov(j, j) / 40000));
}

TEST(Kde, FullLocalizationUsesGlobalCovariance) {
  Rng rng = substream(8, "kde-global");
  const int n = 60;
  WeightedSample s{Matrix(n, 3), Vector(n)};
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int i = 0; i < n; ++i) {
    s.points.row(i) = standard_normal(3, rng).transpose();
    s.points(i, 1) += 0.5 * s.points(i, 0);
    s.weights(i) = u(rng);
  }
  s.weights /= s.weights.sum();
  const Vector mu = (s.points.transpose() * s.weights);
  Matrix c = Matrix::Zero(3, 3);
  for (int i = 0; i < n; ++i) {
    const Vector d = s.points.row(i).transpose() - mu;
    c += s.weights(i) * d * d.transpose();
  }
  const double h = 0.7;
  const NormalMixture m = kde_build(s, h, 1.0);
  for (const auto& v : m.covs) EXPECT_LE((v - h * h * c).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(m.means, s.points);
  EXPECT_EQ(m.weights, s.weights);
}

TEST(Kde, EqualWeightsMatchDirectKde) {
  Rng rng = substream(12, "kde-direct");
  const int n = 40;
  WeightedSample s{Matrix(n, 2), Vector::Constant(n, 1.0 / n)};
  for (int i = 0; i < n; ++i) s.points.row(i) = standard_normal(2, rng).transpose();
  const double h = 0.5;
  const NormalMixture m = kde_build(s, h, 1.0);
  const Vector mu = s.points.colwise().mean();
  const Matrix d = s.points.rowwise() - mu.transpose();
  const Matrix c = d.transpose() * d / n;
  const Matrix kc = h * h * c;
  const double det = kc.determinant();
  const Matrix inv = kc.inverse();
  for (int t = 0; t < 10; ++t) {
    const Vector x = standard_normal(2, rng);
    double direct = 0.0;
    for (int i = 0; i < n; ++i) {
      const Vector r = x - s.points.row(i).transpose();
      direct += std::exp(-0.5 * r.dot(inv * r)) / (2 * M_PI * std::sqrt(det)) / n;
    }
    EXPECT_NEAR(std::exp(mixture_logdensity(m, x)), direct, 1e-12 * std::max(1.0, direct));
  }
}

TEST(Kde, LeaveOneOutScoreByBruteForce) {
  Rng rng = substream(13, "kde-loo");
  const int n = 25;
  WeightedSample s{Matrix(n, 2), Vector(n)};
  std::uniform_real_distribution<double> u(0.2, 1.0);
  for (int i = 0; i < n; ++i) {
    s.points.row(i) = standard_normal(2, rng).transpose();
    s.weights(i) = u(rng);
  }
  s.weights /= s.weights.sum();
  KdeTuning tune;
  tune.bandwidths = {0.3, 0.6};
  tune.localizations = {0.5, 1.0};
  tune.min_ess = 0.0;
  const KdeResult fit = kde_fit(s, tune);
  for (int a = 0; a < 2; ++a) {
    for (int hb = 0; hb < 2; ++hb) {
      const NormalMixture m = kde_build(s, tune.bandwidths[hb], tune.localizations[a]);
      double score = 0.0;
      for (int i = 0; i < n; ++i) {
        double dens = 0.0;
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          const Vector x = s.points.row(i).transpose();
          dens += s.weights(j) / (1.0 - s.weights(i)) *
                  std::exp(log_normal_density(x, m.means.row(j).transpose(), m.covs[j]));
        }
        score += s.weights(i) * std::log(dens);
      }
      EXPECT_NEAR(fit.scores(hb, a), score, 1e-9);
      EXPECT_GE(fit.score, fit.scores(hb, a));
    }
  }
}

TEST(Kde, RecoversGaussianMoments) {
  Matrix l(2, 2);
  l << 1.0, 0.0, 0.6, 0.8;
  const Vector mu = Vector::LinSpaced(2, 1.0, -2.0);
  const Matrix truth = l * l.transpose();
  Rng rng = substream(14, "kde-gauss");
  const int n = 5000;
  WeightedSample s{Matrix(n, 2), Vector::Constant(n, 1.0 / n)};
  for (int i = 0; i < n; ++i) s.points.row(i) = (mu + l * standard_normal(2, rng)).transpose();
  const KdeResult fit = kde_fit(s);
  const auto [mean, cov] = mixture_moments(fit.mixture);
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(mean(j), mu(j), 0.05 * std::sqrt(truth(j, j)));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(cov(i, j), truth(i, j), 0.05 * std::sqrt(truth(i, i) * truth(j, j)));
  EXPECT_EQ(fit.score, fit.scores.maxCoeff());
}

TEST(Kde, DegenerateInputs) {
  WeightedSample s{Matrix::Random(10, 2), Vector::Zero(10)};
  s.weights(3) = 1.0;
  EXPECT_THROW(kde_fit(s), DegenerateSample);
  WeightedSample few{Matrix::Random(3, 2), Vector::Constant(3, 1.0 / 3)};
  EXPECT_THROW(kde_fit(few), DegenerateSample);
  WeightedSample low{Matrix::Random(50, 2), Vector::Constant(50, 1.0 / 50)};
  KdeTuning t;
  t.min_ess = 60;
  EXPECT_THROW(kde_fit(low, t), DegenerateSample);
}
