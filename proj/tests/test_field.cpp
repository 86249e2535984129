#include <gtest/gtest.h>

#include <cmath>

#include "anchored/field.hpp"

using namespace anchored;

TEST(Grid, CoordinatesAndValidation) {
  const Grid g = Grid::plane(4, 3, 2.0, 0.5);
  EXPECT_EQ(g.n_cells(), 12);
  const auto x = g.coord(g.index_to_cell(1, 2));
  EXPECT_DOUBLE_EQ(x[0], 3.0);
  EXPECT_DOUBLE_EQ(x[1], 1.25);
  EXPECT_THROW(Grid({1}, {1.0}), InvalidArgument);
  EXPECT_THROW(Grid({3, 3}, {1.0, -1.0}), InvalidArgument);
  EXPECT_THROW(Grid({2, 2, 2}, {1.0, 1.0, 1.0}), InvalidArgument);
}

TEST(Matern, CorrelationValues) {
  EXPECT_DOUBLE_EQ(matern15_correlation(0.0, 3.0), 1.0);
  EXPECT_NEAR(matern15_correlation(3.0, 3.0), 2.0 * std::exp(-1.0), 1e-15);
  EXPECT_THROW(matern15_correlation(1.0, 0.0), InvalidParameter);
  EXPECT_THROW(matern15_correlation(-1.0, 1.0), InvalidParameter);
}

TEST(Matern, CovarianceEntries) {
  const Grid g = Grid::line(6, 2.0);
  const GeostatParams p{0.5, 4.0, 2.0, 0.25};
  const Matrix c = build_covariance(g, p);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      const double d = 2.0 * std::abs(i - j);
      const double want = i == j ? 2.0 : 0.75 * 2.0 * (1.0 + d / 4.0) * std::exp(-d / 4.0);
      EXPECT_NEAR(c(i, j), want, 1e-14);
    }
}

TEST(Matern, CholeskyNeedsLittleJitter) {
  Rng rng = substream(7, "cov-params");
  std::uniform_real_distribution<double> lam(0.1, 50.0), eta(0.01, 10.0), tau(0.0, 0.9);
  for (int t = 0; t < 50; ++t) {
    const GeostatParams p{0.0, lam(rng), eta(rng), t % 5 == 0 ? 0.0 : tau(rng)};
    const Matrix c = build_covariance(Grid::plane(5, 4), p);
    const auto f = cholesky_with_jitter(c, p.eta2);
    EXPECT_LE(f.jitter, 1e-8 * p.eta2);
  }
}

TEST(Matern, DenseCapacity) {
  EXPECT_THROW(DistanceTable(Grid::plane(70, 70)), CapacityError);
  EXPECT_NO_THROW(DistanceTable(Grid::plane(70, 70), 5000));
}

TEST(Geostat, TransformRoundTrip) {
  const GeostatParams p{-1.5, 12.0, 0.3, 0.2};
  const auto q = GeostatParams::from_transformed(p.transformed());
  EXPECT_NEAR(q.beta, p.beta, 1e-14);
  EXPECT_NEAR(q.lambda, p.lambda, 1e-12);
  EXPECT_NEAR(q.eta2, p.eta2, 1e-14);
  EXPECT_NEAR(q.tau, p.tau, 1e-14);
  EXPECT_THROW((GeostatParams{0, 1, 1, 1.0}).validate(), InvalidParameter);
}

TEST(Geostat, PriorDensityByHand) {
  GeostatPrior pr;
  pr.range_shape = 2.5;
  pr.range_scale = 7.0;
  pr.nugget_a = 2.0;
  pr.nugget_b = 5.0;
  const double lambda = 9.0, tau = 0.15;
  Vector t(4);
  t << 0.3, std::log(lambda), std::log(2.0), std::log(tau / (1 - tau));
  const double gamma_pdf = std::pow(lambda, 1.5) * std::exp(-lambda / 7.0) / (std::tgamma(2.5) * std::pow(7.0, 2.5));
  const double beta_pdf = tau * std::pow(1 - tau, 4) * std::tgamma(7.0) / (std::tgamma(2.0) * std::tgamma(5.0));
  const double want = std::log(gamma_pdf * lambda * beta_pdf * tau * (1 - tau));
  EXPECT_NEAR(geostat_prior_logdensity(t, pr), want, 1e-12);
  // β and log η² do not enter.
  Vector t2 = t;
  t2(0) = -4.0;
  t2(2) = 3.0;
  EXPECT_DOUBLE_EQ(geostat_prior_logdensity(t2, pr), geostat_prior_logdensity(t, pr));
}

TEST(Conditioning, ExactConstraintsAndMoments) {
  const Grid g = Grid::line(10);
  const GaussianMoments m = DistanceTable(g).moments({1.0, 3.0, 1.5, 0.1});
  Matrix a = Matrix::Zero(3, 10);
  a.row(0).head(5).setConstant(0.2);
  a.row(1).tail(5).setConstant(0.2);
  a(2, 7) = 1.0;
  Vector v(3);
  v << 0.4, 1.8, 2.5;
  const auto exact = condition_gaussian(m, a, v);
  const LinearConditioner cond(m, a);
  Rng rng = substream(11, "conditioning");
  const int n = 10000;
  Matrix ys(n, 10);
  for (int i = 0; i < n; ++i) {
    const Vector y = cond.simulate(v, rng);
    ASSERT_LE((a * y - v).cwiseAbs().maxCoeff(), 1e-8);
    ys.row(i) = y.transpose();
  }
  const Vector mean = ys.colwise().mean();
  const Matrix c = ys.rowwise() - mean.transpose();
  const Matrix cov = c.transpose() * c / (n - 1);
  for (int j = 0; j < 10; ++j) {
    const double sd = std::sqrt(exact.cov(j, j));
    if (sd < 1e-6) continue;  // pinned cell
    EXPECT_NEAR(mean(j), exact.mean(j), 3.0 * sd / std::sqrt(n)) << "cell " << j;
    // SE of a sample variance ≈ σ²·sqrt(2/(n−1)).
    EXPECT_NEAR(cov(j, j), exact.cov(j, j), 3.0 * exact.cov(j, j) * std::sqrt(2.0 / (n - 1))) << "cell " << j;
  }
}

TEST(Conditioning, RegressionOracle) {
  // Conditional mean from least squares of y on A·y over joint draws.
  const Grid g = Grid::line(5);
  const GaussianMoments m = DistanceTable(g).moments({0.5, 2.0, 1.0, 0.05});
  Matrix a(2, 5);
  a << 0.5, 0.5, 0, 0, 0, 0, 0, 1.0 / 3, 1.0 / 3, 1.0 / 3;
  Vector v(2);
  v << 1.2, -0.3;
  const auto exact = condition_gaussian(m, a, v);

  const int n = 100000;
  Rng rng = substream(5, "joint-regression");
  const auto f = cholesky_with_jitter(m.cov, 1.0);
  Matrix x(n, 3), y(n, 5);
  for (int i = 0; i < n; ++i) {
    const Vector yi = m.mean + f.llt.matrixL() * standard_normal(5, rng);
    y.row(i) = yi.transpose();
    x(i, 0) = 1.0;
    x.row(i).tail(2) = (a * yi).transpose();
  }
  const Matrix xtx = x.transpose() * x;
  const Matrix coef = xtx.ldlt().solve(x.transpose() * y);
  Vector x0(3);
  x0 << 1.0, v(0), v(1);
  const Vector pred = coef.transpose() * x0;
  const double lever = x0.dot(xtx.ldlt().solve(x0));
  const Matrix resid = y - x * coef;
  for (int j = 0; j < 5; ++j) {
    const double s2 = resid.col(j).squaredNorm() / (n - 3);
    EXPECT_NEAR(pred(j), exact.mean(j), 3.0 * std::sqrt(s2 * lever) + 1e-12) << "cell " << j;
  }
}

TEST(Conditioning, RejectsBadConstraints) {
  const GaussianMoments m = DistanceTable(Grid::line(4)).moments({0, 2, 1, 0});
  Matrix dup(2, 4);
  dup << 1, 0, 0, 0, 1, 0, 0, 0;
  EXPECT_THROW(LinearConditioner(m, dup), InvalidConstraint);
  EXPECT_THROW(condition_gaussian(m, Matrix::Identity(4, 4), Vector::Zero(4)), InvalidConstraint);
  EXPECT_THROW(LinearConditioner(m, Matrix::Ones(1, 3)), InvalidArgument);
}

TEST(Sampling, ZeroCovarianceReturnsMean) {
  Rng rng = substream(1, "zero");
  GaussianMoments m{Vector::Constant(3, 2.0), Matrix::Zero(3, 3)};
  EXPECT_EQ(sample_gaussian(m, rng), m.mean);
}

TEST(Rng, SubstreamsAreReproducibleAndDistinct) {
  auto a = substream(42, "x", 3, 1), b = substream(42, "x", 3, 1), c = substream(42, "x", 3, 2),
       d = substream(42, "y", 3, 1);
  const auto va = a();
  EXPECT_EQ(va, b());
  EXPECT_NE(va, c());
  EXPECT_NE(va, d());
}
