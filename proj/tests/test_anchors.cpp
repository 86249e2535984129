#include <gtest/gtest.h>

#include "anchored/anchors.hpp"

using namespace anchored;

TEST(Anchors, PairwiseMeansOnFourCells) {
  const Grid g = Grid::line(4);
  const AnchorSet a(g, {Block{{0, 0}, {2, 1}}, Block{{2, 0}, {4, 1}}});
  Rng rng = substream(3, "anchors-sum");
  for (int t = 0; t < 20; ++t) {
    const Vector y = standard_normal(4, rng);
    const Vector th = apply_anchors(a, y);
    EXPECT_NEAR(th(0), 0.5 * (y(0) + y(1)), 1e-15);
    EXPECT_NEAR(th(1), 0.5 * (y(2) + y(3)), 1e-15);
    EXPECT_LE((a.H() * y - th).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Anchors, InitialLayouts) {
  const auto a1 = initial_anchorset(Grid::line(7));
  ASSERT_EQ(a1.size(), 2);
  EXPECT_EQ(a1.blocks()[0].size(), 4);
  EXPECT_EQ(a1.blocks()[1].size(), 3);
  const auto a2 = initial_anchorset(Grid::plane(30, 20));
  ASSERT_EQ(a2.size(), 4);
  for (const auto& b : a2.blocks()) EXPECT_EQ(b.size(), 150);
}

TEST(Anchors, MedianSplitRule) {
  const Block b{{2, 0}, {7, 4}};  // 5 × 4
  const auto s = median_split(b, 2);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->axis, 0);
  EXPECT_EQ(s->cut, 5);  // lower child gets 3 of 5
  const Block tall{{0, 0}, {3, 6}};
  EXPECT_EQ(median_split(tall, 2)->axis, 1);
  const Block square{{0, 0}, {4, 4}};
  EXPECT_EQ(median_split(square, 2)->axis, 0);
  EXPECT_FALSE(median_split(Block{{3, 0}, {4, 1}}, 1));
}

TEST(Anchors, SplitAndReplay) {
  const Grid g = Grid::plane(8, 6);
  AnchorSet a = initial_anchorset(g);
  a = a.split(1, 0, 6);
  a = a.split(0, 1, 1);
  EXPECT_EQ(a.size(), 6);
  EXPECT_EQ(a.history().size(), 2u);
  const AnchorSet b = initial_anchorset(g).replay(a.history());
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.support_spec(2), "x4-5;y0-2");
  EXPECT_THROW(a.split(0, 0, 0), InvalidArgument);
  EXPECT_THROW(a.split(9, 0, 1), InvalidArgument);
}

TEST(Anchors, InvalidLayouts) {
  const Grid g = Grid::line(6);
  EXPECT_THROW(AnchorSet(g, {Block{{0, 0}, {4, 1}}, Block{{3, 0}, {6, 1}}}), InvalidAnchorset);
  EXPECT_THROW(AnchorSet(g, {Block{{0, 0}, {3, 1}}}), InvalidAnchorset);
  EXPECT_THROW(AnchorSet(g, {Block{{0, 0}, {3, 1}}, Block{{3, 0}, {7, 1}}}), InvalidAnchorset);
}

TEST(Umbrella, RestrictionsRecoverCandidates) {
  const Grid g = Grid::plane(9, 7);
  AnchorSet a = initial_anchorset(g).split(2, 0, 2);
  const auto cands = enumerate_split_candidates(a);
  EXPECT_EQ(static_cast<int>(cands.size()), a.size());
  const Umbrella u = umbrella_anchorset(a, cands, true);
  EXPECT_EQ(u.anchorset.size(), 2 * a.size());
  const std::size_t n_single = cands.size(), n_pair = n_single * (n_single - 1) / 2;
  ASSERT_EQ(u.candidates.size(), 1 + n_single + n_pair);
  EXPECT_TRUE(u.candidates[0].anchorset == a);
  Rng rng = substream(9, "umbrella");
  for (int t = 0; t < 100; ++t) {
    const Vector y = standard_normal(g.n_cells(), rng);
    const Vector star = apply_anchors(u.anchorset, y);
    for (const auto& c : u.candidates) {
      const Vector direct = apply_anchors(c.anchorset, y);
      ASSERT_LE((c.restriction * star - direct).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(LinearDatum, ShiftsAnchorTowardObservation) {
  const Grid g = Grid::line(10);
  const AnchorSet a = initial_anchorset(g);
  const GaussianMoments field = DistanceTable(g).moments({0.0, 4.0, 1.0, 0.0});
  Vector ell(1);
  ell << 2.0;
  const LinearData lin = LinearData::point_values(g, {2}, ell);
  const auto prior = anchor_prior_moments(a, field);
  const auto cond = anchor_prior_moments(a, field, &lin);
  EXPECT_GT(cond.mean(0), prior.mean(0) + 0.5);
  EXPECT_LT(cond.cov(0, 0), prior.cov(0, 0));

  // Same numbers from generic conditioning of the joint (θ, ℓ).
  const auto joint = anchor_joint_moments(a.H(), field, &lin);
  Matrix pick = Matrix::Zero(1, 3);
  pick(0, 2) = 1.0;
  const auto oracle = condition_gaussian(joint, pick, ell);
  EXPECT_LE((oracle.mean.head(2) - cond.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((oracle.cov.topLeftCorner(2, 2) - cond.cov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LinearDatum, FieldHonoursAnchorsAndData) {
  const Grid g = Grid::line(12);
  const AnchorSet a = initial_anchorset(g).split(0, 0, 3);
  const GaussianMoments field = DistanceTable(g).moments({1.0, 3.0, 0.5, 0.1});
  Vector ell(2);
  ell << 0.3, 1.7;
  const LinearData lin = LinearData::point_values(g, {1, 9}, ell);
  Vector th(3);
  th << 0.2, 0.9, 1.4;
  Rng rng = substream(4, "field-given");
  const Vector y = sample_field_given_anchors(a, th, field, &lin, rng);
  EXPECT_LE((apply_anchors(a, y) - th).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(y(1), 0.3, 1e-8);
  EXPECT_NEAR(y(9), 1.7, 1e-8);
}

TEST(LinearDatum, RankDeficientStackRejected) {
  const Grid g = Grid::line(4);
  const AnchorSet a(g, {Block{{0, 0}, {1, 1}}, Block{{1, 0}, {4, 1}}});
  Vector ell(1);
  ell << 0.0;
  const LinearData lin = LinearData::point_values(g, {0}, ell);
  const GaussianMoments field = DistanceTable(g).moments({0, 2, 1, 0});
  EXPECT_THROW(anchor_prior_moments(a, field, &lin), InvalidAnchorset);
}
