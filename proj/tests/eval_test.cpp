#include <gtest/gtest.h>

#include <random>

#include "support/oracles.hpp"
#include "uplvp/eval.hpp"
#include "uplvp/fixtures.hpp"

using namespace uplvp;

namespace {

std::vector<Detection> random_dets(std::mt19937_64& rng, std::size_t n, const std::vector<BBox>& near) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < n; ++i) {
    BBox b = oracle::random_box(rng, 16);
    if (!near.empty() && u(rng) < 0.6) b = near[rng() % near.size()];
    dets.push_back({b, u(rng), i});  // continuous, so no score ties
  }
  return dets;
}

}  // namespace

TEST(BoxIou, Examples) {
  EXPECT_DOUBLE_EQ(box_iou(BBox{0, 0, 1, 1}, BBox{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(box_iou(BBox{0, 0, 1, 1}, BBox{5, 5, 6, 6}), 0.0);
  EXPECT_DOUBLE_EQ(box_iou(BBox{0, 0, 1, 3}, BBox{0, 2, 1, 5}), 4.0 / 12.0);
}

TEST(AveragePrecision, PerfectDetectionsScoreOne) {
  const std::vector<BBox> gts{{0, 0, 3, 3}, {6, 6, 9, 9}};
  const std::vector<Detection> dets{{gts[0], 0.9, 0}, {gts[1], 0.8, 1}};
  const auto rep = evaluate_ap({{dets, gts}});
  for (double ap : rep.ap) EXPECT_DOUBLE_EQ(ap, 1.0);
  EXPECT_DOUBLE_EQ(rep.map, 1.0);
  EXPECT_EQ(rep.thresholds.size(), 10u);
  EXPECT_DOUBLE_EQ(average_precision(dets, gts, 0.5, ApInterpolation::kPoint101), 1.0);
}

TEST(AveragePrecision, EmptyCases) {
  EXPECT_EQ(average_precision({}, {}, 0.5), 1.0);
  EXPECT_EQ(average_precision({{BBox{0, 0, 1, 1}, 0.5, 0}}, {}, 0.5), 0.0);
  EXPECT_EQ(average_precision({}, {BBox{0, 0, 1, 1}}, 0.5), 0.0);
}

TEST(AveragePrecision, HandExample) {
  // TP, FP, TP over two gts: precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1.
  const std::vector<BBox> gts{{0, 0, 3, 3}, {6, 6, 9, 9}};
  const std::vector<Detection> dets{{gts[0], 0.9, 0}, {BBox{12, 12, 13, 13}, 0.8, 1}, {gts[1], 0.7, 2}};
  EXPECT_NEAR(average_precision(dets, gts, 0.5), 0.5 * 1.0 + 0.5 * (2.0 / 3.0), 1e-12);
}

TEST(AveragePrecision, MatchesThresholdSweepOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<BBox> gts;
    for (std::size_t g = 0, n = rng() % 4; g < n; ++g) gts.push_back(oracle::random_box(rng, 16));
    const auto dets = random_dets(rng, rng() % 6, gts);
    for (double thr : {0.5, 0.75}) EXPECT_NEAR(average_precision(dets, gts, thr), oracle::sweep_ap(dets, gts, thr), 1e-12);
  }
}

TEST(AveragePrecision, MonotoneScoreRescalingIsInvariant) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<BBox> gts{oracle::random_box(rng, 16), oracle::random_box(rng, 16)};
    auto dets = random_dets(rng, 5, gts);
    const double before = average_precision(dets, gts, 0.5);
    for (auto& d : dets) d.score = 0.1 + 0.5 * d.score * d.score;
    EXPECT_NEAR(average_precision(dets, gts, 0.5), before, 1e-12);
  }
}

TEST(AveragePrecision, TurningADetectionIntoAMissNeverHelps) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<BBox> gts{oracle::random_box(rng, 16), oracle::random_box(rng, 16)};
    const auto dets = random_dets(rng, 5, gts);
    const double before = average_precision(dets, gts, 0.5);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      auto worse = dets;
      worse[i].bbox = BBox{40, 40, 41, 41};
      EXPECT_LE(average_precision(worse, gts, 0.5), before + 1e-12);
    }
  }
}

TEST(AveragePrecision, Point101) {
  const std::vector<BBox> gts{{0, 0, 3, 3}, {6, 6, 9, 9}};
  const std::vector<Detection> dets{{gts[0], 0.9, 0}};
  // Recall tops out at 0.5: points 0.00..0.50 see precision 1.
  EXPECT_NEAR(average_precision(dets, gts, 0.5, ApInterpolation::kPoint101), 51.0 / 101.0, 1e-12);
  EXPECT_NEAR(average_precision(dets, gts, 0.5), 0.5, 1e-12);
}

TEST(Detections, FromProposalsMapScoreIntoUnitRange) {
  const auto fx = make_reference_fixture();
  const auto props = propose(fx.scenes[0], fx.bank, {});
  const auto dets = detections_from_proposals(props, NormMode::kL2);
  ASSERT_EQ(dets.size(), props.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    EXPECT_EQ(dets[i].bbox, props[i].bbox);
    EXPECT_NEAR(dets[i].score, (props[i].score + 1) / 2, 1e-12);
  }
}

TEST(Atlas, ShapeRangeAndAveraging) {
  const auto fx = make_reference_fixture();
  HeadConfig hc;
  hc.kernels = 4;
  hc.stages = 1;
  const auto params = init_head<float>(hc, 2);
  const Tensor& f0 = fx.scenes[0].fpn_features;
  const auto one = activation_atlas(params, {&f0}, 1);
  const auto twice = activation_atlas(params, {&f0, &f0}, 1);
  ASSERT_EQ(one.maps.size(), 4u);
  EXPECT_EQ(one.maps[0].shape(), (Shape{200, 200}));
  EXPECT_EQ(twice.image_count, 2u);
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t i = 0; i < one.maps[k].size(); ++i) {
      ASSERT_GE(one.maps[k][i], 0.0f);
      ASSERT_LE(one.maps[k][i], 1.0f);
      ASSERT_NEAR(one.maps[k][i], twice.maps[k][i], 1e-6);
    }
  }
  EXPECT_THROW(activation_atlas(params, {}, 1), ContractError);
}

TEST(Diversity, MatchesPairwiseOracle) {
  ActivationAtlas atlas;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(0, 1);
  for (int k = 0; k < 4; ++k) {
    Tensor m(Shape{20, 20});
    for (float& v : m.data()) v = u(rng);
    atlas.maps.push_back(m);
  }
  const auto rep = diversity_report(atlas);
  double total = 0;
  for (int a = 0; a < 4; ++a) {
    for (int b = a + 1; b < 4; ++b) {
      // Each region holds the 40 largest of 400 distinct values.
      auto top = [&](const Tensor& m) {
        std::vector<float> s(m.data().begin(), m.data().end());
        std::sort(s.begin(), s.end());
        std::vector<char> r(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) r[i] = m[i] > s[359];
        return r;
      };
      const auto ra = top(atlas.maps[a]), rb = top(atlas.maps[b]);
      double inter = 0, uni = 0;
      for (std::size_t i = 0; i < ra.size(); ++i) {
        inter += ra[i] && rb[i];
        uni += ra[i] || rb[i];
      }
      total += inter / uni;
    }
  }
  EXPECT_NEAR(rep.mean_pairwise_iou, total / 6, 1e-12);
  EXPECT_EQ(rep.centroids.size(), 4u);
}

TEST(Diversity, ConstantMapFallsBackToWholeImage) {
  const Tensor flat(Shape{4, 4}, 0.3f);
  const auto r = top_region(flat);
  EXPECT_EQ(std::count(r.begin(), r.end(), 1), 16);
  ActivationAtlas same;
  same.maps = {flat, flat};
  EXPECT_DOUBLE_EQ(diversity_report(same).mean_pairwise_iou, 1.0);
  ActivationAtlas single;
  single.maps = {flat};
  EXPECT_THROW(diversity_report(single), ContractError);
}
