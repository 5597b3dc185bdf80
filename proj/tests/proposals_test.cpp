#include <gtest/gtest.h>

#include <random>

#include "uplvp/encoders.hpp"
#include "uplvp/fixtures.hpp"
#include "uplvp/proposals.hpp"

using namespace uplvp;

namespace {

Tensor mask_with(std::size_t h, std::size_t w, std::initializer_list<std::pair<std::size_t, std::size_t>> on) {
  Tensor m(Shape{h, w});
  for (auto [r, c] : on) m.at(r, c) = 1.0f;
  return m;
}

void expect_well_formed(const ProposalSet& set, NormMode mode) {
  for (const auto& p : set.proposals) {
    EXPECT_EQ(p.bbox, tight_bbox(p.mask));
    std::size_t area = 0;
    for (float v : p.mask.data()) area += v != 0.0f;
    EXPECT_EQ(area, p.area);
    EXPECT_GE(p.score, mode == NormMode::kL2 ? -1.0 : 0.0);
    EXPECT_LE(p.score, 1.0);
  }
  for (std::size_t i = 1; i < set.size(); ++i) {
    const auto& a = set[i - 1];
    const auto& b = set[i];
    EXPECT_LE(std::tie(a.class_id, a.bbox.row_min, a.bbox.col_min), std::tie(b.class_id, b.bbox.row_min, b.bbox.col_min));
  }
}

}  // namespace

TEST(TightBox, Examples) {
  EXPECT_EQ(tight_bbox(mask_with(5, 5, {{1, 1}, {3, 4}})), (BBox{1, 1, 3, 4}));
  EXPECT_EQ(tight_bbox(mask_with(5, 5, {{2, 2}})), (BBox{2, 2, 2, 2}));
  EXPECT_THROW(tight_bbox(Tensor(Shape{5, 5})), EmptyMaskError);
}

TEST(ScoreMap, IdentityTextGivesOneHotScores) {
  Tensor xt(Shape{3, 3});
  for (std::size_t i = 0; i < 3; ++i) xt.at(i, i) = 1.0f;
  Tensor xi(Shape{1, 2, 3});
  xi.at(0, 0, 2) = 5.0f;  // pixel (0,0) = 5 e2, pixel (0,1) = 0
  const Tensor s = score_map(xi, xt, NormMode::kL2);
  EXPECT_FLOAT_EQ(s.at(0, 0, 2), 1.0f);
  EXPECT_FLOAT_EQ(s.at(0, 0, 0), 0.0f);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(s.at(0, 1, c), 0.0f);
}

TEST(ScoreMap, MatchesPerPixelOracle) {
  std::mt19937_64 rng(21);
  std::normal_distribution<float> n(0, 1);
  Tensor xi(Shape{4, 4, 8}), xt(Shape{8, 3});
  for (float& v : xi.data()) v = n(rng);
  for (float& v : xt.data()) v = n(rng);
  const Tensor s = score_map(xi, xt, NormMode::kL2);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t k = 0; k < 3; ++k) {
        double dot = 0, a = 0, b = 0;
        for (std::size_t d = 0; d < 8; ++d) {
          dot += double(xi.at(r, c, d)) * xt.at(d, k);
          a += double(xi.at(r, c, d)) * xi.at(r, c, d);
          b += double(xt.at(d, k)) * xt.at(d, k);
        }
        EXPECT_NEAR(s.at(r, c, k), dot / std::sqrt(a * b), 1e-5);
      }
    }
  }
}

TEST(ScoreMap, RangesPerMode) {
  std::mt19937_64 rng(22);
  std::normal_distribution<float> n(0, 3);
  Tensor xi(Shape{5, 5, 6}), xt(Shape{6, 4});
  for (float& v : xi.data()) v = n(rng);
  for (float& v : xt.data()) v = n(rng);
  const Tensor l2 = score_map(xi, xt, NormMode::kL2);
  const Tensor minmax = score_map(xi, xt, NormMode::kMinMax);
  for (float v : l2.data()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
  for (float v : minmax.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_THROW(score_map(xi, Tensor(Shape{5, 4}), NormMode::kL2), DimensionError);
}

TEST(Binarize, VacuousAndAreaFilter) {
  EXPECT_TRUE(binarize_and_split(Tensor(Shape{4, 4, 2}, 0.2f), 0.5, 1).empty());
  Tensor one(Shape{4, 4, 1});
  one.at(1, 1, 0) = 0.9f;
  EXPECT_TRUE(binarize_and_split(one, 0.5, 2).empty());
  EXPECT_EQ(binarize_and_split(one, 0.5, 1).size(), 1u);
}

TEST(Binarize, ThresholdIsStrict) {
  Tensor s(Shape{2, 2, 1}, 0.5f);
  EXPECT_TRUE(binarize_and_split(s, 0.5, 1).empty());
}

TEST(Binarize, FourConnectivitySplitsDiagonals) {
  Tensor s(Shape{3, 3, 1});
  s.at(0, 0, 0) = 1.0f;
  s.at(1, 1, 0) = 1.0f;
  const auto set = binarize_and_split(s, 0.5, 1);
  ASSERT_EQ(set.size(), 2u);
  EXPECT_EQ(set[0].bbox, (BBox{0, 0, 0, 0}));
  EXPECT_EQ(set[1].bbox, (BBox{1, 1, 1, 1}));
}

TEST(Binarize, ScoreIsMeanInComponent) {
  Tensor s(Shape{1, 3, 1});
  s.at(0, 0, 0) = 0.6f;
  s.at(0, 1, 0) = 0.8f;
  const auto set = binarize_and_split(s, 0.5, 1);
  ASSERT_EQ(set.size(), 1u);
  EXPECT_NEAR(set[0].score, 0.7, 1e-6);
  EXPECT_EQ(set[0].area, 2u);
}

TEST(Propose, TwoDisjointBoxesOfOneClass) {
  const TextBank bank = synth_text_bank(3, 8, 4);
  const Scene s = synth_scene(bank, {{BBox{1, 1, 6, 6}, 1}, {BBox{10, 12, 16, 20}, 1}}, 0.0, 3);
  const auto set = propose(s, bank, {});
  ASSERT_EQ(set.size(), 2u);
  EXPECT_EQ(set[0].mask, s.gt[0].mask);
  EXPECT_EQ(set[1].mask, s.gt[1].mask);
  EXPECT_EQ(set[0].class_id, 1u);
  EXPECT_EQ(set.scene_id, s.id);
  expect_well_formed(set, NormMode::kL2);
}

TEST(Propose, RecoversRandomLayoutsExactly) {
  const TextBank bank = synth_text_bank(4, 16, 5);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Scene s = synth_scene(bank, random_layout(LayoutSpec{}, seed), 0.0, seed);
    const auto set = propose(s, bank, {});
    ASSERT_EQ(set.size(), s.gt.size()) << seed;
    for (const auto& g : s.gt) {
      bool found = false;
      for (const auto& p : set.proposals) found = found || (p.mask == g.mask && p.class_id == g.class_id);
      EXPECT_TRUE(found) << seed;
    }
    expect_well_formed(set, NormMode::kL2);
  }
}

TEST(Propose, TranslationEquivariance) {
  const TextBank bank = synth_text_bank(4, 16, 6);
  const std::vector<LayoutItem> layout{{BBox{2, 3, 8, 9}, 0}, {BBox{12, 4, 18, 11}, 2}, {BBox{3, 15, 9, 22}, 3}};
  const auto base = propose(synth_scene(bank, layout, 0.0, 1), bank, {});
  for (auto [dr, dc] : {std::pair<std::size_t, std::size_t>{1, 2}, {5, 0}, {0, 7}, {9, 8}}) {
    std::vector<LayoutItem> moved = layout;
    for (auto& item : moved) item.box = item.box.translated(dr, dc);
    const auto shifted = propose(synth_scene(bank, moved, 0.0, 1), bank, {});
    ASSERT_EQ(shifted.size(), base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      EXPECT_EQ(shifted[i].bbox, base[i].bbox.translated(dr, dc));
      for (std::size_t r = 0; r + dr < 32; ++r)
        for (std::size_t c = 0; c + dc < 32; ++c) EXPECT_EQ(shifted[i].mask.at(r + dr, c + dc), base[i].mask.at(r, c));
    }
  }
}

TEST(Propose, RaisingTauNeverAddsForeground) {
  const TextBank bank = synth_text_bank(4, 16, 7);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = synth_scene(bank, random_layout(LayoutSpec{}, seed), 0.4, seed);
    for (NormMode mode : {NormMode::kL2, NormMode::kMinMax}) {
      const Tensor scores = score_map(s.pixel_features, bank.embeddings, mode);
      std::size_t prev = SIZE_MAX;
      for (double tau = -0.5; tau < 1.0; tau += 0.1) {
        const auto set = binarize_and_split(scores, tau, 1);
        expect_well_formed(set, mode);
        std::size_t total = 0;
        for (const auto& p : set.proposals) total += p.area;
        EXPECT_LE(total, prev);
        prev = total;
      }
    }
  }
}

TEST(Propose, DeterministicOrder) {
  const auto fx = make_reference_fixture();
  for (const auto& s : fx.scenes) {
    const auto a = propose(s, fx.bank, {}), b = propose(s, fx.bank, {});
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].mask, b[i].mask);
  }
}
