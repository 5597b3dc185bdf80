#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "uplvp/encoders.hpp"
#include "uplvp/fixtures.hpp"
#include "uplvp/provenance.hpp"

using namespace uplvp;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "uplvp-tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double column_dot(const Tensor& m, std::size_t a, std::size_t b) {
  double dot = 0;
  for (std::size_t r = 0; r < m.dim(0); ++r) dot += double(m.at(r, a)) * m.at(r, b);
  return dot;
}

}  // namespace

TEST(TextBank, ColumnsAreOrthonormal) {
  const TextBank bank = synth_text_bank(3, 3, 12345);
  for (std::size_t a = 0; a < 3; ++a) {
    EXPECT_NEAR(column_dot(bank.embeddings, a, a), 1.0, 1e-6);
    for (std::size_t b = a + 1; b < 3; ++b) EXPECT_LT(std::abs(column_dot(bank.embeddings, a, b)), 1e-5);
  }
  const TextBank single = synth_text_bank(1, 16, 1);
  EXPECT_NEAR(column_dot(single.embeddings, 0, 0), 1.0, 1e-6);
  EXPECT_EQ(single.class_names.size(), 1u);
}

TEST(TextBank, DeterministicAndCapacityChecked) {
  EXPECT_EQ(synth_text_bank(4, 16, 9).embeddings, synth_text_bank(4, 16, 9).embeddings);
  EXPECT_NE(synth_text_bank(4, 16, 9).embeddings, synth_text_bank(4, 16, 10).embeddings);
  EXPECT_THROW(synth_text_bank(5, 4, 1), CapacityError);
  EXPECT_THROW(synth_text_bank(0, 4, 1), CapacityError);
}

TEST(SynthScene, NoiseFreeBoxCarriesClassColumn) {
  const TextBank bank = synth_text_bank(3, 8, 2);
  const Scene s = synth_scene(bank, {{BBox{2, 3, 5, 6}, 2}}, 0.0, 7);
  ASSERT_EQ(s.gt.size(), 1u);
  EXPECT_EQ(s.gt[0].class_id, 2u);
  for (std::size_t r = 2; r <= 5; ++r)
    for (std::size_t c = 3; c <= 6; ++c)
      for (std::size_t d = 0; d < 8; ++d) EXPECT_EQ(s.pixel_features.at(r, c, d), bank.embeddings.at(d, 2));
  for (std::size_t d = 0; d < 8; ++d) EXPECT_EQ(s.pixel_features.at(0, 0, d), 0.0f);
  EXPECT_FLOAT_EQ(s.gt[0].mask.at(2, 3), 1.0f);
  EXPECT_FLOAT_EQ(s.gt[0].mask.at(1, 3), 0.0f);
}

TEST(SynthScene, EmptyLayoutIsPureNoise) {
  const TextBank bank = synth_text_bank(2, 8, 2);
  const Scene s = synth_scene(bank, {}, 0.3, 7);
  EXPECT_TRUE(s.gt.empty());
  double sq = 0;
  for (float v : s.pixel_features.data()) sq += double(v) * v;
  const double sigma = std::sqrt(sq / static_cast<double>(s.pixel_features.size()));
  EXPECT_NEAR(sigma, 0.3, 0.02);
}

TEST(SynthScene, LaterBoxesWinAndOutOfBoundsThrows) {
  const TextBank bank = synth_text_bank(2, 4, 2);
  const Scene s = synth_scene(bank, {{BBox{0, 0, 3, 3}, 0}, {BBox{2, 2, 5, 5}, 1}}, 0.0, 1);
  EXPECT_FLOAT_EQ(s.gt[0].mask.at(2, 2), 0.0f);
  EXPECT_FLOAT_EQ(s.gt[1].mask.at(2, 2), 1.0f);
  EXPECT_THROW(synth_scene(bank, {{BBox{30, 30, 32, 31}, 0}}, 0.0, 1), BoundsError);
}

TEST(SynthScene, DeterministicInSeed) {
  const TextBank bank = synth_text_bank(2, 8, 2);
  const std::vector<LayoutItem> layout{{BBox{1, 1, 6, 6}, 1}};
  const Scene a = synth_scene(bank, layout, 0.1, 5), b = synth_scene(bank, layout, 0.1, 5);
  EXPECT_EQ(a.pixel_features, b.pixel_features);
  EXPECT_EQ(a.fpn_features, b.fpn_features);
  EXPECT_NE(a.pixel_features, synth_scene(bank, layout, 0.1, 6).pixel_features);
}

TEST(SynthScene, FpnIsProjectionOfPixelFeatures) {
  const TextBank bank = synth_text_bank(2, 8, 2);
  SceneGeometry geom;
  geom.fpn_dim = 5;
  const Scene s = synth_scene(bank, {{BBox{1, 1, 6, 6}, 1}}, 0.1, 5, geom);
  const Tensor proj = fpn_projection(5, 8, geom.projection_seed);
  for (std::size_t c = 0; c < 5; ++c) {
    double expect = 0;
    for (std::size_t d = 0; d < 8; ++d) expect += double(proj.at(c, d)) * s.pixel_features.at(3, 4, d);
    EXPECT_NEAR(s.fpn_features.at(c, 3, 4), expect, 1e-5);
  }
}

TEST(Fixtures, RoundTripThroughFiles) {
  const auto dir = fresh_dir("fixture-roundtrip");
  const auto fx = make_reference_fixture();
  const auto bank_path = save_text_bank(dir / "bank", fx.bank);
  const TextBank bank = load_text_bank(bank_path);
  EXPECT_EQ(bank.embeddings, fx.bank.embeddings);
  EXPECT_EQ(bank.class_names, fx.bank.class_names);
  std::vector<Scene> loaded;
  for (const Scene& s : fx.scenes) {
    loaded.push_back(load_scene(save_scene(dir / s.id, s, fx.bank)));
    EXPECT_EQ(loaded.back().pixel_features, s.pixel_features);
    EXPECT_EQ(loaded.back().fpn_features, s.fpn_features);
    ASSERT_EQ(loaded.back().gt.size(), s.gt.size());
    for (std::size_t k = 0; k < s.gt.size(); ++k) {
      EXPECT_EQ(loaded.back().gt[k].mask, s.gt[k].mask);
      EXPECT_EQ(loaded.back().gt[k].class_id, s.gt[k].class_id);
    }
  }
  EXPECT_EQ(fixture_hash(bank, loaded), fixture_hash(fx.bank, fx.scenes));
}

TEST(Fixtures, TwoClassBankRoundTrip) {
  const auto dir = fresh_dir("bank2");
  EXPECT_EQ(load_text_bank(save_text_bank(dir, synth_text_bank(2, 6, 3))).classes(), 2u);
}

TEST(Fixtures, ManifestMismatchIsReported) {
  const auto dir = fresh_dir("bank-mismatch");
  const auto path = save_text_bank(dir, synth_text_bank(2, 6, 3));
  nlohmann::json j = nlohmann::json::parse(std::ifstream(path));
  j["classes"] = 3;
  j["class_names"] = {"a", "b", "c"};
  std::ofstream(path) << j.dump();
  EXPECT_THROW(load_text_bank(path), ManifestError);
}

TEST(Fixtures, TruncatedPayloadIsAFormatError) {
  const auto dir = fresh_dir("bank-truncated");
  const auto path = save_text_bank(dir, synth_text_bank(2, 6, 3));
  auto bytes = io::read_bytes(dir / "bank.ten");
  bytes.resize(bytes.size() - 3);
  io::write_bytes(dir / "bank.ten", bytes);
  EXPECT_THROW(load_text_bank(path), FormatError);
}

TEST(Fixtures, SceneDimensionMismatchIsReported) {
  const auto dir = fresh_dir("scene-mismatch");
  const auto fx = make_reference_fixture();
  const auto path = save_scene(dir, fx.scenes[0], fx.bank);
  nlohmann::json j = nlohmann::json::parse(std::ifstream(path));
  j["height"] = 31;
  std::ofstream(path) << j.dump();
  EXPECT_THROW(load_scene(path), ManifestError);
}

TEST(Fixtures, HashChangesWithContent) {
  auto fx = make_reference_fixture();
  const auto before = fixture_hash(fx.bank, fx.scenes);
  EXPECT_EQ(before.size(), 40u);
  fx.scenes[1].pixel_features[17] += 1.0f;
  EXPECT_NE(fixture_hash(fx.bank, fx.scenes), before);
}

TEST(Layouts, BoxesAreSeparatedAndInBounds) {
  LayoutSpec spec;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto layout = random_layout(spec, seed);
    EXPECT_GE(layout.size(), spec.min_objects);
    EXPECT_LE(layout.size(), spec.max_objects);
    for (std::size_t a = 0; a < layout.size(); ++a) {
      EXPECT_TRUE(layout[a].box.fits(spec.height, spec.width));
      for (std::size_t b = a + 1; b < layout.size(); ++b) {
        const BBox& p = layout[a].box;
        const BBox& q = layout[b].box;
        EXPECT_TRUE(p.row_min > q.row_max + 1 || q.row_min > p.row_max + 1 || p.col_min > q.col_max + 1 ||
                    q.col_min > p.col_max + 1);
      }
    }
  }
}
