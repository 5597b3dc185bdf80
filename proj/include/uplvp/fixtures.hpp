#pragma once

// Seeded synthetic fixtures: random non-touching layouts and the reference
// scene set used by the convergence experiments.

#include <cstdint>
#include <random>
#include <vector>

#include "uplvp/encoders.hpp"
#include "uplvp/geometry.hpp"

namespace uplvp {

struct LayoutSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 4;
  std::size_t min_objects = 2;
  std::size_t max_objects = 3;
  std::size_t min_side = 5;
  std::size_t max_side = 12;
};

/// Boxes separated by at least one background pixel (no 4- or 8-adjacency).
/// Placement is by rejection sampling; fewer than min_objects boxes are
/// returned only if the image is too crowded to fit them.
inline std::vector<LayoutItem> random_layout(const LayoutSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  const std::size_t count = uniform(spec.min_objects, spec.max_objects);
  std::vector<LayoutItem> out;
  for (int attempt = 0; attempt < 1000 && out.size() < count; ++attempt) {
    const std::size_t bh = uniform(spec.min_side, std::min(spec.max_side, spec.height));
    const std::size_t bw = uniform(spec.min_side, std::min(spec.max_side, spec.width));
    const std::size_t r = uniform(0, spec.height - bh);
    const std::size_t c = uniform(0, spec.width - bw);
    const BBox box{r, c, r + bh - 1, c + bw - 1};
    bool clear = true;
    for (const auto& o : out) {
      // Require a gap of one pixel: expand the existing box by 1 and test overlap.
      const bool apart = box.row_min > o.box.row_max + 1 || o.box.row_min > box.row_max + 1 ||
                         box.col_min > o.box.col_max + 1 || o.box.col_min > box.col_max + 1;
      if (!apart) {
        clear = false;
        break;
      }
    }
    if (clear) out.push_back({box, uniform(0, spec.classes - 1)});
  }
  return out;
}

struct ReferenceFixture {
  TextBank bank;
  std::vector<Scene> scenes;
};

struct ReferenceSpec {
  std::size_t classes = 4;
  std::size_t feature_dim = 16;
  std::size_t fpn_dim = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t scene_count = 4;
  double noise_sigma = 0.0;
  std::uint64_t seed = 7;
  LayoutSpec layout{};
};

/// Deterministic bank plus scene set; scene k uses layout seed mix(seed, k).
inline ReferenceFixture make_reference_fixture(const ReferenceSpec& spec = {}) {
  ReferenceFixture fx;
  fx.bank = synth_text_bank(spec.classes, spec.feature_dim, spec.seed);
  SceneGeometry geom;
  geom.height = spec.height;
  geom.width = spec.width;
  geom.fpn_dim = spec.fpn_dim;
  LayoutSpec layout = spec.layout;
  layout.height = spec.height;
  layout.width = spec.width;
  layout.classes = spec.classes;
  for (std::size_t k = 0; k < spec.scene_count; ++k) {
    const std::uint64_t scene_seed = spec.seed * 1000003ULL + k;
    Scene s = synth_scene(fx.bank, random_layout(layout, scene_seed), spec.noise_sigma, scene_seed, geom);
    s.id = "scene-" + std::to_string(k);
    fx.scenes.push_back(std::move(s));
  }
  return fx;
}

}  // namespace uplvp
