#pragma once

// Stand-ins for the pretrained text and image encoders: the class-embedding
// bank X^T (D×C), per-pixel image features X^I (H×W×D) and the backbone
// feature map F (D'×H×W). Everything here is either loaded from fixture
// files or synthesised deterministically from a seed.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "uplvp/error.hpp"
#include "uplvp/geometry.hpp"
#include "uplvp/pgm.hpp"
#include "uplvp/tensor.hpp"
#include "uplvp/tensor_io.hpp"

namespace uplvp {

struct TextBank {
  Tensor embeddings;  // D×C, one column per class
  std::vector<std::string> class_names;

  std::size_t dim() const { return embeddings.dim(0); }
  std::size_t classes() const { return embeddings.dim(1); }

  void validate() const {
    require_rank(embeddings.shape(), 2, "text bank");
    if (classes() < 1) throw ManifestError("text bank needs at least one class");
    if (class_names.size() != classes()) {
      throw ManifestError("text bank has " + std::to_string(classes()) + " columns but " +
                          std::to_string(class_names.size()) + " class names");
    }
  }
};

struct GtInstance {
  Tensor mask;  // H×W, 1 = foreground
  std::size_t class_id = 0;
};

struct Scene {
  std::string id;
  Tensor pixel_features;  // H×W×D
  Tensor fpn_features;    // D'×H×W
  std::vector<GtInstance> gt;
  std::uint64_t seed = 0;

  std::size_t height() const { return pixel_features.dim(0); }
  std::size_t width() const { return pixel_features.dim(1); }
  std::size_t feature_dim() const { return pixel_features.dim(2); }
  std::size_t fpn_dim() const { return fpn_features.dim(0); }

  void validate(std::size_t classes) const {
    require_rank(pixel_features.shape(), 3, "scene pixel features");
    require_rank(fpn_features.shape(), 3, "scene fpn features");
    if (fpn_features.dim(1) != height() || fpn_features.dim(2) != width()) {
      throw ManifestError("scene " + id + ": fpn features " + shape_str(fpn_features.shape()) +
                          " do not match pixel features " + shape_str(pixel_features.shape()));
    }
    for (const auto& g : gt) {
      if (g.mask.shape() != Shape{height(), width()}) {
        throw ManifestError("scene " + id + ": gt mask shape " + shape_str(g.mask.shape()));
      }
      if (g.class_id >= classes) {
        throw ManifestError("scene " + id + ": gt class id " + std::to_string(g.class_id) +
                            " out of range");
      }
    }
  }
};

struct LayoutItem {
  BBox box;
  std::size_t class_id = 0;
};

/// Geometry of a synthesised scene.
struct SceneGeometry {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t fpn_dim = 16;
  // Shared by every scene so that the feature space is consistent across a
  // fixture, as a frozen backbone would be.
  std::uint64_t projection_seed = 0x5eedf00dULL;
};

/// C mutually orthogonal unit columns of width D (Gram-Schmidt over seeded
/// Gaussian draws).
inline TextBank synth_text_bank(std::size_t classes, std::size_t dim, std::uint64_t seed) {
  if (classes == 0) throw CapacityError("text bank needs at least one class");
  if (classes > dim) {
    throw CapacityError("cannot place " + std::to_string(classes) +
                        " orthogonal classes in dimension " + std::to_string(dim));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> cols;
  while (cols.size() < classes) {
    std::vector<double> v(dim);
    for (double& x : v) x = gauss(rng);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& u : cols) {
        double dot = 0;
        for (std::size_t i = 0; i < dim; ++i) dot += v[i] * u[i];
        for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * u[i];
      }
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;  // degenerate draw
    for (double& x : v) x /= norm;
    cols.push_back(std::move(v));
  }
  TextBank bank{Tensor(Shape{dim, classes}), {}};
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < dim; ++i) bank.embeddings.at(i, c) = static_cast<float>(cols[c][i]);
    bank.class_names.push_back("class_" + std::to_string(c));
  }
  return bank;
}

/// Fixed linear map from image-feature width D to backbone width D'.
inline Tensor fpn_projection(std::size_t fpn_dim, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ (fpn_dim * 0x9e3779b97f4a7c15ULL) ^ dim);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  Tensor proj(Shape{fpn_dim, dim});
  for (float& v : proj.data()) v = static_cast<float>(gauss(rng));
  return proj;
}

/// Scene whose in-box pixels carry the box's class embedding plus noise.
/// Later layout entries overwrite earlier ones where boxes overlap.
inline Scene synth_scene(const TextBank& bank, const std::vector<LayoutItem>& layout,
                         double noise_sigma, std::uint64_t seed,
                         const SceneGeometry& geom = {}) {
  const std::size_t h = geom.height, w = geom.width, d = bank.dim();
  for (const auto& item : layout) {
    require_box_in(item.box, h, w);
    if (item.class_id >= bank.classes()) {
      throw BoundsError("layout class id " + std::to_string(item.class_id) + " out of range");
    }
  }
  // Winner map: index of the last layout entry covering each pixel.
  std::vector<long> owner(h * w, -1);
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const BBox& b = layout[k].box;
    for (std::size_t r = b.row_min; r <= b.row_max; ++r)
      for (std::size_t c = b.col_min; c <= b.col_max; ++c) owner[r * w + c] = static_cast<long>(k);
  }

  Scene scene;
  scene.seed = seed;
  scene.id = "synth-" + std::to_string(seed);
  scene.pixel_features = Tensor(Shape{h, w, d});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t i = 0; i < d; ++i) {
      double v = noise_sigma > 0 ? noise_sigma * gauss(rng) : 0.0;
      if (owner[p] >= 0) v += bank.embeddings.at(i, layout[static_cast<std::size_t>(owner[p])].class_id);
      scene.pixel_features[p * d + i] = static_cast<float>(v);
    }
  }

  const Tensor proj = fpn_projection(geom.fpn_dim, d, geom.projection_seed);
  scene.fpn_features = Tensor(Shape{geom.fpn_dim, h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t o = 0; o < geom.fpn_dim; ++o) {
      double acc = 0;
      for (std::size_t i = 0; i < d; ++i) acc += static_cast<double>(proj.at(o, i)) * scene.pixel_features[p * d + i];
      scene.fpn_features[o * h * w + p] = static_cast<float>(acc);
    }
  }

  for (std::size_t k = 0; k < layout.size(); ++k) {
    GtInstance g{Tensor(Shape{h, w}), layout[k].class_id};
    for (std::size_t p = 0; p < h * w; ++p) g.mask[p] = owner[p] == static_cast<long>(k) ? 1.0f : 0.0f;
    scene.gt.push_back(std::move(g));
  }
  return scene;
}

// ---- fixture files ---------------------------------------------------------

namespace detail {

using nlohmann::json;

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ManifestError("malformed manifest " + path.string() + ": " + e.what());
  }
}

template <typename V>
V field(const json& j, const char* key, const std::filesystem::path& where) {
  if (!j.contains(key)) throw ManifestError(where.string() + ": missing key '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ManifestError(where.string() + ": bad value for '" + key + "'");
  }
}

inline void expect_dim(std::size_t got, std::size_t want, const char* what,
                       const std::filesystem::path& where) {
  if (got != want) {
    throw ManifestError(where.string() + ": " + what + " is " + std::to_string(got) +
                        " in tensor data but " + std::to_string(want) + " in manifest");
  }
}

}  // namespace detail

/// Writes bank.ten plus a bank.json manifest into `dir`; returns the manifest path.
inline std::filesystem::path save_text_bank(const std::filesystem::path& dir, const TextBank& bank) {
  std::filesystem::create_directories(dir);
  io::write_tensor(dir / "bank.ten", bank.embeddings);
  nlohmann::json j;
  j["embeddings"] = "bank.ten";
  j["dim"] = bank.dim();
  j["classes"] = bank.classes();
  j["class_names"] = bank.class_names;
  const auto path = dir / "bank.json";
  std::ofstream(path) << j.dump(2) << '\n';
  return path;
}

inline TextBank load_text_bank(const std::filesystem::path& manifest) {
  const auto j = detail::read_json(manifest);
  const auto base = manifest.parent_path();
  TextBank bank;
  bank.embeddings = io::read_tensor(base / detail::field<std::string>(j, "embeddings", manifest));
  bank.class_names = detail::field<std::vector<std::string>>(j, "class_names", manifest);
  if (bank.embeddings.rank() != 2) throw ManifestError(manifest.string() + ": embeddings must be D×C");
  detail::expect_dim(bank.embeddings.dim(0), detail::field<std::size_t>(j, "dim", manifest), "D", manifest);
  detail::expect_dim(bank.embeddings.dim(1), detail::field<std::size_t>(j, "classes", manifest), "C", manifest);
  bank.validate();
  return bank;
}

/// Writes the scene's tensors, gt masks and scene.json into `dir`.
inline std::filesystem::path save_scene(const std::filesystem::path& dir, const Scene& scene,
                                        const TextBank& bank) {
  std::filesystem::create_directories(dir);
  io::write_tensor(dir / "pixel_features.ten", scene.pixel_features);
  io::write_tensor(dir / "fpn_features.ten", scene.fpn_features);
  nlohmann::json masks = nlohmann::json::array();
  for (std::size_t k = 0; k < scene.gt.size(); ++k) {
    const std::string name = "gt_" + std::to_string(k) + ".pgm";
    pgm::write(dir / name, pgm::from_mask(scene.gt[k].mask));
    masks.push_back({{"path", name}, {"class_id", scene.gt[k].class_id}});
  }
  nlohmann::json j;
  j["id"] = scene.id;
  j["pixel_features"] = "pixel_features.ten";
  j["fpn_features"] = "fpn_features.ten";
  j["height"] = scene.height();
  j["width"] = scene.width();
  j["feature_dim"] = scene.feature_dim();
  j["fpn_dim"] = scene.fpn_dim();
  j["classes"] = bank.classes();
  j["class_names"] = bank.class_names;
  j["gt_masks"] = masks;
  j["seed"] = scene.seed;
  const auto path = dir / "scene.json";
  std::ofstream(path) << j.dump(2) << '\n';
  return path;
}

inline Scene load_scene(const std::filesystem::path& manifest) {
  using detail::expect_dim;
  using detail::field;
  const auto j = detail::read_json(manifest);
  const auto base = manifest.parent_path();
  Scene scene;
  scene.id = field<std::string>(j, "id", manifest);
  scene.seed = field<std::uint64_t>(j, "seed", manifest);
  scene.pixel_features = io::read_tensor(base / field<std::string>(j, "pixel_features", manifest));
  scene.fpn_features = io::read_tensor(base / field<std::string>(j, "fpn_features", manifest));
  if (scene.pixel_features.rank() != 3 || scene.fpn_features.rank() != 3) {
    throw ManifestError(manifest.string() + ": feature tensors must be rank 3");
  }
  const auto h = field<std::size_t>(j, "height", manifest);
  const auto w = field<std::size_t>(j, "width", manifest);
  const auto classes = field<std::size_t>(j, "classes", manifest);
  expect_dim(scene.pixel_features.dim(0), h, "H", manifest);
  expect_dim(scene.pixel_features.dim(1), w, "W", manifest);
  expect_dim(scene.pixel_features.dim(2), field<std::size_t>(j, "feature_dim", manifest), "D", manifest);
  expect_dim(scene.fpn_features.dim(0), field<std::size_t>(j, "fpn_dim", manifest), "D'", manifest);
  const auto names = field<std::vector<std::string>>(j, "class_names", manifest);
  expect_dim(names.size(), classes, "class name count", manifest);
  for (const auto& m : field<nlohmann::json>(j, "gt_masks", manifest)) {
    GtInstance g;
    g.mask = pgm::to_mask(pgm::read(base / field<std::string>(m, "path", manifest)));
    g.class_id = field<std::size_t>(m, "class_id", manifest);
    scene.gt.push_back(std::move(g));
  }
  scene.validate(classes);
  return scene;
}

}  // namespace uplvp
