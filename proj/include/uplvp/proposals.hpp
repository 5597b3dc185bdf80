#pragma once

// Pseudo-mask generation: per-pixel alignment scores between image features
// and class embeddings, thresholded and split into connected instances.

#include <algorithm>
#include <cstddef>
#include <string>
#include <tuple>
#include <vector>

#include "uplvp/encoders.hpp"
#include "uplvp/error.hpp"
#include "uplvp/geometry.hpp"
#include "uplvp/ops.hpp"
#include "uplvp/tensor.hpp"

namespace uplvp {

struct ProposalConfig {
  NormMode mode = NormMode::kL2;
  double tau = 0.5;
  std::size_t min_area = 16;
};

struct MaskProposal {
  Tensor mask;  // H×W, 1 = foreground
  std::size_t class_id = 0;
  double score = 0;  // mean channel score inside the mask
  BBox bbox;
  std::size_t area = 0;
};

struct ProposalSet {
  std::string scene_id;
  std::vector<MaskProposal> proposals;

  std::size_t size() const { return proposals.size(); }
  bool empty() const { return proposals.empty(); }
  const MaskProposal& operator[](std::size_t i) const { return proposals[i]; }
};

/// Minimal inclusive box around the nonzero pixels of an H×W mask.
inline BBox tight_bbox(const Tensor& mask) {
  require_rank(mask.shape(), 2, "tight_bbox");
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  bool any = false;
  BBox box{h, w, 0, 0};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (mask.at(r, c) == 0.0f) continue;
      any = true;
      box.row_min = std::min(box.row_min, r);
      box.col_min = std::min(box.col_min, c);
      box.row_max = std::max(box.row_max, r);
      box.col_max = std::max(box.col_max, c);
    }
  }
  if (!any) throw EmptyMaskError("tight_bbox of an empty mask");
  return box;
}

/// H×W×C map of cosine (l2) or range-normalised (minmax) alignment between
/// every pixel feature and every class column. In minmax mode the dot product
/// is divided by D so the score stays in [0,1].
inline Tensor score_map(const Tensor& xi, const Tensor& xt, NormMode mode) {
  require_rank(xi.shape(), 3, "score_map image features");
  require_rank(xt.shape(), 2, "score_map text embeddings");
  const std::size_t h = xi.dim(0), w = xi.dim(1), d = xi.dim(2), c = xt.dim(1);
  if (xt.dim(0) != d) {
    throw DimensionError("score_map feature width mismatch: image " + shape_str(xi.shape()) +
                         " vs text " + shape_str(xt.shape()));
  }
  const Tensor pixels = ops::normalize(xi.reshaped({h * w, d}), 1, mode);
  const Tensor text = ops::normalize(xt, 0, mode);
  Tensor scores = ops::matmul(pixels, text);
  const float lo = mode == NormMode::kL2 ? -1.0f : 0.0f;
  const float scale = mode == NormMode::kL2 ? 1.0f : 1.0f / static_cast<float>(d);
  for (float& v : scores.data()) v = std::clamp(v * scale, lo, 1.0f);
  return scores.reshaped({h, w, c});
}

/// Thresholds every class channel at `tau` and turns each 4-connected
/// component of at least `min_area` pixels into one proposal. Output is
/// sorted by (class, row_min, col_min), then remaining box bounds and first
/// pixel in raster order.
inline ProposalSet binarize_and_split(const Tensor& scores, double tau, std::size_t min_area,
                                      std::string scene_id = {}) {
  require_rank(scores.shape(), 3, "binarize_and_split");
  const std::size_t h = scores.dim(0), w = scores.dim(1), classes = scores.dim(2);
  ProposalSet out{std::move(scene_id), {}};
  std::vector<std::tuple<std::size_t, BBox, std::size_t>> keys;  // class, box, first pixel
  std::vector<int> seen(h * w);
  std::vector<std::size_t> stack, members;

  for (std::size_t cls = 0; cls < classes; ++cls) {
    auto above = [&](std::size_t p) { return scores[p * classes + cls] > tau; };
    std::fill(seen.begin(), seen.end(), 0);
    for (std::size_t start = 0; start < h * w; ++start) {
      if (seen[start] || !above(start)) continue;
      members.clear();
      stack.assign(1, start);
      seen[start] = 1;
      while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        members.push_back(p);
        const std::size_t r = p / w, c = p % w;
        auto visit = [&](std::size_t q) {
          if (!seen[q] && above(q)) {
            seen[q] = 1;
            stack.push_back(q);
          }
        };
        if (r > 0) visit(p - w);
        if (r + 1 < h) visit(p + w);
        if (c > 0) visit(p - 1);
        if (c + 1 < w) visit(p + 1);
      }
      if (members.size() < min_area || members.empty()) continue;

      MaskProposal prop;
      prop.mask = Tensor(Shape{h, w});
      prop.class_id = cls;
      prop.area = members.size();
      double total = 0;
      for (std::size_t p : members) {
        prop.mask[p] = 1.0f;
        total += scores[p * classes + cls];
      }
      prop.score = total / static_cast<double>(members.size());
      prop.bbox = tight_bbox(prop.mask);
      keys.emplace_back(cls, prop.bbox, start);
      out.proposals.push_back(std::move(prop));
    }
  }

  std::vector<std::size_t> order(out.proposals.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& [ca, ba, pa] = keys[a];
    const auto& [cb, bb, pb] = keys[b];
    return std::tie(ca, ba.row_min, ba.col_min, ba.row_max, ba.col_max, pa) <
           std::tie(cb, bb.row_min, bb.col_min, bb.row_max, bb.col_max, pb);
  });
  std::vector<MaskProposal> sorted;
  sorted.reserve(order.size());
  for (std::size_t i : order) sorted.push_back(std::move(out.proposals[i]));
  out.proposals = std::move(sorted);
  return out;
}

/// Full pseudo-label pipeline for one scene.
inline ProposalSet propose(const Scene& scene, const TextBank& bank, const ProposalConfig& cfg) {
  return binarize_and_split(score_map(scene.pixel_features, bank.embeddings, cfg.mode), cfg.tau,
                            cfg.min_area, scene.id);
}

}  // namespace uplvp
