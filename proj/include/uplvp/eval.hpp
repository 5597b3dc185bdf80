#pragma once

// Class-agnostic box AP and kernel activation analysis.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "uplvp/error.hpp"
#include "uplvp/geometry.hpp"
#include "uplvp/head.hpp"
#include "uplvp/ops.hpp"
#include "uplvp/proposals.hpp"
#include "uplvp/tensor.hpp"

namespace uplvp {

struct Detection {
  BBox bbox;
  double score = 0;  // confidence in [0,1]
  std::size_t source = 0;
};

/// IoU with inclusive pixel areas.
inline double box_iou(const BBox& a, const BBox& b) {
  const std::size_t r0 = std::max(a.row_min, b.row_min), r1 = std::min(a.row_max, b.row_max);
  const std::size_t c0 = std::max(a.col_min, b.col_min), c1 = std::min(a.col_max, b.col_max);
  const double inter = (r0 <= r1 && c0 <= c1) ? static_cast<double>((r1 - r0 + 1) * (c1 - c0 + 1)) : 0.0;
  const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

enum class ApInterpolation { kAllPoint, kPoint101 };

/// Detections and ground truth for one image.
struct ImageDetections {
  std::vector<Detection> detections;
  std::vector<BBox> gts;
};

/// Greedy score-ordered matching (each gt used once, best IoU >= thr among
/// unmatched gts), then the area under the precision-recall curve. Scores are
/// ranked across all images; ties keep input order.
inline double average_precision(const std::vector<ImageDetections>& images, double iou_thr,
                                ApInterpolation interp = ApInterpolation::kAllPoint) {
  struct Ranked {
    double score;
    std::size_t image;
    std::size_t det;
  };
  std::vector<Ranked> ranked;
  std::size_t total_gts = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    total_gts += images[i].gts.size();
    for (std::size_t d = 0; d < images[i].detections.size(); ++d) {
      ranked.push_back({images[i].detections[d].score, i, d});
    }
  }
  if (total_gts == 0) return ranked.empty() ? 1.0 : 0.0;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::vector<std::vector<char>> used(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) used[i].assign(images[i].gts.size(), 0);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    const auto& img = images[ranked[k].image];
    const BBox& box = img.detections[ranked[k].det].bbox;
    double best = -1;
    std::size_t best_gt = 0;
    for (std::size_t g = 0; g < img.gts.size(); ++g) {
      if (used[ranked[k].image][g]) continue;
      const double iou = box_iou(box, img.gts[g]);
      if (iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    if (best >= iou_thr) {
      used[ranked[k].image][best_gt] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gts));
  }

  // Monotone precision envelope from the right.
  std::vector<double> envelope = precision;
  for (std::size_t k = envelope.size(); k-- > 1;) envelope[k - 1] = std::max(envelope[k - 1], envelope[k]);

  if (interp == ApInterpolation::kPoint101) {
    double total = 0;
    for (int i = 0; i <= 100; ++i) {
      const double r = i / 100.0;
      double best = 0;
      for (std::size_t k = 0; k < recall.size(); ++k) {
        if (recall[k] >= r - 1e-12) {
          best = envelope[k];
          break;
        }
      }
      total += best;
    }
    return total / 101.0;
  }
  double ap = 0, prev_recall = 0;
  for (std::size_t k = 0; k < recall.size(); ++k) {
    ap += (recall[k] - prev_recall) * envelope[k];
    prev_recall = recall[k];
  }
  return ap;
}

inline double average_precision(const std::vector<Detection>& dets, const std::vector<BBox>& gts,
                                double iou_thr, ApInterpolation interp = ApInterpolation::kAllPoint) {
  return average_precision(std::vector<ImageDetections>{{dets, gts}}, iou_thr, interp);
}

struct ApReport {
  std::vector<double> thresholds;
  std::vector<double> ap;
  double map = 0;
};

/// AP at IoU 0.50:0.05:0.95 and their mean.
inline ApReport evaluate_ap(const std::vector<ImageDetections>& images,
                            ApInterpolation interp = ApInterpolation::kAllPoint) {
  ApReport rep;
  for (int i = 0; i < 10; ++i) {
    const double thr = 0.5 + 0.05 * i;
    rep.thresholds.push_back(thr);
    rep.ap.push_back(average_precision(images, thr, interp));
  }
  rep.map = std::accumulate(rep.ap.begin(), rep.ap.end(), 0.0) / static_cast<double>(rep.ap.size());
  return rep;
}

/// Pseudo-mask detections. Cosine scores in [-1,1] map to (s+1)/2; minmax
/// scores are already in [0,1].
inline std::vector<Detection> detections_from_proposals(const ProposalSet& props, NormMode mode) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < props.size(); ++i) {
    const double s = mode == NormMode::kL2 ? (props[i].score + 1.0) / 2.0 : props[i].score;
    out.push_back({props[i].bbox, std::clamp(s, 0.0, 1.0), i});
  }
  return out;
}

/// Model detections from final-stage outputs: masks binarised at
/// sigmoid > 0.5, scored by the highest non-background class probability.
inline std::vector<Detection> detections_from_stage(const StageOutput<float>& stage) {
  std::vector<Detection> out;
  const std::size_t n = stage.mask_logits.dim(0), h = stage.mask_logits.dim(1), w = stage.mask_logits.dim(2);
  const Tensor probs = ops::softmax(stage.class_logits, 1);
  const std::size_t classes = probs.dim(1) - 1;
  for (std::size_t k = 0; k < n; ++k) {
    Tensor mask(Shape{h, w});
    bool any = false;
    for (std::size_t p = 0; p < h * w; ++p) {
      if (stage.mask_logits[k * h * w + p] > 0.0f) {
        mask[p] = 1.0f;
        any = true;
      }
    }
    if (!any) continue;
    double best = 0;
    for (std::size_t c = 0; c < classes; ++c) best = std::max(best, static_cast<double>(probs.at(k, c)));
    out.push_back({tight_bbox(mask), best, k});
  }
  return out;
}

// ---- activation atlas ----------------------------------------------------------

inline constexpr std::size_t kAtlasSize = 200;

struct ActivationAtlas {
  std::vector<Tensor> maps;  // one 200×200 map per kernel, values in [0,1]
  std::size_t image_count = 0;
};

/// Mean over scenes of each kernel's final-stage sigmoid activation, resized
/// to 200×200. No prompt injection, as at evaluation time.
inline ActivationAtlas activation_atlas(const HeadParams<float>& params, const std::vector<const Tensor*>& features,
                                        std::size_t stages) {
  if (features.empty()) throw ContractError("activation_atlas needs at least one scene");
  ActivationAtlas atlas;
  const std::size_t n = params.kernels();
  std::vector<std::vector<double>> acc(n, std::vector<double>(kAtlasSize * kAtlasSize, 0.0));
  for (const Tensor* f : features) {
    const auto out = forward(params, *f, std::optional<Tensor>{}, stages);
    const Tensor act = ops::sigmoid(out.back().mask_logits);
    const std::size_t h = act.dim(1), w = act.dim(2);
    for (std::size_t k = 0; k < n; ++k) {
      Tensor plane(Shape{h, w});
      std::copy_n(act.data().begin() + k * h * w, h * w, plane.data().begin());
      const Tensor resized = ops::resize_bilinear(plane, kAtlasSize, kAtlasSize);
      for (std::size_t i = 0; i < resized.size(); ++i) acc[k][i] += resized[i];
    }
  }
  atlas.image_count = features.size();
  for (std::size_t k = 0; k < n; ++k) {
    Tensor m(Shape{kAtlasSize, kAtlasSize});
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = static_cast<float>(acc[k][i] / static_cast<double>(atlas.image_count));
    }
    atlas.maps.push_back(std::move(m));
  }
  return atlas;
}

struct DiversityReport {
  double mean_pairwise_iou = 0;  // lower = more diverse
  std::vector<std::pair<double, double>> centroids;  // (row, col) of each top region
  double centroid_scatter = 0;  // mean distance of centroids from their mean
};

/// Pixels above the map's 90th percentile (nearest rank). If none are strictly
/// above, the pixels equal to the maximum.
inline std::vector<char> top_region(const Tensor& map) {
  std::vector<float> sorted(map.data().begin(), map.data().end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(sorted.size())));
  const float p90 = sorted[rank == 0 ? 0 : rank - 1];
  std::vector<char> region(map.size());
  bool any = false;
  for (std::size_t i = 0; i < map.size(); ++i) {
    region[i] = map[i] > p90;
    any = any || region[i];
  }
  if (!any) {
    for (std::size_t i = 0; i < map.size(); ++i) region[i] = map[i] >= p90;
  }
  return region;
}

inline double region_iou(const std::vector<char>& a, const std::vector<char>& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline DiversityReport diversity_report(const ActivationAtlas& atlas) {
  const std::size_t n = atlas.maps.size();
  if (n < 2) throw ContractError("diversity_report needs at least two kernels");
  std::vector<std::vector<char>> regions;
  DiversityReport rep;
  for (const Tensor& m : atlas.maps) {
    regions.push_back(top_region(m));
    const std::size_t w = m.dim(1);
    double r = 0, c = 0, count = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!regions.back()[i]) continue;
      r += static_cast<double>(i / w);
      c += static_cast<double>(i % w);
      ++count;
    }
    rep.centroids.emplace_back(r / count, c / count);
  }
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      total += region_iou(regions[a], regions[b]);
      ++pairs;
    }
  }
  rep.mean_pairwise_iou = total / static_cast<double>(pairs);
  double mr = 0, mc = 0;
  for (const auto& [r, c] : rep.centroids) {
    mr += r;
    mc += c;
  }
  mr /= static_cast<double>(n);
  mc /= static_cast<double>(n);
  for (const auto& [r, c] : rep.centroids) rep.centroid_scatter += std::hypot(r - mr, c - mc);
  rep.centroid_scatter /= static_cast<double>(n);
  return rep;
}

}  // namespace uplvp
