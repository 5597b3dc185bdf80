#pragma once

// Pre-training objective: Hungarian-matched focal classification, dice and
// binary cross-entropy mask terms, and the auxiliary kernel-text
// classification term on the final stage.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "uplvp/autograd.hpp"
#include "uplvp/error.hpp"
#include "uplvp/head.hpp"
#include "uplvp/hungarian.hpp"
#include "uplvp/ops.hpp"
#include "uplvp/proposals.hpp"
#include "uplvp/tensor.hpp"

namespace uplvp {

struct LossWeights {
  double cls = 2.0;
  double dice = 4.0;
  double ce = 1.0;
  double aux = 2.0;

  void validate() const {
    if (cls < 0 || dice < 0 || ce < 0 || aux < 0) throw ConfigError("loss weights must be >= 0");
  }
};

struct LossConfig {
  LossWeights weights;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_eps = 1e-3;
};

inline constexpr double kProbClamp = 1e-7;

/// -alpha (1 - p_t)^gamma log(p_t), with p_t = prob for the target class and
/// 1 - prob otherwise. `prob` is clamped to [1e-7, 1 - 1e-7].
inline double focal_loss(double prob, bool is_target, double gamma = 2.0, double alpha = 0.25) {
  const double p = std::clamp(prob, kProbClamp, 1.0 - kProbClamp);
  const double pt = is_target ? p : 1.0 - p;
  return -alpha * std::pow(1.0 - pt, gamma) * std::log(pt);
}

template <typename T>
double dice_loss(const BasicTensor<T>& pred, const BasicTensor<T>& gt, double eps = 1e-3) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError("dice_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                         shape_str(gt.shape()));
  }
  double inter = 0, ps = 0, gs = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += static_cast<double>(pred[i]) * gt[i];
    ps += pred[i];
    gs += gt[i];
  }
  return 1.0 - (2.0 * inter + eps) / (ps + gs + eps);
}

/// Mean binary cross-entropy of sigmoid(logits) against a binary mask.
template <typename T>
double ce_mask_loss(const BasicTensor<T>& logits, const BasicTensor<T>& gt) {
  if (logits.shape() != gt.shape()) {
    throw DimensionError("ce_mask_loss shape mismatch: " + shape_str(logits.shape()) + " vs " +
                         shape_str(gt.shape()));
  }
  if (logits.size() == 0) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i], y = gt[i];
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  return total / static_cast<double>(logits.size());
}

/// Pseudo targets: L masks (L×H×W) with their class labels.
template <typename T>
struct TargetSet {
  BasicTensor<T> masks;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

template <typename T = float>
TargetSet<T> targets_from(const ProposalSet& props, std::size_t h, std::size_t w) {
  TargetSet<T> t{BasicTensor<T>(Shape{props.size(), h, w}), {}};
  for (std::size_t l = 0; l < props.size(); ++l) {
    const Tensor& m = props[l].mask;
    if (m.shape() != Shape{h, w}) throw DimensionError("proposal mask does not match scene size");
    for (std::size_t i = 0; i < h * w; ++i) t.masks[l * h * w + i] = static_cast<T>(m[i]);
    t.labels.push_back(props[l].class_id);
  }
  return t;
}

namespace detail {

template <typename T>
BasicTensor<T> plane(const BasicTensor<T>& stack, std::size_t i) {
  const std::size_t h = stack.dim(1), w = stack.dim(2);
  BasicTensor<T> out(Shape{h, w});
  std::copy_n(stack.data().begin() + i * h * w, h * w, out.data().begin());
  return out;
}

}  // namespace detail

/// cost[n, j] = w.cls * focal(softmax(z_n)[label_j]) + w.dice * dice + w.ce * ce
/// between predicted mask n and target j.
template <typename T>
BasicTensor<T> build_cost_matrix(const StageOutput<T>& stage, const TargetSet<T>& targets,
                                 const LossConfig& cfg) {
  const std::size_t n = stage.mask_logits.dim(0), l = targets.size();
  if (l == 0) throw ContractError("build_cost_matrix needs at least one target");
  const BasicTensor<T> probs = ops::softmax(stage.class_logits, 1);
  BasicTensor<T> cost(Shape{n, l});
  for (std::size_t k = 0; k < n; ++k) {
    const BasicTensor<T> logits = detail::plane(stage.mask_logits, k);
    const BasicTensor<T> pred = ops::sigmoid(logits);
    for (std::size_t j = 0; j < l; ++j) {
      const BasicTensor<T> gt = detail::plane(targets.masks, j);
      const double c = cfg.weights.cls * focal_loss(probs.at(k, targets.labels[j]), true,
                                                    cfg.focal_gamma, cfg.focal_alpha) +
                       cfg.weights.dice * dice_loss(pred, gt, cfg.dice_eps) +
                       cfg.weights.ce * ce_mask_loss(logits, gt);
      cost.at(k, j) = static_cast<T>(c);
    }
  }
  return cost;
}

// ---- differentiable terms ----------------------------------------------------

namespace detail {

/// Mean focal term over a vector of target-class probabilities.
template <typename T>
ag::Var<T> focal_mean(ag::Var<T> probs, const LossConfig& cfg) {
  auto logp = ag::log(probs);
  auto term = cfg.focal_gamma == 0.0 ? logp
                                     : ag::mul(ag::power(ag::one_minus(probs), cfg.focal_gamma), logp);
  return ag::scale(ag::mean(term), -cfg.focal_alpha);
}

}  // namespace detail

template <typename T>
struct LossResult {
  ag::Var<T> total;
  // Per-term values: cls/dice/ce averaged over stages, aux from the last stage.
  double cls = 0;
  double dice = 0;
  double ce = 0;
  double aux = 0;
  std::size_t matched = 0;  // matched pairs in the final stage
  bool aux_empty = false;   // aux term skipped because nothing was matched
  LossWeights weights;
  std::vector<Assignment> assignments;  // one per stage
};

/// Auxiliary term: Q = (K^S · proj) · X^T, focal on softmax(Q)[n, label_j]
/// averaged over matched pairs. Returns nullopt if nothing is matched.
template <typename T>
std::optional<ag::Var<T>> aux_loss(ag::Var<T> final_kernels, ag::Var<T> proj, ag::Var<T> text,
                                   const Assignment& assign, const std::vector<std::size_t>& labels,
                                   const LossConfig& cfg) {
  if (assign.empty()) return std::nullopt;
  const auto q = ag::matmul(ag::matmul(final_kernels, proj), text);
  std::vector<std::pair<std::size_t, std::size_t>> at;
  for (const auto& [k, j] : assign.pairs) at.emplace_back(k, labels.at(j));
  return detail::focal_mean(ag::gather_elements(ag::softmax(q, 1), std::move(at)), cfg);
}

/// Composite loss over all stages on the tape. When `frozen` is given, its
/// per-stage assignments are used instead of solving the matching again.
template <typename T>
LossResult<T> total_loss(ag::Tape<T>& tape, const std::vector<StageVarsOut<T>>& stages,
                         std::size_t height, std::size_t width, ag::Var<T> aux_proj,
                         const TargetSet<T>& targets, const BasicTensor<T>& text,
                         const LossConfig& cfg,
                         const std::vector<Assignment>* frozen = nullptr) {
  if (stages.empty()) throw ContractError("total_loss needs at least one stage");
  cfg.weights.validate();
  LossResult<T> res;
  res.weights = cfg.weights;
  const std::size_t hw = height * width;
  const std::size_t l = targets.size();
  const std::size_t num_classes = stages.front().class_logits.shape()[1];
  const std::size_t no_object = num_classes - 1;
  const auto text_var = tape.constant(text);

  ag::Var<T> mask_part = tape.constant(BasicTensor<T>::scalar(T{0}));
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const std::size_t n = st.mask_logits.shape()[0];
    Assignment assign;
    if (frozen) {
      assign = frozen->at(s);
    } else if (l > 0) {
      const StageOutput<T> values = materialize(st, height, width);
      assign = hungarian(build_cost_matrix(values, targets, cfg));
    } else {
      for (std::size_t k = 0; k < n; ++k) assign.unmatched_kernels.push_back(k);
    }

    // Classification: matched kernels target their pseudo label, the rest
    // target the no-object class.
    std::vector<std::size_t> target_class(n, no_object);
    for (const auto& [k, j] : assign.pairs) target_class[k] = targets.labels.at(j);
    std::vector<std::pair<std::size_t, std::size_t>> cls_at;
    for (std::size_t k = 0; k < n; ++k) cls_at.emplace_back(k, target_class[k]);
    const auto probs = ag::softmax(st.class_logits, 1);
    const auto cls = detail::focal_mean(ag::gather_elements(probs, std::move(cls_at)), cfg);
    ag::Var<T> stage_total = ag::scale(cls, cfg.weights.cls);
    res.cls += cls.value().item();

    if (!assign.empty()) {
      const std::size_t m = assign.pairs.size();
      std::vector<std::size_t> rows;
      BasicTensor<T> gt(Shape{m, hw});
      BasicTensor<T> gt_sum(Shape{m, 1});
      for (std::size_t i = 0; i < m; ++i) {
        const auto [k, j] = assign.pairs[i];
        rows.push_back(k);
        double total = 0;
        for (std::size_t p = 0; p < hw; ++p) {
          gt[i * hw + p] = targets.masks[j * hw + p];
          total += gt[i * hw + p];
        }
        gt_sum[i] = static_cast<T>(total + cfg.dice_eps);
      }
      const auto logits = ag::gather_rows(st.mask_logits, rows);
      const auto gt_var = tape.constant(gt);

      const auto pred = ag::sigmoid(logits);
      const auto inter = ag::sum_rows(ag::mul(pred, gt_var));
      const auto numer = ag::add_scalar(ag::scale(inter, 2.0), cfg.dice_eps);
      const auto denom = ag::add(ag::sum_rows(pred), tape.constant(gt_sum));
      const auto dice = ag::mean(ag::one_minus(ag::mul(numer, ag::power(denom, -1.0))));

      // -(y log s(x) + (1-y) log s(-x))
      const auto pos = ag::mul(gt_var, ag::log_sigmoid(logits));
      const auto neg = ag::mul(ag::one_minus(gt_var), ag::log_sigmoid(ag::scale(logits, -1.0)));
      const auto ce = ag::scale(ag::mean(ag::add(pos, neg)), -1.0);

      stage_total = ag::add(stage_total, ag::scale(dice, cfg.weights.dice));
      stage_total = ag::add(stage_total, ag::scale(ce, cfg.weights.ce));
      res.dice += dice.value().item();
      res.ce += ce.value().item();
    }
    mask_part = ag::add(mask_part, stage_total);
    res.assignments.push_back(std::move(assign));
  }

  const double inv_stages = 1.0 / static_cast<double>(stages.size());
  res.cls *= inv_stages;
  res.dice *= inv_stages;
  res.ce *= inv_stages;
  res.total = ag::scale(mask_part, inv_stages);

  const Assignment& last = res.assignments.back();
  res.matched = last.pairs.size();
  if (auto aux = aux_loss(stages.back().kernels, aux_proj, text_var, last, targets.labels, cfg)) {
    res.aux = aux->value().item();
    res.total = ag::add(res.total, ag::scale(*aux, cfg.weights.aux));
  } else {
    res.aux_empty = true;
  }
  return res;
}

/// Plain-value loss breakdown for already computed stage outputs.
template <typename T>
LossResult<T> total_loss(const std::vector<StageOutput<T>>& stages, const BasicTensor<T>& aux_proj,
                         const TargetSet<T>& targets, const BasicTensor<T>& text,
                         const LossConfig& cfg, ag::Tape<T>& scratch) {
  std::vector<StageVarsOut<T>> vars;
  std::size_t h = 0, w = 0;
  for (const auto& s : stages) {
    const auto& m = s.mask_logits;
    require_rank(m.shape(), 3, "total_loss mask logits");
    h = m.dim(1);
    w = m.dim(2);
    vars.push_back({scratch.constant(s.kernels), scratch.constant(m.reshaped({m.dim(0), h * w})),
                    scratch.constant(s.class_logits)});
  }
  return total_loss(scratch, vars, h, w, scratch.constant(aux_proj), targets, text, cfg);
}

}  // namespace uplvp
