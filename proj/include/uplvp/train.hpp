#pragma once

// Toy pre-training loop: per-image steps over a fixed scene set. Each step
// generates pseudo targets, optionally injects matched prompts into the base
// kernels, runs every head stage, and applies one AdamW update.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "uplvp/encoders.hpp"
#include "uplvp/error.hpp"
#include "uplvp/head.hpp"
#include "uplvp/losses.hpp"
#include "uplvp/optim.hpp"
#include "uplvp/prompts.hpp"
#include "uplvp/proposals.hpp"

namespace uplvp {

struct TrainConfig {
  std::size_t steps = 300;
  AdamWConfig optimizer;
  std::uint64_t seed = 0;
  std::size_t stages = 3;
  std::size_t kernels = 8;
  double kernel_sigma = 0.01;
  MatchStrategy strategy = MatchStrategy::kCosine;
  LossConfig loss;
  ProposalConfig proposals;

  void validate() const {
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (optimizer.learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
    if (optimizer.weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (optimizer.eps <= 0) throw ConfigError("eps must be > 0");
    if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1) || !(optimizer.beta2 >= 0 && optimizer.beta2 < 1)) {
      throw ConfigError("beta1 and beta2 must lie in [0,1)");
    }
    if (stages < 1) throw ConfigError("stages must be >= 1");
    if (kernels < 1) throw ConfigError("kernels must be >= 1");
    loss.weights.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"steps", c.steps},
      {"learning_rate", c.optimizer.learning_rate},
      {"weight_decay", c.optimizer.weight_decay},
      {"beta1", c.optimizer.beta1},
      {"beta2", c.optimizer.beta2},
      {"eps", c.optimizer.eps},
      {"seed", c.seed},
      {"stages", c.stages},
      {"kernels", c.kernels},
      {"kernel_sigma", c.kernel_sigma},
      {"strategy", strategy_name(c.strategy)},
      {"loss_weights",
       {{"cls", c.loss.weights.cls}, {"dice", c.loss.weights.dice}, {"ce", c.loss.weights.ce}, {"aux", c.loss.weights.aux}}},
      {"focal_gamma", c.loss.focal_gamma},
      {"focal_alpha", c.loss.focal_alpha},
      {"dice_eps", c.loss.dice_eps},
      {"norm_mode", norm_mode_name(c.proposals.mode)},
      {"tau", c.proposals.tau},
      {"min_area", c.proposals.min_area},
      {"head", kHeadVersion},
      {"batch_size", 1},
      {"supervision", "all stages averaged; aux on final stage"},
  };
}

/// Per-scene pseudo targets and prompts, computed once before training.
struct PreparedScene {
  const Scene* scene = nullptr;
  ProposalSet proposals;
  TargetSet<float> targets;
  PromptSet prompts;
};

inline std::vector<PreparedScene> prepare_scenes(const std::vector<Scene>& scenes, const TextBank& bank,
                                                 const ProposalConfig& cfg) {
  if (scenes.empty()) throw ConfigError("training needs at least one scene");
  std::vector<PreparedScene> out;
  const std::size_t fpn_dim = scenes.front().fpn_dim();
  for (const Scene& s : scenes) {
    if (s.feature_dim() != bank.dim()) {
      throw ConfigError("scene " + s.id + " has feature width " + std::to_string(s.feature_dim()) +
                        " but text bank has " + std::to_string(bank.dim()));
    }
    if (s.fpn_dim() != fpn_dim) throw ConfigError("scenes disagree on backbone width");
    PreparedScene p;
    p.scene = &s;
    p.proposals = propose(s, bank, cfg);
    p.targets = targets_from(p.proposals, s.height(), s.width());
    p.prompts = extract_prompts(s.fpn_features, p.proposals);
    out.push_back(std::move(p));
  }
  return out;
}

inline HeadConfig head_config(const TrainConfig& cfg, const TextBank& bank, std::size_t fpn_dim) {
  HeadConfig h;
  h.kernels = cfg.kernels;
  h.width = fpn_dim;
  h.classes = bank.classes();
  h.text_dim = bank.dim();
  h.stages = cfg.stages;
  h.kernel_sigma = cfg.kernel_sigma;
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined word
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Prompt offset for one step, or nullopt when injection is skipped.
inline std::optional<Tensor> prompt_offset(const HeadParams<float>& params, const PreparedScene& scene,
                                           MatchStrategy strategy, std::uint64_t match_seed,
                                           std::vector<std::size_t>* chosen_out = nullptr) {
  if (strategy == MatchStrategy::kNone || scene.prompts.empty()) return std::nullopt;
  const Tensor e = similarity_matrix(params.base_kernels, scene.prompts.vectors);
  const auto chosen = match(e, strategy, match_seed);
  if (chosen_out) *chosen_out = chosen;
  return gather_prompts(scene.prompts.vectors, chosen, params.kernels(), params.width());
}

struct LogRow {
  std::size_t step = 0;
  double total = 0, cls = 0, dice = 0, ce = 0, aux = 0;
  std::size_t matched = 0;
};

/// Loss of `params` on one prepared scene, left on `tape` for backward().
struct StepLoss {
  HeadVars<float> vars;
  LossResult<float> loss;
};

inline StepLoss step_loss(ag::Tape<float>& tape, const HeadParams<float>& params, const PreparedScene& scene,
                          const TextBank& bank, const TrainConfig& cfg, std::uint64_t step) {
  const auto offset = prompt_offset(params, scene, cfg.strategy, mix_seed(cfg.seed, step));
  const auto fv = bind_features(tape, scene.scene->fpn_features);
  StepLoss out{bind(tape, params, true), {}};
  const auto stages = forward(tape, out.vars, fv, offset, cfg.stages);
  out.loss = total_loss(tape, stages, fv.height, fv.width, out.vars.aux_proj, scene.targets, bank.embeddings, cfg.loss);
  return out;
}

/// Seeded permutation of scene indices, visited cyclically.
inline std::vector<std::size_t> scene_order(std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, 0xC0FFEE));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline std::vector<Tensor*> param_list(HeadParams<float>& p) {
  std::vector<Tensor*> out;
  p.for_each([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

inline std::vector<Tensor> grad_list(const HeadParams<float>& g) {
  std::vector<Tensor> out;
  g.for_each([&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

struct TrainResult {
  HeadParams<float> initial;
  HeadParams<float> params;
  std::vector<LogRow> log;
};

inline TrainResult pretrain(const std::vector<Scene>& scenes, const TextBank& bank, const TrainConfig& cfg) {
  cfg.validate();
  const auto prepared = prepare_scenes(scenes, bank, cfg.proposals);
  TrainResult res;
  res.params = init_head<float>(head_config(cfg, bank, scenes.front().fpn_dim()), cfg.seed);
  res.initial = res.params;
  const auto order = scene_order(prepared.size(), cfg.seed);
  AdamWState state;
  const auto params = param_list(res.params);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const PreparedScene& scene = prepared[order[step % order.size()]];
    ag::Tape<float> tape;
    const StepLoss sl = step_loss(tape, res.params, scene, bank, cfg, step);
    tape.backward(sl.loss.total);
    res.log.push_back({step, sl.loss.total.value().item(), sl.loss.cls, sl.loss.dice, sl.loss.ce,
                       sl.loss.aux, sl.loss.matched});
    optimizer_step(params, grad_list(collect_grads(tape, sl.vars)), state, cfg.optimizer);
  }
  return res;
}

/// Mean loss of `params` over every scene (step index 0 for seeding).
inline double mean_scene_loss(const HeadParams<float>& params, const std::vector<Scene>& scenes,
                              const TextBank& bank, const TrainConfig& cfg) {
  const auto prepared = prepare_scenes(scenes, bank, cfg.proposals);
  double total = 0;
  for (const auto& p : prepared) {
    ag::Tape<float> tape;
    total += step_loss(tape, params, p, bank, cfg, 0).loss.total.value().item();
  }
  return total / static_cast<double>(prepared.size());
}

// ---- convergence comparison --------------------------------------------------

struct StrategyCurve {
  MatchStrategy strategy = MatchStrategy::kNone;
  std::vector<LogRow> log;
  std::vector<double> smoothed;  // trailing mean over one pass of the scene set
  std::optional<std::size_t> steps_to_threshold;
  double final_loss = 0;
};

struct ConvergenceReport {
  MatchStrategy baseline = MatchStrategy::kNone;
  std::size_t window = 1;
  double threshold = 0;
  std::vector<StrategyCurve> curves;
};

/// Trailing mean of `window` losses; entries before the first full window
/// are averaged over what is available.
inline std::vector<double> smooth_losses(const std::vector<LogRow>& log, std::size_t window) {
  std::vector<double> out(log.size());
  double running = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    running += log[i].total;
    if (i >= window) running -= log[i - window].total;
    out[i] = running / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

/// Steps (1-based count) until the smoothed loss first reaches `threshold`,
/// only considering full windows.
inline std::optional<std::size_t> steps_to_reach(const std::vector<double>& smoothed, std::size_t window,
                                                 double threshold) {
  for (std::size_t i = window - 1; i < smoothed.size(); ++i) {
    if (smoothed[i] <= threshold) return i + 1;
  }
  return std::nullopt;
}

/// Trains once per strategy from the same seed. The threshold is the final
/// smoothed loss of the baseline: "none" when listed, else the first entry.
inline ConvergenceReport compare_convergence(const std::vector<Scene>& scenes, const TextBank& bank,
                                             const TrainConfig& cfg, const std::vector<MatchStrategy>& strategies) {
  if (strategies.size() < 2) throw ConfigError("compare needs at least two strategies");
  ConvergenceReport rep;
  rep.window = std::min(scenes.size(), cfg.steps);
  rep.baseline = std::find(strategies.begin(), strategies.end(), MatchStrategy::kNone) != strategies.end()
                     ? MatchStrategy::kNone
                     : strategies.front();
  for (MatchStrategy s : strategies) {
    TrainConfig run = cfg;
    run.strategy = s;
    StrategyCurve curve;
    curve.strategy = s;
    curve.log = pretrain(scenes, bank, run).log;
    curve.smoothed = smooth_losses(curve.log, rep.window);
    curve.final_loss = curve.smoothed.back();
    rep.curves.push_back(std::move(curve));
  }
  for (const auto& c : rep.curves) {
    if (c.strategy == rep.baseline) rep.threshold = c.final_loss;
  }
  for (auto& c : rep.curves) c.steps_to_threshold = steps_to_reach(c.smoothed, rep.window, rep.threshold);
  return rep;
}

// ---- CSV output --------------------------------------------------------------

inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_train_log(const std::filesystem::path& path, const std::vector<LogRow>& log) {
  std::ofstream out(path, std::ios::trunc);
  out << "step,total,cls,dice,ce,aux,matched\n";
  for (const auto& r : log) {
    out << r.step << ',' << fmt_num(r.total) << ',' << fmt_num(r.cls) << ',' << fmt_num(r.dice) << ','
        << fmt_num(r.ce) << ',' << fmt_num(r.aux) << ',' << r.matched << '\n';
  }
}

}  // namespace uplvp
