// uplvp: command-line driver for fixture synthesis, proposals, matching,
// pre-training, convergence comparison, AP evaluation and atlas export.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uplvp/uplvp.hpp"

namespace fs = std::filesystem;
using namespace uplvp;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::string> strategies;
};

struct Fixture {
  TextBank bank;
  std::vector<Scene> scenes;
  std::string hash;
};

std::vector<MatchStrategy> parse_strategy_list(const std::string& text) {
  std::vector<MatchStrategy> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(parse_strategy(item));
  }
  if (out.empty()) throw ConfigError("--strategies is empty");
  return out;
}

RunConfig resolve(const Options& opt) {
  RunConfig rc = load_run_config(opt.config);
  if (opt.seed) rc.train.seed = *opt.seed;
  if (opt.steps) rc.train.steps = *opt.steps;
  if (opt.strategies) rc.strategies = parse_strategy_list(*opt.strategies);
  rc.output_dir = opt.out;
  rc.train.validate();
  return rc;
}

Fixture load_fixture(const RunConfig& rc) {
  Fixture fx;
  if (rc.scenes.empty()) {
    auto ref = make_reference_fixture(rc.synthesis);
    fx.bank = std::move(ref.bank);
    fx.scenes = std::move(ref.scenes);
  } else {
    fx.bank = load_text_bank(*rc.text_bank);
    for (const auto& p : rc.scenes) {
      Scene s = load_scene(p);
      if (s.feature_dim() != fx.bank.dim()) {
        throw ManifestError(p.string() + ": feature width " + std::to_string(s.feature_dim()) +
                            " does not match text bank width " + std::to_string(fx.bank.dim()));
      }
      s.validate(fx.bank.classes());
      fx.scenes.push_back(std::move(s));
    }
  }
  fx.hash = fixture_hash(fx.bank, fx.scenes);
  return fx;
}

/// Resolved config echo plus fixture hash, written into every output dir.
void write_provenance(const fs::path& out, const RunConfig& rc, const Fixture& fx) {
  fs::create_directories(out);
  std::ofstream(out / "resolved-config.json") << to_json(rc).dump(2) << '\n';
  std::ofstream(out / "fixture-hash.txt") << fx.hash << '\n';
}

HeadParams<float> head_for(const RunConfig& rc, const Fixture& fx) {
  if (rc.checkpoint) return load_checkpoint(*rc.checkpoint);
  return init_head<float>(head_config(rc.train, fx.bank, fx.scenes.front().fpn_dim()), rc.train.seed);
}

void require_scenes(const Fixture& fx) {
  if (fx.scenes.empty()) throw ConfigError("fixture has no scenes");
}

// ---- subcommands -------------------------------------------------------------

void cmd_synth(const RunConfig& rc, const Fixture& fx, const fs::path& out) {
  const auto bank_manifest = save_text_bank(out / "bank", fx.bank);
  nlohmann::json cfg;
  cfg["text_bank"] = fs::relative(bank_manifest, out).string();
  std::vector<std::string> scenes;
  for (const Scene& s : fx.scenes) {
    scenes.push_back(fs::relative(save_scene(out / "scenes" / s.id, s, fx.bank), out).string());
  }
  cfg["scenes"] = scenes;
  cfg["seed"] = rc.train.seed;
  std::ofstream(out / "fixture-config.json") << cfg.dump(2) << '\n';
}

void cmd_propose(const RunConfig& rc, const Fixture& fx, const fs::path& out) {
  fs::create_directories(out / "masks");
  std::ofstream csv(out / "proposals.csv");
  csv << "scene_id,index,class_id,score,row_min,col_min,row_max,col_max,area\n";
  for (const Scene& s : fx.scenes) {
    const ProposalSet props = propose(s, fx.bank, rc.train.proposals);
    for (std::size_t i = 0; i < props.size(); ++i) {
      const auto& p = props[i];
      csv << s.id << ',' << i << ',' << p.class_id << ',' << fmt_num(p.score) << ',' << p.bbox.row_min << ','
          << p.bbox.col_min << ',' << p.bbox.row_max << ',' << p.bbox.col_max << ',' << p.area << '\n';
      pgm::write(out / "masks" / (s.id + "_" + std::to_string(i) + ".pgm"), pgm::from_mask(p.mask));
    }
  }
}

void cmd_match(const RunConfig& rc, const Fixture& fx, const fs::path& out, bool strategies_given) {
  require_scenes(fx);
  const HeadParams<float> params = head_for(rc, fx);
  const std::vector<MatchStrategy> strategies =
      strategies_given ? rc.strategies : std::vector<MatchStrategy>{rc.train.strategy};
  const auto prepared = prepare_scenes(fx.scenes, fx.bank, rc.train.proposals);
  std::ofstream csv(out / "match-report.csv");
  csv << "scene_id,kernel,proposal,similarity,strategy\n";
  for (MatchStrategy strategy : strategies) {
    for (const auto& p : prepared) {
      if (p.prompts.empty()) continue;
      const Tensor e = similarity_matrix(params.base_kernels, p.prompts.vectors);
      const auto chosen = match(e, strategy, mix_seed(rc.train.seed, 0));
      for (std::size_t k = 0; k < chosen.size(); ++k) {
        csv << p.scene->id << ',' << k << ',' << p.prompts.source[chosen[k]] << ','
            << fmt_num(e.at(k, chosen[k])) << ',' << strategy_name(strategy) << '\n';
      }
    }
  }
}

void cmd_pretrain(const RunConfig& rc, const Fixture& fx, const fs::path& out) {
  require_scenes(fx);
  const TrainResult res = pretrain(fx.scenes, fx.bank, rc.train);
  write_train_log(out / "train-log.csv", res.log);
  // The output location is not part of the run's identity; leaving it out
  // keeps checkpoints byte-identical across output directories.
  nlohmann::json echo = to_json(rc);
  echo.erase("output_dir");
  save_checkpoint(out / "checkpoint", res.params, echo);
  nlohmann::json manifest;
  manifest["config"] = echo;
  manifest["fixture_hash"] = fx.hash;
  manifest["head"] = kHeadVersion;
  manifest["supervision"] = "all stages averaged; aux on final stage";
  manifest["batch_size"] = 1;
  std::vector<std::string> ids;
  for (const Scene& s : fx.scenes) ids.push_back(s.id);
  manifest["scenes"] = ids;
  manifest["steps"] = res.log.size();
  manifest["final_loss"] = res.log.back().total;
  manifest["outputs"] = {"train-log.csv", "checkpoint/checkpoint.json", "checkpoint/checkpoint.ten"};
  std::ofstream(out / "run-manifest.json") << manifest.dump(2) << '\n';
}

void cmd_compare(const RunConfig& rc, const Fixture& fx, const fs::path& out) {
  require_scenes(fx);
  const ConvergenceReport rep = compare_convergence(fx.scenes, fx.bank, rc.train, rc.strategies);
  std::ofstream curves(out / "loss-curves.csv");
  curves << "strategy,step,total,smoothed\n";
  for (const auto& c : rep.curves) {
    for (std::size_t i = 0; i < c.log.size(); ++i) {
      curves << strategy_name(c.strategy) << ',' << c.log[i].step << ',' << fmt_num(c.log[i].total) << ','
             << fmt_num(c.smoothed[i]) << '\n';
    }
  }
  std::ofstream table(out / "steps-to-threshold.csv");
  table << "strategy,steps_to_threshold,final_smoothed_loss,threshold,baseline,window\n";
  for (const auto& c : rep.curves) {
    table << strategy_name(c.strategy) << ','
          << (c.steps_to_threshold ? std::to_string(*c.steps_to_threshold) : std::string()) << ','
          << fmt_num(c.final_loss) << ',' << fmt_num(rep.threshold) << ',' << strategy_name(rep.baseline) << ','
          << rep.window << '\n';
  }
}

void cmd_eval_ap(const RunConfig& rc, const Fixture& fx, const fs::path& out) {
  require_scenes(fx);
  std::vector<ImageDetections> images;
  std::string convention;
  if (rc.eval_source == "model") {
    const HeadParams<float> params = head_for(rc, fx);
    for (const Scene& s : fx.scenes) {
      const auto stages = forward(params, s.fpn_features, std::optional<Tensor>{}, params.stages.size());
      images.push_back({detections_from_stage(stages.back()), std::vector<BBox>{}});
    }
    convention = "score=max non-background class probability of final-stage kernel; mask=logit>0";
  } else {
    for (const Scene& s : fx.scenes) {
      images.push_back({detections_from_proposals(propose(s, fx.bank, rc.train.proposals), rc.train.proposals.mode), std::vector<BBox>{}});
    }
    convention = rc.train.proposals.mode == NormMode::kL2
                     ? "score=(mean in-mask cosine score + 1)/2 of pseudo mask"
                     : "score=mean in-mask minmax score of pseudo mask";
  }
  for (std::size_t i = 0; i < fx.scenes.size(); ++i) {
    for (const auto& g : fx.scenes[i].gt) {
      // A gt instance fully covered by a later one has no pixels left.
      if (std::any_of(g.mask.data().begin(), g.mask.data().end(), [](float v) { return v != 0.0f; })) {
        images[i].gts.push_back(tight_bbox(g.mask));
      }
    }
  }
  const ApReport rep = evaluate_ap(images, rc.ap_interpolation);
  std::ofstream csv(out / "eval-report.csv");
  csv << "# source=" << rc.eval_source << "; " << convention << "; class-agnostic box AP; interpolation="
      << (rc.ap_interpolation == ApInterpolation::kAllPoint ? "all-point" : "101-point") << '\n';
  csv << "iou_threshold,ap\n";
  for (std::size_t i = 0; i < rep.thresholds.size(); ++i) {
    char thr[16];
    std::snprintf(thr, sizeof thr, "%.2f", rep.thresholds[i]);
    csv << thr << ',' << fmt_num(rep.ap[i]) << '\n';
  }
  csv << "mAP," << fmt_num(rep.map) << '\n';
}

void cmd_atlas(const RunConfig& rc, const Fixture& fx, const fs::path& out) {
  require_scenes(fx);
  const HeadParams<float> params = head_for(rc, fx);
  std::vector<const Tensor*> features;
  for (const Scene& s : fx.scenes) features.push_back(&s.fpn_features);
  const ActivationAtlas atlas = activation_atlas(params, features, params.stages.size());
  fs::create_directories(out / "atlas");
  for (std::size_t k = 0; k < atlas.maps.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "kernel_%02zu.pgm", k);
    pgm::write(out / "atlas" / name, pgm::from_heatmap(atlas.maps[k]));
  }
  std::ofstream csv(out / "diversity.csv");
  csv << "kernel,centroid_row,centroid_col\n";
  if (atlas.maps.size() < 2) return;
  const DiversityReport rep = diversity_report(atlas);
  for (std::size_t k = 0; k < rep.centroids.size(); ++k) {
    csv << k << ',' << fmt_num(rep.centroids[k].first) << ',' << fmt_num(rep.centroids[k].second) << '\n';
  }
  std::ofstream summary(out / "diversity-summary.csv");
  summary << "metric,value\n";
  summary << "mean_pairwise_iou," << fmt_num(rep.mean_pairwise_iou) << '\n';
  summary << "centroid_scatter," << fmt_num(rep.centroid_scatter) << '\n';
  summary << "image_count," << atlas.image_count << '\n';
}

std::string one_line(std::string msg) {
  for (char& c : msg) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return msg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised language-vision prompt pre-training toolkit"};
  app.require_subcommand(1);
  Options opt;
  const std::vector<std::string> names = {"synth", "propose", "match", "pretrain", "compare", "eval-ap", "atlas"};
  const std::vector<std::string> help = {
      "write the text bank and scenes as fixture files",
      "generate pseudo-mask proposals",
      "match kernels to prompts and report the choice",
      "run pre-training and save a checkpoint",
      "compare convergence across matching strategies",
      "class-agnostic box AP of proposals or model outputs",
      "export per-kernel activation atlas"};
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto* sub = app.add_subcommand(names[i], help[i]);
    sub->add_option("--config", opt.config, "run configuration (JSON)")->required();
    sub->add_option("--out", opt.out, "output directory")->required();
    sub->add_option("--seed", opt.seed, "override the config seed");
    sub->add_option("--steps", opt.steps, "override the number of training steps");
    sub->add_option("--strategies", opt.strategies, "comma-separated matching strategies");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 1;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    const RunConfig rc = resolve(opt);
    const Fixture fx = load_fixture(rc);
    const fs::path out = opt.out;
    write_provenance(out, rc, fx);
    if (cmd == "synth") cmd_synth(rc, fx, out);
    else if (cmd == "propose") cmd_propose(rc, fx, out);
    else if (cmd == "match") cmd_match(rc, fx, out, opt.strategies.has_value());
    else if (cmd == "pretrain") cmd_pretrain(rc, fx, out);
    else if (cmd == "compare") cmd_compare(rc, fx, out);
    else if (cmd == "eval-ap") cmd_eval_ap(rc, fx, out);
    else if (cmd == "atlas") cmd_atlas(rc, fx, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
