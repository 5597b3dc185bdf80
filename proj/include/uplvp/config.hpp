#pragma once

// Run configuration for the command-line tool. Parsing is strict: unknown
// keys and mistyped values are rejected with the offending key in the
// message. Relative paths resolve against the config file's directory.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "uplvp/error.hpp"
#include "uplvp/eval.hpp"
#include "uplvp/fixtures.hpp"
#include "uplvp/prompts.hpp"
#include "uplvp/train.hpp"

namespace uplvp {

struct RunConfig {
  TrainConfig train;
  std::vector<MatchStrategy> strategies{MatchStrategy::kCosine, MatchStrategy::kNone};
  std::optional<std::filesystem::path> text_bank;
  std::vector<std::filesystem::path> scenes;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> output_dir;
  ReferenceSpec synthesis;
  std::string eval_source = "proposals";  // or "model"
  ApInterpolation ap_interpolation = ApInterpolation::kAllPoint;
};

namespace detail {

using nlohmann::json;

template <typename V>
V typed(const json& value, const std::string& key) {
  try {
    return value.get<V>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

using Setter = std::function<void(const json&, const std::string&)>;

inline void apply(const json& obj, const std::map<std::string, Setter>& schema, const std::string& prefix) {
  if (!obj.is_object()) throw ConfigError("config " + (prefix.empty() ? std::string("root") : "key '" + prefix + "'") + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    const std::string full = prefix.empty() ? key : prefix + "." + key;
    auto it = schema.find(key);
    if (it == schema.end()) throw ConfigError("unknown config key: " + full);
    it->second(value, full);
  }
}

template <typename V>
Setter set(V& target) {
  return [&target](const json& v, const std::string& key) {
    if constexpr (std::is_unsigned_v<V>) {
      if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) throw ConfigError("config key '" + key + "' must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    }
    target = typed<V>(v, key);
  };
}

inline Setter set_positive(double& target) {
  return [&target](const json& v, const std::string& key) {
    if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    target = typed<double>(v, key);
    if (!(target > 0)) throw ConfigError("config key '" + key + "' must be > 0");
  };
}

inline Setter set_nonneg(double& target) {
  return [&target](const json& v, const std::string& key) {
    if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    target = typed<double>(v, key);
    if (!(target >= 0)) throw ConfigError("config key '" + key + "' must be >= 0");
  };
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  using detail::set;
  using detail::Setter;
  using nlohmann::json;
  RunConfig rc;
  TrainConfig& t = rc.train;
  auto path_setter = [&base](std::optional<std::filesystem::path>& target) -> Setter {
    return [&target, &base](const json& v, const std::string& key) {
      target = base / detail::typed<std::string>(v, key);
    };
  };
  auto enum_setter = [](auto& target, auto parse) -> Setter {
    return [&target, parse](const json& v, const std::string& key) {
      try {
        target = parse(detail::typed<std::string>(v, key));
      } catch (const ConfigError& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
      }
    };
  };

  ReferenceSpec& syn = rc.synthesis;
  const std::map<std::string, Setter> synthesis_schema = {
      {"classes", set(syn.classes)},
      {"feature_dim", set(syn.feature_dim)},
      {"fpn_dim", set(syn.fpn_dim)},
      {"height", set(syn.height)},
      {"width", set(syn.width)},
      {"scene_count", set(syn.scene_count)},
      {"noise_sigma", detail::set_nonneg(syn.noise_sigma)},
      {"seed", set(syn.seed)},
      {"min_objects", set(syn.layout.min_objects)},
      {"max_objects", set(syn.layout.max_objects)},
      {"min_side", set(syn.layout.min_side)},
      {"max_side", set(syn.layout.max_side)},
  };

  const std::map<std::string, Setter> schema = {
      {"seed", set(t.seed)},
      {"steps", set(t.steps)},
      {"learning_rate", detail::set_positive(t.optimizer.learning_rate)},
      {"weight_decay", detail::set_nonneg(t.optimizer.weight_decay)},
      {"beta1", set(t.optimizer.beta1)},
      {"beta2", set(t.optimizer.beta2)},
      {"eps", detail::set_positive(t.optimizer.eps)},
      {"stages", set(t.stages)},
      {"kernels", set(t.kernels)},
      {"kernel_sigma", detail::set_positive(t.kernel_sigma)},
      {"strategy", enum_setter(t.strategy, parse_strategy)},
      {"strategies",
       [&rc](const json& v, const std::string& key) {
         rc.strategies.clear();
         for (const auto& s : detail::typed<std::vector<std::string>>(v, key)) {
           try {
             rc.strategies.push_back(parse_strategy(s));
           } catch (const ConfigError& e) {
             throw ConfigError("config key '" + key + "': " + e.what());
           }
         }
       }},
      {"lambda_cls", detail::set_nonneg(t.loss.weights.cls)},
      {"lambda_dice", detail::set_nonneg(t.loss.weights.dice)},
      {"lambda_ce", detail::set_nonneg(t.loss.weights.ce)},
      {"lambda_aux", detail::set_nonneg(t.loss.weights.aux)},
      {"focal_gamma", detail::set_nonneg(t.loss.focal_gamma)},
      {"focal_alpha", detail::set_nonneg(t.loss.focal_alpha)},
      {"dice_eps", detail::set_positive(t.loss.dice_eps)},
      {"norm_mode", enum_setter(t.proposals.mode, parse_norm_mode)},
      {"tau", set(t.proposals.tau)},
      {"min_area", set(t.proposals.min_area)},
      {"text_bank", path_setter(rc.text_bank)},
      {"scenes",
       [&rc, &base](const json& v, const std::string& key) {
         rc.scenes.clear();
         for (const auto& s : detail::typed<std::vector<std::string>>(v, key)) rc.scenes.push_back(base / s);
       }},
      {"checkpoint", path_setter(rc.checkpoint)},
      {"output_dir", path_setter(rc.output_dir)},
      {"synthesis", [&](const json& v, const std::string& key) { detail::apply(v, synthesis_schema, key); }},
      {"eval_source",
       [&rc](const json& v, const std::string& key) {
         rc.eval_source = detail::typed<std::string>(v, key);
         if (rc.eval_source != "proposals" && rc.eval_source != "model") {
           throw ConfigError("config key '" + key + "' must be \"proposals\" or \"model\"");
         }
       }},
      {"ap_interpolation",
       [&rc](const json& v, const std::string& key) {
         const auto s = detail::typed<std::string>(v, key);
         if (s == "all-point") {
           rc.ap_interpolation = ApInterpolation::kAllPoint;
         } else if (s == "101-point") {
           rc.ap_interpolation = ApInterpolation::kPoint101;
         } else {
           throw ConfigError("config key '" + key + "' must be \"all-point\" or \"101-point\"");
         }
       }},
  };
  detail::apply(j, schema, "");
  if (rc.synthesis.layout.min_objects > rc.synthesis.layout.max_objects) {
    throw ConfigError("config key 'synthesis.min_objects' exceeds 'synthesis.max_objects'");
  }
  if (!rc.scenes.empty() && !rc.text_bank) throw ConfigError("config key 'scenes' requires 'text_bank'");
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config not found: " + path.string());
  std::ifstream in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config is not valid JSON: " + path.string());
  }
  return parse_run_config(j, path.parent_path());
}

/// Fully resolved configuration, written next to every run's outputs.
inline nlohmann::json to_json(const RunConfig& rc) {
  nlohmann::json j = to_json(rc.train);
  // The train echo uses nested weights; the run config spells them flat.
  j.erase("loss_weights");
  j.erase("head");
  j.erase("batch_size");
  j.erase("supervision");
  j["lambda_cls"] = rc.train.loss.weights.cls;
  j["lambda_dice"] = rc.train.loss.weights.dice;
  j["lambda_ce"] = rc.train.loss.weights.ce;
  j["lambda_aux"] = rc.train.loss.weights.aux;
  std::vector<std::string> strategies;
  for (auto s : rc.strategies) strategies.emplace_back(strategy_name(s));
  j["strategies"] = strategies;
  if (rc.text_bank) j["text_bank"] = rc.text_bank->string();
  std::vector<std::string> scenes;
  for (const auto& s : rc.scenes) scenes.push_back(s.string());
  j["scenes"] = scenes;
  if (rc.checkpoint) j["checkpoint"] = rc.checkpoint->string();
  if (rc.output_dir) j["output_dir"] = rc.output_dir->string();
  const ReferenceSpec& s = rc.synthesis;
  j["synthesis"] = {{"classes", s.classes},         {"feature_dim", s.feature_dim},
                    {"fpn_dim", s.fpn_dim},         {"height", s.height},
                    {"width", s.width},             {"scene_count", s.scene_count},
                    {"noise_sigma", s.noise_sigma}, {"seed", s.seed},
                    {"min_objects", s.layout.min_objects}, {"max_objects", s.layout.max_objects},
                    {"min_side", s.layout.min_side},       {"max_side", s.layout.max_side}};
  j["eval_source"] = rc.eval_source;
  j["ap_interpolation"] = rc.ap_interpolation == ApInterpolation::kAllPoint ? "all-point" : "101-point";
  return j;
}

}  // namespace uplvp
