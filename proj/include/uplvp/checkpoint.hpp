#pragma once

// Checkpoints: all head tensors concatenated as ".ten" records in
// checkpoint.ten, indexed by checkpoint.json (name, offset, length, shape)
// together with an echo of the run configuration.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "json.hpp"
#include "uplvp/error.hpp"
#include "uplvp/head.hpp"
#include "uplvp/tensor_io.hpp"

namespace uplvp {

inline void save_checkpoint(const std::filesystem::path& dir, const HeadParams<float>& params,
                            const nlohmann::json& config_echo) {
  std::filesystem::create_directories(dir);
  io::Bytes blob;
  nlohmann::json index = nlohmann::json::array();
  params.for_each([&](const std::string& name, const Tensor& t) {
    const io::Bytes rec = io::encode_tensor(t);
    index.push_back({{"name", name}, {"offset", blob.size()}, {"length", rec.size()}, {"shape", t.shape()}});
    blob.insert(blob.end(), rec.begin(), rec.end());
  });
  io::write_bytes(dir / "checkpoint.ten", blob);
  nlohmann::json j;
  j["data"] = "checkpoint.ten";
  j["head"] = kHeadVersion;
  j["tensors"] = index;
  j["config"] = config_echo;
  std::ofstream(dir / "checkpoint.json") << j.dump(2) << '\n';
}

/// Loads a checkpoint from its JSON index (or the directory holding it).
inline HeadParams<float> load_checkpoint(std::filesystem::path path) {
  if (std::filesystem::is_directory(path)) path /= "checkpoint.json";
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open checkpoint index " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("malformed checkpoint index " + path.string() + ": " + e.what());
  }
  const io::Bytes blob = io::read_bytes(path.parent_path() / j.at("data").get<std::string>());
  std::map<std::string, Tensor> by_name;
  std::size_t stages = 0;
  for (const auto& e : j.at("tensors")) {
    std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t start = offset;
    Tensor t = io::decode_tensor(blob, offset);
    if (offset - start != e.at("length").get<std::size_t>() ||
        t.shape() != e.at("shape").get<Shape>()) {
      throw ManifestError("checkpoint entry " + e.at("name").get<std::string>() +
                          " disagrees with its index");
    }
    const auto name = e.at("name").get<std::string>();
    if (name.ends_with(".phi1")) ++stages;
    by_name.emplace(name, std::move(t));
  }
  HeadParams<float> params;
  params.stages.resize(stages);
  params.for_each([&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ManifestError("checkpoint missing tensor " + name);
    t = std::move(it->second);
  });
  return params;
}

}  // namespace uplvp
