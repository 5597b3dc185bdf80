#pragma once

// Content hash of a fixture set (text bank plus scenes). The hash covers the
// canonical on-disk encoding, so a synthesized fixture and the same fixture
// reloaded from files hash identically.

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "uplvp/encoders.hpp"
#include "uplvp/hash.hpp"
#include "uplvp/pgm.hpp"
#include "uplvp/tensor_io.hpp"

namespace uplvp {

inline std::string fixture_hash(const TextBank& bank, const std::vector<Scene>& scenes) {
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> files;
  auto text = [](const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  files.emplace_back("bank.ten", io::encode_tensor(bank.embeddings));
  files.emplace_back("bank.names", text(nlohmann::json(bank.class_names).dump()));
  for (const Scene& s : scenes) {
    const std::string dir = s.id + "/";
    files.emplace_back(dir + "pixel_features.ten", io::encode_tensor(s.pixel_features));
    files.emplace_back(dir + "fpn_features.ten", io::encode_tensor(s.fpn_features));
    nlohmann::json labels = nlohmann::json::array();
    for (std::size_t k = 0; k < s.gt.size(); ++k) {
      files.emplace_back(dir + "gt_" + std::to_string(k) + ".pgm", pgm::encode(pgm::from_mask(s.gt[k].mask)));
      labels.push_back(s.gt[k].class_id);
    }
    files.emplace_back(dir + "labels", text(labels.dump() + " seed " + std::to_string(s.seed)));
  }
  return hash::tree_hash(std::move(files));
}

}  // namespace uplvp
