#pragma once

// Language-vision prompts: region features pooled under each proposal box,
// matched to kernels and added to them before the first mask prediction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "uplvp/error.hpp"
#include "uplvp/ops.hpp"
#include "uplvp/proposals.hpp"
#include "uplvp/tensor.hpp"

namespace uplvp {

struct PromptSet {
  Tensor vectors;                   // L×D'
  std::vector<std::size_t> source;  // proposal index per row

  std::size_t size() const { return source.size(); }
  bool empty() const { return source.empty(); }
};

enum class MatchStrategy { kNone, kCosine, kRandom, kSequential };

inline const char* strategy_name(MatchStrategy s) {
  switch (s) {
    case MatchStrategy::kNone: return "none";
    case MatchStrategy::kCosine: return "cosine";
    case MatchStrategy::kRandom: return "random";
    case MatchStrategy::kSequential: return "sequential";
  }
  return "?";
}

inline MatchStrategy parse_strategy(const std::string& name) {
  if (name == "none") return MatchStrategy::kNone;
  if (name == "cosine") return MatchStrategy::kCosine;
  if (name == "random") return MatchStrategy::kRandom;
  if (name == "sequential") return MatchStrategy::kSequential;
  throw ConfigError("unknown strategy: " + name);
}

struct MatchResult {
  Tensor similarity;                // N×L
  std::vector<std::size_t> chosen;  // empty when there is nothing to match

  bool skipped() const { return chosen.empty(); }
};

/// Row l = channel-wise mean of `f` (D'×H×W) inside proposal l's box.
inline PromptSet extract_prompts(const Tensor& f, const ProposalSet& props) {
  require_rank(f.shape(), 3, "extract_prompts");
  const std::size_t d = f.dim(0);
  PromptSet out{Tensor(Shape{props.size(), d}), {}};
  for (std::size_t l = 0; l < props.size(); ++l) {
    const Tensor pooled = ops::avg_pool_region(f, props[l].bbox);
    std::copy(pooled.data().begin(), pooled.data().end(), out.vectors.data().begin() + l * d);
    out.source.push_back(l);
  }
  return out;
}

/// Cosine similarity between every kernel row and every prompt row. Rows of
/// zero norm give similarity 0.
template <typename T>
BasicTensor<T> similarity_matrix(const BasicTensor<T>& kernels, const BasicTensor<T>& prompts) {
  require_rank(kernels.shape(), 2, "similarity_matrix kernels");
  require_rank(prompts.shape(), 2, "similarity_matrix prompts");
  if (kernels.dim(1) != prompts.dim(1)) {
    throw DimensionError("similarity_matrix width mismatch: " + shape_str(kernels.shape()) +
                         " vs " + shape_str(prompts.shape()));
  }
  BasicTensor<T> e = ops::matmul(ops::normalize(kernels, 1, NormMode::kL2),
                                 ops::transpose(ops::normalize(prompts, 1, NormMode::kL2)));
  for (T& v : e.data()) v = std::clamp(v, T{-1}, T{1});
  return e;
}

/// Prompt index per kernel. Returns an empty vector when there are no
/// prompts (L = 0) or the strategy is kNone; callers then skip injection.
template <typename T>
std::vector<std::size_t> match(const BasicTensor<T>& e, MatchStrategy strategy,
                               std::uint64_t seed = 0) {
  require_rank(e.shape(), 2, "match");
  const std::size_t n = e.dim(0), l = e.dim(1);
  std::vector<std::size_t> chosen;
  if (l == 0 || strategy == MatchStrategy::kNone) return chosen;
  chosen.resize(n);
  switch (strategy) {
    case MatchStrategy::kCosine:
      for (std::size_t k = 0; k < n; ++k) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < l; ++j) {
          if (e.at(k, j) > e.at(k, best)) best = j;  // strict: lowest index wins ties
        }
        chosen[k] = best;
      }
      break;
    case MatchStrategy::kSequential:
      for (std::size_t k = 0; k < n; ++k) chosen[k] = k % l;
      break;
    case MatchStrategy::kRandom: {
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<std::size_t> pick(0, l - 1);
      for (std::size_t k = 0; k < n; ++k) chosen[k] = pick(rng);
      break;
    }
    case MatchStrategy::kNone: break;
  }
  return chosen;
}

/// Gathers prompt rows by `chosen` into an N×D' offset; zeros when `chosen`
/// is empty.
template <typename T>
BasicTensor<T> gather_prompts(const BasicTensor<T>& prompts, std::span<const std::size_t> chosen,
                              std::size_t n, std::size_t width) {
  BasicTensor<T> offset(Shape{n, width});
  if (chosen.empty()) return offset;
  if (chosen.size() != n) {
    throw BoundsError("chosen has " + std::to_string(chosen.size()) + " entries for " +
                      std::to_string(n) + " kernels");
  }
  require_rank(prompts.shape(), 2, "gather_prompts");
  if (prompts.dim(1) != width) throw DimensionError("prompt width does not match kernels");
  for (std::size_t k = 0; k < n; ++k) {
    if (chosen[k] >= prompts.dim(0)) {
      throw BoundsError("prompt index " + std::to_string(chosen[k]) + " out of range for L=" +
                        std::to_string(prompts.dim(0)));
    }
    std::copy_n(prompts.data().begin() + chosen[k] * width, width,
                offset.data().begin() + k * width);
  }
  return offset;
}

/// kernels[n] + prompts[chosen[n]]; an empty `chosen` returns the kernels
/// unchanged.
template <typename T>
BasicTensor<T> inject(const BasicTensor<T>& kernels, const BasicTensor<T>& prompts,
                      std::span<const std::size_t> chosen) {
  require_rank(kernels.shape(), 2, "inject");
  const BasicTensor<T> offset = gather_prompts(prompts, chosen, kernels.dim(0), kernels.dim(1));
  BasicTensor<T> out = kernels;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += offset[i];
  return out;
}

/// Few-shot injection: adds the mean of one class's support features to
/// every kernel row.
inline Tensor inject_support(const Tensor& kernels, std::span<const Tensor> support) {
  require_rank(kernels.shape(), 2, "inject_support");
  if (support.empty()) throw ContractError("inject_support needs at least one support feature");
  const std::size_t width = kernels.dim(1);
  std::vector<double> mean(width, 0.0);
  for (const Tensor& s : support) {
    if (s.size() != width) {
      throw DimensionError("support feature " + shape_str(s.shape()) + " vs kernel width " +
                           std::to_string(width));
    }
    for (std::size_t i = 0; i < width; ++i) mean[i] += s[i];
  }
  for (double& m : mean) m /= static_cast<double>(support.size());
  Tensor out = kernels;
  for (std::size_t r = 0; r < kernels.dim(0); ++r)
    for (std::size_t i = 0; i < width; ++i)
      out.at(r, i) = static_cast<float>(kernels.at(r, i) + mean[i]);
  return out;
}

/// One injected kernel bank per episode class.
inline std::vector<Tensor> inject_support_episode(const Tensor& kernels,
                                                  const std::vector<std::vector<Tensor>>& per_class) {
  std::vector<Tensor> out;
  out.reserve(per_class.size());
  for (const auto& support : per_class) out.push_back(inject_support(kernels, support));
  return out;
}

}  // namespace uplvp
