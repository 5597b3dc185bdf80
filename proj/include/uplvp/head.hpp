#pragma once

// Kernel prediction head. Masks are 1×1 dynamic convolutions of kernels with
// the feature map; each stage groups features under the current masks and
// blends them into the kernels through a sigmoid gate:
//
//   x  = sum_p sigmoid(m_np) f_p / (sum_p sigmoid(m_np) + 1e-6)
//   g  = sigmoid(psi1(phi1(k) + phi2(x)))
//   k' = g * psi3(x) + (1 - g) * psi4(k)
//
// This is a reduced form of the K-Net update (no kernel self-attention or
// FFN); reports tag it "head=simplified-v1".

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "uplvp/autograd.hpp"
#include "uplvp/error.hpp"
#include "uplvp/tensor.hpp"

namespace uplvp {

inline constexpr const char* kHeadVersion = "simplified-v1";
inline constexpr double kGroupEps = 1e-6;

struct HeadConfig {
  std::size_t kernels = 8;    // N
  std::size_t width = 16;     // D'
  std::size_t classes = 4;    // C; the classifier emits C+1 logits
  std::size_t text_dim = 16;  // D, width of the class embeddings
  std::size_t stages = 3;     // S
  double kernel_sigma = 0.01;
};

template <typename T>
struct StageParams {
  BasicTensor<T> phi1, phi2;  // D'×D', no bias
  BasicTensor<T> psi_w[4];    // D'×D'
  BasicTensor<T> psi_b[4];    // 1×D'
  BasicTensor<T> cls_w;       // D'×(C+1)
  BasicTensor<T> cls_b;       // 1×(C+1)
};

template <typename T>
struct HeadParams {
  BasicTensor<T> base_kernels;  // N×D'
  std::vector<StageParams<T>> stages;
  BasicTensor<T> aux_proj;  // D'×D, maps final kernels into text space

  std::size_t kernels() const { return base_kernels.dim(0); }
  std::size_t width() const { return base_kernels.dim(1); }
  std::size_t classes() const { return stages.front().cls_w.dim(1) - 1; }
  std::size_t text_dim() const { return aux_proj.dim(1); }

  /// Visits every tensor in a fixed order with a stable name.
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  template <typename U>
  HeadParams<U> cast() const {
    HeadParams<U> out;
    out.base_kernels = base_kernels.template cast<U>();
    out.aux_proj = aux_proj.template cast<U>();
    for (const auto& st : stages) {
      StageParams<U> s;
      s.phi1 = st.phi1.template cast<U>();
      s.phi2 = st.phi2.template cast<U>();
      for (int i = 0; i < 4; ++i) {
        s.psi_w[i] = st.psi_w[i].template cast<U>();
        s.psi_b[i] = st.psi_b[i].template cast<U>();
      }
      s.cls_w = st.cls_w.template cast<U>();
      s.cls_b = st.cls_b.template cast<U>();
      out.stages.push_back(std::move(s));
    }
    return out;
  }

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn& fn) {
    fn(std::string("base_kernels"), self.base_kernels);
    for (std::size_t s = 0; s < self.stages.size(); ++s) {
      const std::string p = "stage" + std::to_string(s) + ".";
      auto& st = self.stages[s];
      fn(p + "phi1", st.phi1);
      fn(p + "phi2", st.phi2);
      for (int i = 0; i < 4; ++i) {
        fn(p + "psi" + std::to_string(i + 1) + ".weight", st.psi_w[i]);
        fn(p + "psi" + std::to_string(i + 1) + ".bias", st.psi_b[i]);
      }
      fn(p + "cls.weight", st.cls_w);
      fn(p + "cls.bias", st.cls_b);
    }
    fn(std::string("aux_proj"), self.aux_proj);
  }
};

/// Seeded initialisation. Base kernels ~ N(0, kernel_sigma^2); gate maps
/// ~ N(0, 1/D'); the value maps psi3/psi4 start at the identity plus small
/// noise; biases start at zero.
template <typename T = float>
HeadParams<T> init_head(const HeadConfig& cfg, std::uint64_t seed) {
  if (cfg.kernels < 1 || cfg.width < 1 || cfg.stages < 1 || cfg.classes < 1) {
    throw ConfigError("head needs N, D', S and C of at least 1");
  }
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.width;
  auto gaussian = [&](Shape shape, double sigma) {
    std::normal_distribution<double> dist(0.0, sigma);
    BasicTensor<T> t(std::move(shape));
    for (T& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
  };
  const double fan = 1.0 / std::sqrt(static_cast<double>(d));
  HeadParams<T> p;
  p.base_kernels = gaussian({cfg.kernels, d}, cfg.kernel_sigma);
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    StageParams<T> st;
    st.phi1 = gaussian({d, d}, fan);
    st.phi2 = gaussian({d, d}, fan);
    for (int i = 0; i < 4; ++i) {
      st.psi_w[i] = gaussian({d, d}, i < 2 ? fan : 0.01);
      if (i >= 2) {
        for (std::size_t j = 0; j < d; ++j) st.psi_w[i].at(j, j) += T{1};
      }
      st.psi_b[i] = BasicTensor<T>(Shape{1, d});
    }
    st.cls_w = gaussian({d, cfg.classes + 1}, fan);
    st.cls_b = BasicTensor<T>(Shape{1, cfg.classes + 1});
    p.stages.push_back(std::move(st));
  }
  p.aux_proj = gaussian({d, cfg.text_dim}, fan);
  return p;
}

// ---- tape bindings ----------------------------------------------------------

template <typename T>
struct StageVars {
  ag::Var<T> phi1, phi2;
  ag::Var<T> psi_w[4], psi_b[4];
  ag::Var<T> cls_w, cls_b;
};

template <typename T>
struct HeadVars {
  ag::Var<T> base_kernels;
  std::vector<StageVars<T>> stages;
  ag::Var<T> aux_proj;
};

/// Puts the parameters on `tape` as parameters (trainable) or constants.
template <typename T>
HeadVars<T> bind(ag::Tape<T>& tape, const HeadParams<T>& p, bool trainable = true) {
  auto put = [&](const BasicTensor<T>& t) { return trainable ? tape.parameter(t) : tape.constant(t); };
  HeadVars<T> v;
  v.base_kernels = put(p.base_kernels);
  for (const auto& st : p.stages) {
    StageVars<T> sv;
    sv.phi1 = put(st.phi1);
    sv.phi2 = put(st.phi2);
    for (int i = 0; i < 4; ++i) {
      sv.psi_w[i] = put(st.psi_w[i]);
      sv.psi_b[i] = put(st.psi_b[i]);
    }
    sv.cls_w = put(st.cls_w);
    sv.cls_b = put(st.cls_b);
    v.stages.push_back(sv);
  }
  v.aux_proj = put(p.aux_proj);
  return v;
}

/// Gradients for every bound parameter, in HeadParams layout.
template <typename T>
HeadParams<T> collect_grads(const ag::Tape<T>& tape, const HeadVars<T>& v) {
  HeadParams<T> g;
  g.base_kernels = tape.grad(v.base_kernels);
  for (const auto& sv : v.stages) {
    StageParams<T> st;
    st.phi1 = tape.grad(sv.phi1);
    st.phi2 = tape.grad(sv.phi2);
    for (int i = 0; i < 4; ++i) {
      st.psi_w[i] = tape.grad(sv.psi_w[i]);
      st.psi_b[i] = tape.grad(sv.psi_b[i]);
    }
    st.cls_w = tape.grad(sv.cls_w);
    st.cls_b = tape.grad(sv.cls_b);
    g.stages.push_back(std::move(st));
  }
  g.aux_proj = tape.grad(v.aux_proj);
  return g;
}

/// Feature map flattened two ways for the 1×1 convolutions below.
template <typename T>
struct FeatureVars {
  ag::Var<T> channels_by_pixels;  // D'×HW
  ag::Var<T> pixels_by_channels;  // HW×D'
  std::size_t height = 0;
  std::size_t width = 0;
};

template <typename T>
FeatureVars<T> bind_features(ag::Tape<T>& tape, const BasicTensor<T>& f) {
  require_rank(f.shape(), 3, "feature map");
  const std::size_t d = f.dim(0), h = f.dim(1), w = f.dim(2);
  const BasicTensor<T> flat = f.reshaped({d, h * w});
  return {tape.constant(flat), tape.constant(ops::transpose(flat)), h, w};
}

/// Output of one stage while still on the tape. Mask logits are N×HW.
template <typename T>
struct StageVarsOut {
  ag::Var<T> kernels;
  ag::Var<T> mask_logits;
  ag::Var<T> class_logits;
};

template <typename T>
ag::Var<T> predict_masks(ag::Var<T> kernels, const FeatureVars<T>& f) {
  if (kernels.shape().size() != 2 || kernels.shape()[1] != f.channels_by_pixels.shape()[0]) {
    throw DimensionError("predict_masks width mismatch: kernels " + shape_str(kernels.shape()) +
                         " vs features " + shape_str(f.channels_by_pixels.shape()));
  }
  return ag::matmul(kernels, f.channels_by_pixels);
}

template <typename T>
ag::Var<T> group_features(ag::Var<T> mask_logits, const FeatureVars<T>& f) {
  const auto weights = ag::sigmoid(mask_logits);
  const auto pooled = ag::matmul(weights, f.pixels_by_channels);
  const auto norm = ag::power(ag::add_scalar(ag::sum_rows(weights), kGroupEps), -1.0);
  return ag::mul(pooled, norm);
}

template <typename T>
StageVarsOut<T> update_stage(ag::Var<T> kernels, ag::Var<T> mask_logits, const FeatureVars<T>& f,
                             const StageVars<T>& p) {
  using namespace ag;
  const auto x = group_features(mask_logits, f);
  const auto gate_in = add(matmul(kernels, p.phi1), matmul(x, p.phi2));
  const auto gate = sigmoid(linear(gate_in, p.psi_w[0], p.psi_b[0]));
  const auto from_x = linear(x, p.psi_w[2], p.psi_b[2]);
  const auto from_k = linear(kernels, p.psi_w[3], p.psi_b[3]);
  // g*a + (1-g)*b == b + g*(a-b)
  const auto next = add(from_k, mul(gate, sub(from_x, from_k)));
  return {next, predict_masks(next, f), linear(next, p.cls_w, p.cls_b)};
}

/// Runs all stages. `prompt_offset`, when present, is the N×D' matrix of
/// matched prompts added to the base kernels; it is a constant on the tape.
template <typename T>
std::vector<StageVarsOut<T>> forward(ag::Tape<T>& tape, const HeadVars<T>& v,
                                     const FeatureVars<T>& f,
                                     const std::optional<BasicTensor<T>>& prompt_offset,
                                     std::size_t stages) {
  if (stages < 1) throw ConfigError("forward needs at least one stage");
  if (stages > v.stages.size()) {
    throw ConfigError("forward asked for " + std::to_string(stages) + " stages, head has " +
                      std::to_string(v.stages.size()));
  }
  ag::Var<T> kernels = v.base_kernels;
  if (prompt_offset) kernels = ag::add(kernels, tape.constant(*prompt_offset));
  ag::Var<T> masks = predict_masks(kernels, f);
  std::vector<StageVarsOut<T>> out;
  for (std::size_t s = 0; s < stages; ++s) {
    out.push_back(update_stage(kernels, masks, f, v.stages[s]));
    kernels = out.back().kernels;
    masks = out.back().mask_logits;
  }
  return out;
}

// ---- value-level API ---------------------------------------------------------

template <typename T>
struct StageOutput {
  BasicTensor<T> kernels;       // N×D'
  BasicTensor<T> mask_logits;   // N×H×W, pre-sigmoid
  BasicTensor<T> class_logits;  // N×(C+1)
};

template <typename T>
StageOutput<T> materialize(const StageVarsOut<T>& s, std::size_t h, std::size_t w) {
  const auto& m = s.mask_logits.value();
  return {s.kernels.value(), m.reshaped({m.dim(0), h, w}), s.class_logits.value()};
}

/// N×H×W mask logits of kernels (N×D') against features (D'×H×W).
template <typename T>
BasicTensor<T> predict_masks(const BasicTensor<T>& kernels, const BasicTensor<T>& f) {
  ag::Tape<T> tape;
  const auto fv = bind_features(tape, f);
  const auto m = predict_masks(tape.constant(kernels), fv).value();
  return m.reshaped({kernels.dim(0), fv.height, fv.width});
}

template <typename T>
BasicTensor<T> group_features(const BasicTensor<T>& mask_logits, const BasicTensor<T>& f) {
  require_rank(mask_logits.shape(), 3, "group_features masks");
  ag::Tape<T> tape;
  const auto fv = bind_features(tape, f);
  const auto m = tape.constant(mask_logits.reshaped({mask_logits.dim(0), fv.height * fv.width}));
  return group_features(m, fv).value();
}

template <typename T>
StageOutput<T> update_stage(const BasicTensor<T>& kernels, const BasicTensor<T>& mask_logits,
                            const BasicTensor<T>& f, const StageParams<T>& params) {
  ag::Tape<T> tape;
  const auto fv = bind_features(tape, f);
  HeadParams<T> holder;
  holder.base_kernels = kernels;
  holder.stages = {params};
  holder.aux_proj = BasicTensor<T>(Shape{kernels.dim(1), 1});
  const auto v = bind(tape, holder, false);
  const auto m = tape.constant(mask_logits.reshaped({mask_logits.dim(0), fv.height * fv.width}));
  return materialize(update_stage(v.base_kernels, m, fv, v.stages[0]), fv.height, fv.width);
}

template <typename T>
std::vector<StageOutput<T>> forward(const HeadParams<T>& params, const BasicTensor<T>& f,
                                    const std::optional<BasicTensor<T>>& prompt_offset,
                                    std::size_t stages) {
  ag::Tape<T> tape;
  const auto fv = bind_features(tape, f);
  const auto v = bind(tape, params, false);
  std::vector<StageOutput<T>> out;
  for (const auto& s : forward(tape, v, fv, prompt_offset, stages)) {
    out.push_back(materialize(s, fv.height, fv.width));
  }
  return out;
}

}  // namespace uplvp
