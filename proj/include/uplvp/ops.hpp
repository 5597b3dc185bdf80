#pragma once

// Value-level tensor kernels. Every function is pure: inputs are never
// modified. Reductions accumulate in double and round once at the end.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "uplvp/error.hpp"
#include "uplvp/geometry.hpp"
#include "uplvp/tensor.hpp"

namespace uplvp {

enum class NormMode { kL2, kMinMax };

inline const char* norm_mode_name(NormMode mode) {
  return mode == NormMode::kL2 ? "l2" : "minmax";
}

inline NormMode parse_norm_mode(const std::string& name) {
  if (name == "l2") return NormMode::kL2;
  if (name == "minmax") return NormMode::kMinMax;
  throw ConfigError("unknown norm mode: " + name);
}

namespace ops {

using Accum = double;

namespace detail {

/// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> out(Shape{m, n});
  std::vector<Accum> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), Accum{0});
    for (std::size_t p = 0; p < k; ++p) {
      const Accum av = a[i * k + p];
      if (av == 0) continue;
      const T* brow = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * static_cast<Accum>(brow[j]);
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<T>(row[j]);
  }
  return out;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_rank(a.shape(), 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  BasicTensor<T> out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

/// l2: unit Euclidean norm per slice along `axis`; zero slices stay zero.
/// minmax: affine map of each slice onto [0,1]; constant slices become 0.5.
template <typename T>
BasicTensor<T> normalize(const BasicTensor<T>& t, std::size_t axis, NormMode mode) {
  const auto s = detail::split_axis(t.shape(), axis);
  BasicTensor<T> out(t.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      auto idx = [&](std::size_t i) { return base + i * s.inner; };
      if (mode == NormMode::kL2) {
        Accum sq = 0;
        for (std::size_t i = 0; i < s.length; ++i) {
          const Accum v = t[idx(i)];
          sq += v * v;
        }
        const Accum norm = std::sqrt(sq);
        for (std::size_t i = 0; i < s.length; ++i) {
          out[idx(i)] = norm > 0 ? static_cast<T>(t[idx(i)] / norm) : T{0};
        }
      } else {
        if (s.length == 0) continue;
        T lo = t[idx(0)], hi = t[idx(0)];
        for (std::size_t i = 1; i < s.length; ++i) {
          lo = std::min(lo, t[idx(i)]);
          hi = std::max(hi, t[idx(i)]);
        }
        const Accum range = static_cast<Accum>(hi) - lo;
        for (std::size_t i = 0; i < s.length; ++i) {
          out[idx(i)] = range > 0 ? static_cast<T>((t[idx(i)] - Accum{lo}) / range)
                                  : static_cast<T>(0.5);
        }
      }
    }
  }
  return out;
}

template <typename T>
T sigmoid_scalar(T x) {
  // Branches keep exp() from overflowing for large |x|.
  if (x >= 0) {
    const T z = std::exp(-x);
    return T{1} / (T{1} + z);
  }
  const T z = std::exp(x);
  return z / (T{1} + z);
}

/// log(sigmoid(x)) without cancellation: min(x,0) - log1p(exp(-|x|)).
template <typename T>
T log_sigmoid_scalar(T x) {
  return std::min(x, T{0}) - std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& t) {
  BasicTensor<T> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = sigmoid_scalar(t[i]);
  return out;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& t, std::size_t axis) {
  const auto s = detail::split_axis(t.shape(), axis);
  BasicTensor<T> out(t.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      if (s.length == 0) continue;
      T mx = t[base];
      for (std::size_t i = 1; i < s.length; ++i) mx = std::max(mx, t[base + i * s.inner]);
      Accum total = 0;
      std::vector<Accum> e(s.length);
      for (std::size_t i = 0; i < s.length; ++i) {
        e[i] = std::exp(static_cast<Accum>(t[base + i * s.inner]) - mx);
        total += e[i];
      }
      for (std::size_t i = 0; i < s.length; ++i) {
        out[base + i * s.inner] = static_cast<T>(e[i] / total);
      }
    }
  }
  return out;
}

/// Per-channel mean of a D×H×W map over the pixels of `box`.
template <typename T>
BasicTensor<T> avg_pool_region(const BasicTensor<T>& map, const BBox& box) {
  require_rank(map.shape(), 3, "avg_pool_region");
  const std::size_t d = map.dim(0), h = map.dim(1), w = map.dim(2);
  require_box_in(box, h, w);
  BasicTensor<T> out(Shape{d});
  const Accum count = static_cast<Accum>(box.area());
  for (std::size_t c = 0; c < d; ++c) {
    Accum total = 0;
    for (std::size_t r = box.row_min; r <= box.row_max; ++r)
      for (std::size_t q = box.col_min; q <= box.col_max; ++q) total += map.at(c, r, q);
    out[c] = static_cast<T>(total / count);
  }
  return out;
}

/// Corner-aligned bilinear resize of an H×W map.
template <typename T>
BasicTensor<T> resize_bilinear(const BasicTensor<T>& mask, std::size_t out_h,
                               std::size_t out_w) {
  require_rank(mask.shape(), 2, "resize_bilinear");
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  if (h == 0 || w == 0 || out_h == 0 || out_w == 0) {
    throw DimensionError("resize_bilinear needs non-empty extents, got " +
                         shape_str(mask.shape()));
  }
  auto source = [](std::size_t i, std::size_t in, std::size_t out, std::size_t& lo,
                   Accum& frac) {
    const Accum pos = out > 1 ? static_cast<Accum>(i) * static_cast<Accum>(in - 1) /
                                    static_cast<Accum>(out - 1)
                              : 0.0;
    lo = std::min(static_cast<std::size_t>(std::floor(pos)), in - 1);
    frac = pos - static_cast<Accum>(lo);
  };
  BasicTensor<T> out(Shape{out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t r0;
    Accum fy;
    source(y, h, out_h, r0, fy);
    const std::size_t r1 = std::min(r0 + 1, h - 1);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t c0;
      Accum fx;
      source(x, w, out_w, c0, fx);
      const std::size_t c1 = std::min(c0 + 1, w - 1);
      if (fy == 0 && fx == 0) {
        out.at(y, x) = mask.at(r0, c0);
        continue;
      }
      const Accum top = mask.at(r0, c0) * (1 - fx) + mask.at(r0, c1) * fx;
      const Accum bottom = mask.at(r1, c0) * (1 - fx) + mask.at(r1, c1) * fx;
      out.at(y, x) = static_cast<T>(top * (1 - fy) + bottom * fy);
    }
  }
  return out;
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](T v) { return std::isfinite(v); });
}

}  // namespace ops
}  // namespace uplvp
