#pragma once

// Reverse-mode differentiation over a closed set of tensor operations.
//
// A Tape owns every node it records. Ops evaluate eagerly and append a node;
// backward() walks the nodes in reverse creation order. Leaves are either
// parameters (gradient requested) or constants. Operations outside the
// closed set can be recorded as opaque nodes, which carry a value but reject
// differentiation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "uplvp/error.hpp"
#include "uplvp/geometry.hpp"
#include "uplvp/ops.hpp"
#include "uplvp/tensor.hpp"

namespace uplvp::ag {

enum class Op {
  kLeaf,
  kMatMul,
  kAdd,
  kMul,
  kSigmoid,
  kLogSigmoid,
  kSoftmax,
  kNormalizeL2,
  kAvgPool,
  kSum,
  kMean,
  kSumRows,
  kLog,
  kPower,
  kReshape,
  kTranspose,
  kGatherRows,
  kGatherElements,
  kOpaque,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kSigmoid: return "sigmoid";
    case Op::kLogSigmoid: return "log_sigmoid";
    case Op::kSoftmax: return "softmax";
    case Op::kNormalizeL2: return "normalize_l2";
    case Op::kAvgPool: return "avg_pool";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSumRows: return "sum_rows";
    case Op::kLog: return "log";
    case Op::kPower: return "power";
    case Op::kReshape: return "reshape";
    case Op::kTranspose: return "transpose";
    case Op::kGatherRows: return "gather_rows";
    case Op::kGatherElements: return "gather_elements";
    case Op::kOpaque: return "opaque";
  }
  return "?";
}

/// Lower clamp applied inside log() so that probabilities that underflow to
/// zero produce a finite loss. The gradient is zero where the clamp is active.
inline constexpr double kLogClamp = 1e-7;

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

namespace detail {

/// Maps flat indices of `a` onto the broadcast operand `b`. Supported:
/// equal shapes, single-element b, and row/column vectors against a matrix.
inline std::size_t broadcast_index(const Shape& a, const Shape& b, std::size_t i) {
  if (a == b) return i;
  if (shape_numel(b) == 1) return 0;
  if (a.size() == 2 && b.size() == 2) {
    if (b[0] == 1 && b[1] == a[1]) return i % a[1];
    if (b[1] == 1 && b[0] == a[0]) return i / a[1];
  }
  return static_cast<std::size_t>(-1);
}

inline void check_broadcast(const Shape& a, const Shape& b, const char* what) {
  const bool ok = a == b || shape_numel(b) == 1 ||
                  (a.size() == 2 && b.size() == 2 &&
                   ((b[0] == 1 && b[1] == a[1]) || (b[1] == 1 && b[0] == a[0])));
  if (!ok) {
    throw DimensionError(std::string(what) + ": cannot broadcast " + shape_str(b) +
                         " onto " + shape_str(a));
  }
}

}  // namespace detail

template <typename T>
class Tape {
 public:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<std::size_t> inputs;
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    // Op attributes; only the fields an op needs are meaningful.
    std::size_t axis = 0;
    double exponent = 1.0;
    BBox box{};
    Shape shape{};
    std::vector<std::size_t> indices{};
    std::vector<std::pair<std::size_t, std::size_t>> elements{};
    std::string label{};
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> parameter(BasicTensor<T> value) { return leaf(std::move(value), true); }
  Var<T> constant(BasicTensor<T> value) { return leaf(std::move(value), false); }

  const BasicTensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  const Node& node(Var<T> v) const { return nodes_.at(v.id); }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward() target w.r.t. `v`; zeros if unreached.
  BasicTensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : BasicTensor<T>(n.value.shape());
  }

  /// Replaces a leaf value; call replay() to refresh downstream nodes.
  void set_leaf(Var<T> v, BasicTensor<T> value) {
    Node& n = nodes_.at(v.id);
    if (n.op != Op::kLeaf) throw ContractError("set_leaf on non-leaf node");
    if (value.shape() != n.value.shape()) {
      throw DimensionError("set_leaf shape " + shape_str(value.shape()) + " != " +
                           shape_str(n.value.shape()));
    }
    n.value = std::move(value);
  }

  /// Re-evaluates every recorded op from current leaf values, in order.
  void replay() {
    for (Node& n : nodes_) {
      if (n.op == Op::kLeaf || n.op == Op::kOpaque) continue;
      n.value = evaluate(n);
    }
  }

  Var<T> record(Node node) {
    for (std::size_t in : node.inputs) {
      if (in >= nodes_.size()) throw ContractError("tape input out of range");
      node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    if (node.op != Op::kOpaque) node.value = evaluate(node);
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

  /// Records a value computed outside the closed op set. Differentiating
  /// through it raises UnsupportedOpError.
  Var<T> opaque(BasicTensor<T> value, std::vector<Var<T>> inputs, std::string label) {
    Node n;
    n.op = Op::kOpaque;
    n.value = std::move(value);
    n.label = std::move(label);
    for (auto v : inputs) n.inputs.push_back(v.id);
    return record(std::move(n));
  }

  void backward(Var<T> loss) {
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) {
      throw ContractError("backward target must be a scalar, got shape " +
                          shape_str(root.value.shape()));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = BasicTensor<T>();
    }
    root.grad = BasicTensor<T>(root.value.shape(), T{1});
    root.has_grad = true;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.requires_grad || n.op == Op::kLeaf) continue;
      propagate(n);
    }
  }

 private:
  std::vector<Node> nodes_;

  Var<T> leaf(BasicTensor<T> value, bool requires_grad) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  const BasicTensor<T>& in(const Node& n, std::size_t k) const {
    return nodes_[n.inputs[k]].value;
  }

  BasicTensor<T> evaluate(const Node& n) const {
    switch (n.op) {
      case Op::kMatMul: return ops::matmul(in(n, 0), in(n, 1));
      case Op::kAdd:
      case Op::kMul: {
        const auto& a = in(n, 0);
        const auto& b = in(n, 1);
        detail::check_broadcast(a.shape(), b.shape(), op_name(n.op));
        BasicTensor<T> out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) {
          const T bv = b[detail::broadcast_index(a.shape(), b.shape(), i)];
          out[i] = n.op == Op::kAdd ? a[i] + bv : a[i] * bv;
        }
        return out;
      }
      case Op::kSigmoid: return ops::sigmoid(in(n, 0));
      case Op::kLogSigmoid: {
        const auto& a = in(n, 0);
        BasicTensor<T> out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = ops::log_sigmoid_scalar(a[i]);
        return out;
      }
      case Op::kSoftmax: return ops::softmax(in(n, 0), n.axis);
      case Op::kNormalizeL2: return ops::normalize(in(n, 0), n.axis, NormMode::kL2);
      case Op::kAvgPool: return ops::avg_pool_region(in(n, 0), n.box);
      case Op::kSum:
      case Op::kMean: {
        const auto& a = in(n, 0);
        ops::Accum total = 0;
        for (T v : a.data()) total += v;
        if (n.op == Op::kMean) {
          if (a.size() == 0) throw ContractError("mean of empty tensor");
          total /= static_cast<ops::Accum>(a.size());
        }
        return BasicTensor<T>::scalar(static_cast<T>(total));
      }
      case Op::kSumRows: {
        const auto& a = in(n, 0);
        require_rank(a.shape(), 2, "sum_rows");
        const std::size_t m = a.dim(0), k = a.dim(1);
        BasicTensor<T> out(Shape{m, 1});
        for (std::size_t r = 0; r < m; ++r) {
          ops::Accum total = 0;
          for (std::size_t c = 0; c < k; ++c) total += a[r * k + c];
          out[r] = static_cast<T>(total);
        }
        return out;
      }
      case Op::kLog: {
        const auto& a = in(n, 0);
        BasicTensor<T> out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) {
          out[i] = static_cast<T>(std::log(std::max<double>(a[i], kLogClamp)));
        }
        return out;
      }
      case Op::kPower: {
        const auto& a = in(n, 0);
        BasicTensor<T> out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) {
          out[i] = static_cast<T>(std::pow(static_cast<double>(a[i]), n.exponent));
        }
        return out;
      }
      case Op::kReshape: return in(n, 0).reshaped(n.shape);
      case Op::kTranspose: return ops::transpose(in(n, 0));
      case Op::kGatherRows: {
        const auto& a = in(n, 0);
        require_rank(a.shape(), 2, "gather_rows");
        const std::size_t cols = a.dim(1);
        BasicTensor<T> out(Shape{n.indices.size(), cols});
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
          if (n.indices[r] >= a.dim(0)) throw BoundsError("gather_rows index out of range");
          std::copy_n(a.data().begin() + n.indices[r] * cols, cols,
                      out.data().begin() + r * cols);
        }
        return out;
      }
      case Op::kGatherElements: {
        const auto& a = in(n, 0);
        require_rank(a.shape(), 2, "gather_elements");
        BasicTensor<T> out(Shape{n.elements.size()});
        for (std::size_t i = 0; i < n.elements.size(); ++i) {
          const auto [r, c] = n.elements[i];
          if (r >= a.dim(0) || c >= a.dim(1)) {
            throw BoundsError("gather_elements index out of range");
          }
          out[i] = a.at(r, c);
        }
        return out;
      }
      case Op::kLeaf:
      case Op::kOpaque: break;
    }
    throw UnsupportedOpError(std::string("cannot evaluate op ") + op_name(n.op));
  }

  void accumulate(std::size_t id, const BasicTensor<T>& g) {
    Node& target = nodes_[id];
    if (!target.requires_grad) return;
    if (!target.has_grad) {
      target.grad = g;
      target.has_grad = true;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) target.grad[i] += g[i];
  }

  void propagate(const Node& n) {
    const BasicTensor<T>& g = n.grad;
    switch (n.op) {
      case Op::kMatMul: {
        const auto& a = in(n, 0);
        const auto& b = in(n, 1);
        if (nodes_[n.inputs[0]].requires_grad)
          accumulate(n.inputs[0], ops::matmul(g, ops::transpose(b)));
        if (nodes_[n.inputs[1]].requires_grad)
          accumulate(n.inputs[1], ops::matmul(ops::transpose(a), g));
        return;
      }
      case Op::kAdd:
      case Op::kMul: {
        const auto& a = in(n, 0);
        const auto& b = in(n, 1);
        if (nodes_[n.inputs[0]].requires_grad) {
          BasicTensor<T> ga(a.shape());
          for (std::size_t i = 0; i < a.size(); ++i) {
            ga[i] = n.op == Op::kAdd
                        ? g[i]
                        : g[i] * b[detail::broadcast_index(a.shape(), b.shape(), i)];
          }
          accumulate(n.inputs[0], ga);
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          std::vector<ops::Accum> acc(b.size(), 0.0);
          for (std::size_t i = 0; i < a.size(); ++i) {
            const std::size_t j = detail::broadcast_index(a.shape(), b.shape(), i);
            acc[j] += n.op == Op::kAdd ? static_cast<ops::Accum>(g[i])
                                       : static_cast<ops::Accum>(g[i]) * a[i];
          }
          BasicTensor<T> gb(b.shape());
          for (std::size_t j = 0; j < b.size(); ++j) gb[j] = static_cast<T>(acc[j]);
          accumulate(n.inputs[1], gb);
        }
        return;
      }
      case Op::kSigmoid: {
        BasicTensor<T> ga(n.value.shape());
        for (std::size_t i = 0; i < ga.size(); ++i) {
          ga[i] = g[i] * n.value[i] * (T{1} - n.value[i]);
        }
        accumulate(n.inputs[0], ga);
        return;
      }
      case Op::kLogSigmoid: {
        const auto& a = in(n, 0);
        BasicTensor<T> ga(a.shape());
        for (std::size_t i = 0; i < ga.size(); ++i) {
          ga[i] = g[i] * ops::sigmoid_scalar(-a[i]);
        }
        accumulate(n.inputs[0], ga);
        return;
      }
      case Op::kSoftmax: {
        // dx = y * (g - <g, y>) per slice.
        const auto s = ops::detail::split_axis(n.value.shape(), n.axis);
        BasicTensor<T> ga(n.value.shape());
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t inner = 0; inner < s.inner; ++inner) {
            const std::size_t base = o * s.length * s.inner + inner;
            ops::Accum dot = 0;
            for (std::size_t i = 0; i < s.length; ++i) {
              dot += static_cast<ops::Accum>(g[base + i * s.inner]) * n.value[base + i * s.inner];
            }
            for (std::size_t i = 0; i < s.length; ++i) {
              const std::size_t k = base + i * s.inner;
              ga[k] = static_cast<T>(n.value[k] * (g[k] - dot));
            }
          }
        }
        accumulate(n.inputs[0], ga);
        return;
      }
      case Op::kNormalizeL2: {
        // dx = (g - y <g, y>) / |x| per slice; zero slices pass no gradient.
        const auto& a = in(n, 0);
        const auto s = ops::detail::split_axis(a.shape(), n.axis);
        BasicTensor<T> ga(a.shape());
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t inner = 0; inner < s.inner; ++inner) {
            const std::size_t base = o * s.length * s.inner + inner;
            ops::Accum sq = 0, dot = 0;
            for (std::size_t i = 0; i < s.length; ++i) {
              const std::size_t k = base + i * s.inner;
              sq += static_cast<ops::Accum>(a[k]) * a[k];
              dot += static_cast<ops::Accum>(g[k]) * n.value[k];
            }
            const ops::Accum norm = std::sqrt(sq);
            for (std::size_t i = 0; i < s.length; ++i) {
              const std::size_t k = base + i * s.inner;
              ga[k] = norm > 0 ? static_cast<T>((g[k] - n.value[k] * dot) / norm) : T{0};
            }
          }
        }
        accumulate(n.inputs[0], ga);
        return;
      }
      case Op::kAvgPool: {
        const auto& a = in(n, 0);
        BasicTensor<T> ga(a.shape());
        const T inv = static_cast<T>(1.0 / static_cast<double>(n.box.area()));
        for (std::size_t c = 0; c < a.dim(0); ++c)
          for (std::size_t r = n.box.row_min; r <= n.box.row_max; ++r)
            for (std::size_t q = n.box.col_min; q <= n.box.col_max; ++q)
              ga.at(c, r, q) = g[c] * inv;
        accumulate(n.inputs[0], ga);
        return;
      }
      case Op::kSum:
      case Op::kMean: {
        const auto& a = in(n, 0);
        const T scale = n.op == Op::kSum ? g[0] : static_cast<T>(g[0] / static_cast<double>(a.size()));
        accumulate(n.inputs[0], BasicTensor<T>(a.shape(), scale));
        return;
      }
      case Op::kSumRows: {
        const auto& a = in(n, 0);
        BasicTensor<T> ga(a.shape());
        const std::size_t k = a.dim(1);
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] = g[i / k];
        accumulate(n.inputs[0], ga);
        return;
      }
      case Op::kLog: {
        const auto& a = in(n, 0);
        BasicTensor<T> ga(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) {
          ga[i] = a[i] > kLogClamp ? g[i] / a[i] : T{0};
        }
        accumulate(n.inputs[0], ga);
        return;
      }
      case Op::kPower: {
        const auto& a = in(n, 0);
        BasicTensor<T> ga(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) {
          ga[i] = static_cast<T>(g[i] * n.exponent *
                                 std::pow(static_cast<double>(a[i]), n.exponent - 1.0));
        }
        accumulate(n.inputs[0], ga);
        return;
      }
      case Op::kReshape:
        accumulate(n.inputs[0], g.reshaped(in(n, 0).shape()));
        return;
      case Op::kTranspose:
        accumulate(n.inputs[0], ops::transpose(g));
        return;
      case Op::kGatherRows: {
        const auto& a = in(n, 0);
        BasicTensor<T> ga(a.shape());
        const std::size_t cols = a.dim(1);
        for (std::size_t r = 0; r < n.indices.size(); ++r)
          for (std::size_t c = 0; c < cols; ++c) ga[n.indices[r] * cols + c] += g[r * cols + c];
        accumulate(n.inputs[0], ga);
        return;
      }
      case Op::kGatherElements: {
        const auto& a = in(n, 0);
        BasicTensor<T> ga(a.shape());
        for (std::size_t i = 0; i < n.elements.size(); ++i) {
          ga.at(n.elements[i].first, n.elements[i].second) += g[i];
        }
        accumulate(n.inputs[0], ga);
        return;
      }
      case Op::kOpaque:
        throw UnsupportedOpError("cannot differentiate through op '" + n.label + "'");
      case Op::kLeaf: return;
    }
    throw UnsupportedOpError(std::string("cannot differentiate op ") + op_name(n.op));
  }
};

// ---- op constructors -------------------------------------------------------

namespace detail {

template <typename T>
typename Tape<T>::Node make(Op op, std::initializer_list<Var<T>> inputs) {
  typename Tape<T>::Node n;
  n.op = op;
  for (auto v : inputs) n.inputs.push_back(v.id);
  return n;
}

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
  return *a.tape;
}

}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  return detail::same_tape(a, b).record(detail::make<T>(Op::kMatMul, {a, b}));
}

/// Elementwise a + b; b may broadcast (scalar, 1×n row, m×1 column).
template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::same_tape(a, b).record(detail::make<T>(Op::kAdd, {a, b}));
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::same_tape(a, b).record(detail::make<T>(Op::kMul, {a, b}));
}

template <typename T>
Var<T> scale(Var<T> a, double c) {
  return mul(a, a.tape->constant(BasicTensor<T>::scalar(static_cast<T>(c))));
}

template <typename T>
Var<T> add_scalar(Var<T> a, double c) {
  return add(a, a.tape->constant(BasicTensor<T>::scalar(static_cast<T>(c))));
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return add(a, scale(b, -1.0));
}

/// 1 - a
template <typename T>
Var<T> one_minus(Var<T> a) {
  return add_scalar(scale(a, -1.0), 1.0);
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return a.tape->record(detail::make<T>(Op::kSigmoid, {a}));
}

template <typename T>
Var<T> log_sigmoid(Var<T> a) {
  return a.tape->record(detail::make<T>(Op::kLogSigmoid, {a}));
}

template <typename T>
Var<T> softmax(Var<T> a, std::size_t axis) {
  auto n = detail::make<T>(Op::kSoftmax, {a});
  n.axis = axis;
  return a.tape->record(std::move(n));
}

template <typename T>
Var<T> normalize(Var<T> a, std::size_t axis, NormMode mode) {
  if (mode == NormMode::kMinMax) {
    return a.tape->opaque(ops::normalize(a.value(), axis, mode), {a}, "normalize_minmax");
  }
  auto n = detail::make<T>(Op::kNormalizeL2, {a});
  n.axis = axis;
  return a.tape->record(std::move(n));
}

template <typename T>
Var<T> avg_pool_region(Var<T> map, const BBox& box) {
  auto n = detail::make<T>(Op::kAvgPool, {map});
  n.box = box;
  return map.tape->record(std::move(n));
}

template <typename T>
Var<T> sum(Var<T> a) {
  return a.tape->record(detail::make<T>(Op::kSum, {a}));
}

template <typename T>
Var<T> mean(Var<T> a) {
  return a.tape->record(detail::make<T>(Op::kMean, {a}));
}

/// m×k -> m×1 row sums.
template <typename T>
Var<T> sum_rows(Var<T> a) {
  return a.tape->record(detail::make<T>(Op::kSumRows, {a}));
}

/// Natural log with the input clamped below at kLogClamp.
template <typename T>
Var<T> log(Var<T> a) {
  return a.tape->record(detail::make<T>(Op::kLog, {a}));
}

template <typename T>
Var<T> power(Var<T> a, double exponent) {
  auto n = detail::make<T>(Op::kPower, {a});
  n.exponent = exponent;
  return a.tape->record(std::move(n));
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  auto n = detail::make<T>(Op::kReshape, {a});
  n.shape = std::move(shape);
  return a.tape->record(std::move(n));
}

template <typename T>
Var<T> transpose(Var<T> a) {
  return a.tape->record(detail::make<T>(Op::kTranspose, {a}));
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> rows) {
  auto n = detail::make<T>(Op::kGatherRows, {a});
  n.indices = std::move(rows);
  return a.tape->record(std::move(n));
}

/// Picks a[r, c] for each (r, c) pair into a flat vector.
template <typename T>
Var<T> gather_elements(Var<T> a, std::vector<std::pair<std::size_t, std::size_t>> at) {
  auto n = detail::make<T>(Op::kGatherElements, {a});
  n.elements = std::move(at);
  return a.tape->record(std::move(n));
}

/// x·W + b for row-major inputs x (m×in), W (in×out), b (1×out).
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  return add(matmul(x, weight), bias);
}

}  // namespace uplvp::ag
