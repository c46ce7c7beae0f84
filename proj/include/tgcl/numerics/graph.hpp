#pragma once

// Reverse-mode automatic differentiation over a closed vocabulary of dense
// matrix operations.
//
// A Graph records operations as they are declared. Shapes are checked at
// declaration time; values are computed lazily by forward(), which evaluates
// every pending node up to and including the requested one. Node ids are
// assigned in creation order, so creation order is a topological order and
// backward() simply walks ids downwards from the root, visiting each node once.
//
// Leaves come in three flavours:
//   constant()  - detached data, never receives a gradient
//   leaf()      - owned data that receives a gradient
//   param()     - a reference into a ParamStore; one node per parameter index
//
// A Graph is single-threaded. Independent graphs over the same (read-only)
// ParamStore can be built and differentiated concurrently.

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "tgcl/errors.hpp"
#include "tgcl/numerics/ndarray.hpp"
#include "tgcl/numerics/params.hpp"

namespace tgcl::numerics {

enum class Op : std::uint8_t {
  Constant,
  Leaf,
  Param,
  Add,
  Multiply,
  MatMul,
  Exp,
  Ln,
  Sin,
  Negate,
  Scale,
  ConcatRows,
  ConcatCols,
  SliceCols,
  GatherRows,
  ReduceSum,
  ReduceMean,
  RowSoftmax,
  LayerNorm,
  Gelu,
  L2NormalizeRows,
  MaskedFill,
  Square,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Leaf: return "leaf";
    case Op::Param: return "param";
    case Op::Add: return "add";
    case Op::Multiply: return "multiply";
    case Op::MatMul: return "matmul";
    case Op::Exp: return "exp";
    case Op::Ln: return "ln";
    case Op::Sin: return "sin";
    case Op::Negate: return "negate";
    case Op::Scale: return "scale";
    case Op::ConcatRows: return "concat_rows";
    case Op::ConcatCols: return "concat_cols";
    case Op::SliceCols: return "slice_cols";
    case Op::GatherRows: return "gather_rows";
    case Op::ReduceSum: return "reduce_sum";
    case Op::ReduceMean: return "reduce_mean";
    case Op::RowSoftmax: return "row_softmax";
    case Op::LayerNorm: return "layer_norm";
    case Op::Gelu: return "gelu";
    case Op::L2NormalizeRows: return "l2_normalize_rows";
    case Op::MaskedFill: return "masked_fill";
    case Op::Square: return "square";
  }
  return "?";
}

// Lower clamp on the row norm in l2-normalisation: y = x / max(|x|, eps).
inline constexpr double kL2Epsilon = 1e-12;

struct Var {
  std::uint32_t id = 0;
};

// Boolean mask shared between nodes (e.g. one causal mask per sequence length).
using Mask = std::shared_ptr<const std::vector<std::uint8_t>>;

template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  // ---- leaves -------------------------------------------------------------

  Var constant(NdArray<T> value) {
    Node n = make(Op::Constant, {}, value.rows(), value.cols());
    n.value = std::move(value);
    n.evaluated = true;
    n.requires_grad = false;
    return push(std::move(n));
  }

  Var leaf(NdArray<T> value) {
    Node n = make(Op::Leaf, {}, value.rows(), value.cols());
    n.value = std::move(value);
    n.evaluated = true;
    n.requires_grad = true;
    return push(std::move(n));
  }

  // The store must outlive the graph and stay unmodified while it is alive.
  Var param(const ParamStore<T>& store, std::size_t index) {
    if (param_store_ && param_store_ != &store)
      throw ContractError("param: a graph binds a single ParamStore");
    param_store_ = &store;
    if (auto it = param_nodes_.find(index); it != param_nodes_.end()) return Var{it->second};
    const auto& v = store.value(index);
    Node n = make(Op::Param, {}, v.rows(), v.cols());
    n.external = &v;
    n.index = index;
    n.evaluated = true;
    n.requires_grad = true;
    Var out = push(std::move(n));
    param_nodes_.emplace(index, out.id);
    return out;
  }

  // ---- elementwise / arithmetic --------------------------------------------

  // b may have a's shape, be a 1xC row broadcast over a's rows, or be 1x1.
  Var add(Var a, Var b) { return binary(Op::Add, a, b); }
  Var multiply(Var a, Var b) { return binary(Op::Multiply, a, b); }
  Var sub(Var a, Var b) { return add(a, negate(b)); }

  // a: RxK, b: KxC (or CxK when transpose_b).
  Var matmul(Var a, Var b, bool transpose_b = false) {
    const auto& A = node(a);
    const auto& B = node(b);
    std::size_t k_b = transpose_b ? B.cols : B.rows;
    std::size_t c = transpose_b ? B.rows : B.cols;
    if (A.cols != k_b)
      throw DimensionError("matmul: inner dimensions differ, " + dims(A) + " x " + dims(B) +
                           (transpose_b ? "^T" : ""));
    Node n = make(Op::MatMul, {a.id, b.id}, A.rows, c);
    n.flag = transpose_b;
    return push(std::move(n));
  }

  Var exp(Var a) { return unary(Op::Exp, a); }
  Var ln(Var a) { return unary(Op::Ln, a); }
  Var sin(Var a) { return unary(Op::Sin, a); }
  Var negate(Var a) { return unary(Op::Negate, a); }
  Var square(Var a) { return unary(Op::Square, a); }
  Var gelu(Var a) { return unary(Op::Gelu, a); }
  Var scale(Var a, T factor) {
    Var out = unary(Op::Scale, a);
    nodes_[out.id].scalar = factor;
    return out;
  }

  // ---- structural ----------------------------------------------------------

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    std::size_t rows = 0, cols = node(parts[0]).cols;
    std::vector<std::uint32_t> in;
    for (Var p : parts) {
      if (node(p).cols != cols)
        throw DimensionError("concat_rows: column mismatch " + dims(node(parts[0])) + " vs " +
                             dims(node(p)));
      rows += node(p).rows;
      in.push_back(p.id);
    }
    return push(make(Op::ConcatRows, std::move(in), rows, cols));
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    std::size_t rows = node(parts[0]).rows, cols = 0;
    std::vector<std::uint32_t> in;
    for (Var p : parts) {
      if (node(p).rows != rows)
        throw DimensionError("concat_cols: row mismatch " + dims(node(parts[0])) + " vs " +
                             dims(node(p)));
      cols += node(p).cols;
      in.push_back(p.id);
    }
    return push(make(Op::ConcatCols, std::move(in), rows, cols));
  }

  // Columns [begin, end).
  Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    const auto& A = node(a);
    if (begin >= end || end > A.cols)
      throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," +
                           std::to_string(end) + ") invalid for " + dims(A));
    Node n = make(Op::SliceCols, {a.id}, A.rows, end - begin);
    n.begin = begin;
    return push(std::move(n));
  }

  Var gather_rows(Var a, std::vector<std::size_t> rows) {
    const auto& A = node(a);
    if (rows.empty()) throw DimensionError("gather_rows: empty index list");
    for (auto r : rows)
      if (r >= A.rows)
        throw IndexError("gather_rows: row " + std::to_string(r) + " out of range for " + dims(A));
    Node n = make(Op::GatherRows, {a.id}, rows.size(), A.cols);
    n.indices = std::move(rows);
    return push(std::move(n));
  }

  // ---- reductions / normalisations ------------------------------------------

  Var reduce_sum(Var a) { return push(make(Op::ReduceSum, {a.id}, 1, 1)); }
  Var reduce_mean(Var a) { return push(make(Op::ReduceMean, {a.id}, 1, 1)); }
  Var row_softmax(Var a) { return unary(Op::RowSoftmax, a); }
  Var l2_normalize_rows(Var a) { return unary(Op::L2NormalizeRows, a); }
  Var layer_norm(Var a, T eps = T(1e-5)) {
    Var out = unary(Op::LayerNorm, a);
    nodes_[out.id].scalar = eps;
    return out;
  }

  // Positions where mask != 0 are replaced by `fill`; no gradient flows there.
  Var masked_fill(Var a, Mask mask, T fill) {
    const auto& A = node(a);
    if (!mask || mask->size() != A.rows * A.cols)
      throw DimensionError("masked_fill: mask size does not match " + dims(A));
    Node n = make(Op::MaskedFill, {a.id}, A.rows, A.cols);
    n.mask = std::move(mask);
    n.scalar = fill;
    return push(std::move(n));
  }

  // ---- evaluation ----------------------------------------------------------

  const NdArray<T>& forward(Var root) {
    check(root);
    for (std::uint32_t id = evaluated_upto_; id <= root.id; ++id) eval_node(id);
    if (root.id + 1 > evaluated_upto_) evaluated_upto_ = root.id + 1;
    return value(root);
  }

  const NdArray<T>& value(Var v) const {
    const Node& n = node(v);
    if (!n.evaluated) throw StateError("value(): node not evaluated; call forward first");
    return n.external ? *n.external : n.value;
  }

  bool evaluated(Var v) const { return node(v).evaluated; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t rows(Var v) const { return node(v).rows; }
  std::size_t cols(Var v) const { return node(v).cols; }
  Op op(Var v) const { return node(v).op; }
  std::size_t node_count() const { return nodes_.size(); }

  // Accumulates d(root)/d(node) into every node that requires a gradient.
  void backward(Var root) {
    check(root);
    const Node& r = node(root);
    if (!r.evaluated) throw StateError("backward(): forward has not been run for the root");
    if (r.rows != 1 || r.cols != 1)
      throw ContractError("backward(): root must be scalar, got " + dims(r));
    for (auto& n : nodes_) n.grad = NdArray<T>();
    if (!r.requires_grad) {
      backward_done_ = true;
      return;
    }
    nodes_[root.id].grad = NdArray<T>(1, 1, T(1));
    for (std::int64_t id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || n.grad.empty()) continue;
      propagate(n);
    }
    backward_done_ = true;
  }

  // Gradient of the last backward root w.r.t. v. Nodes the root does not
  // depend on report zeros.
  NdArray<T> grad(Var v) const {
    const Node& n = node(v);
    if (!n.requires_grad) throw StateError("grad(): node does not receive gradients");
    if (!backward_done_) throw StateError("grad(): backward has not been run");
    if (n.grad.empty()) return NdArray<T>(n.rows, n.cols);
    return n.grad;
  }

  // Adds weight * dL/dparam into grads for every param leaf reached.
  void accumulate_param_grads(GradStore<T>& grads, T weight = T(1)) const {
    if (!backward_done_) throw StateError("accumulate_param_grads(): backward has not been run");
    for (const auto& [index, id] : param_nodes_) {
      const Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      auto& dst = grads[index];
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weight * n.grad[i];
    }
  }

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<std::uint32_t> in;
    std::size_t rows = 0, cols = 0;
    NdArray<T> value;
    NdArray<T> grad;
    const NdArray<T>* external = nullptr;
    std::size_t index = 0;
    std::size_t begin = 0;
    std::vector<std::size_t> indices;
    Mask mask;
    T scalar = T(0);
    bool flag = false;
    bool evaluated = false;
    bool requires_grad = false;
  };

  static std::string dims(const Node& n) {
    return "[" + std::to_string(n.rows) + "x" + std::to_string(n.cols) + "]";
  }

  Node make(Op op, std::vector<std::uint32_t> in, std::size_t rows, std::size_t cols) const {
    Node n;
    n.op = op;
    n.rows = rows;
    n.cols = cols;
    for (auto id : in) n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
    n.in = std::move(in);
    return n;
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void check(Var v) const {
    if (v.id >= nodes_.size()) throw StateError("unknown graph variable");
  }
  const Node& node(Var v) const {
    check(v);
    return nodes_[v.id];
  }

  Var unary(Op op, Var a) {
    const auto& A = node(a);
    return push(make(op, {a.id}, A.rows, A.cols));
  }

  Var binary(Op op, Var a, Var b) {
    const auto& A = node(a);
    const auto& B = node(b);
    bool same = A.rows == B.rows && A.cols == B.cols;
    bool row_bcast = B.rows == 1 && B.cols == A.cols;
    bool scalar_bcast = B.rows == 1 && B.cols == 1;
    if (!same && !row_bcast && !scalar_bcast)
      throw DimensionError(std::string(op_name(op)) + ": incompatible shapes " + dims(A) + " and " +
                           dims(B));
    return push(make(op, {a.id, b.id}, A.rows, A.cols));
  }

  const NdArray<T>& val(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  // Index of the broadcast element of b matching flat index i of a.
  static std::size_t bidx(const NdArray<T>& a, const NdArray<T>& b, std::size_t i) {
    if (b.size() == a.size()) return i;
    if (b.size() == 1) return 0;
    return i % a.cols();
  }

  // out (R x C) += a (R x K) * b (K x C), row-major. Zero entries of `a` are
  // skipped, which keeps masked attention rows exactly independent of the
  // rows they do not attend to.
  static void gemm_acc(std::size_t R, std::size_t K, std::size_t C, const T* a, const T* b, T* out) {
    for (std::size_t i = 0; i < R; ++i) {
      T* o = out + i * C;
      const T* ar = a + i * K;
      for (std::size_t p = 0; p < K; ++p) {
        const T av = ar[p];
        if (av == T(0)) continue;
        const T* br = b + p * C;
        for (std::size_t j = 0; j < C; ++j) o[j] += av * br[j];
      }
    }
  }

  static std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
    std::vector<T> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
    return out;
  }

  void eval_node(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.evaluated) return;
    NdArray<T> out(n.rows, n.cols);
    switch (n.op) {
      case Op::Constant:
      case Op::Leaf:
      case Op::Param:
        break;
      case Op::Add: {
        const auto& a = val(n.in[0]);
        const auto& b = val(n.in[1]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[bidx(a, b, i)];
        break;
      }
      case Op::Multiply: {
        const auto& a = val(n.in[0]);
        const auto& b = val(n.in[1]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[bidx(a, b, i)];
        break;
      }
      case Op::MatMul: {
        const auto& a = val(n.in[0]);
        const auto& b = val(n.in[1]);
        const std::size_t K = a.cols(), C = n.cols;
        if (!n.flag) {
          gemm_acc(n.rows, K, C, a.data(), b.data(), out.data());
        } else {
          const auto bt = transposed(b.data(), C, K);
          gemm_acc(n.rows, K, C, a.data(), bt.data(), out.data());
        }
        break;
      }
      case Op::Exp: {
        const auto& a = val(n.in[0]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
        break;
      }
      case Op::Ln: {
        const auto& a = val(n.in[0]);
        for (std::size_t i = 0; i < out.size(); ++i) {
          if (!(a[i] > T(0)))
            throw DomainError("ln: non-positive input " + std::to_string(static_cast<double>(a[i])));
          out[i] = std::log(a[i]);
        }
        break;
      }
      case Op::Sin: {
        const auto& a = val(n.in[0]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sin(a[i]);
        break;
      }
      case Op::Negate: {
        const auto& a = val(n.in[0]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = -a[i];
        break;
      }
      case Op::Scale: {
        const auto& a = val(n.in[0]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = n.scalar * a[i];
        break;
      }
      case Op::Square: {
        const auto& a = val(n.in[0]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
        break;
      }
      case Op::Gelu: {
        const auto& a = val(n.in[0]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(a[i]);
        break;
      }
      case Op::ConcatRows: {
        std::size_t offset = 0;
        for (auto id_in : n.in) {
          const auto& p = val(id_in);
          std::copy(p.values().begin(), p.values().end(), out.values().begin() + offset);
          offset += p.size();
        }
        break;
      }
      case Op::ConcatCols: {
        std::size_t c0 = 0;
        for (auto id_in : n.in) {
          const auto& p = val(id_in);
          for (std::size_t r = 0; r < n.rows; ++r)
            for (std::size_t c = 0; c < p.cols(); ++c) out(r, c0 + c) = p(r, c);
          c0 += p.cols();
        }
        break;
      }
      case Op::SliceCols: {
        const auto& a = val(n.in[0]);
        for (std::size_t r = 0; r < n.rows; ++r)
          for (std::size_t c = 0; c < n.cols; ++c) out(r, c) = a(r, n.begin + c);
        break;
      }
      case Op::GatherRows: {
        const auto& a = val(n.in[0]);
        for (std::size_t r = 0; r < n.rows; ++r) {
          auto src = a.row_span(n.indices[r]);
          std::copy(src.begin(), src.end(), out.row_span(r).begin());
        }
        break;
      }
      case Op::ReduceSum:
      case Op::ReduceMean: {
        const auto& a = val(n.in[0]);
        T s = 0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
        out[0] = n.op == Op::ReduceSum ? s : s / static_cast<T>(a.size());
        break;
      }
      case Op::RowSoftmax: {
        const auto& a = val(n.in[0]);
        for (std::size_t r = 0; r < n.rows; ++r) {
          auto x = a.row_span(r);
          auto y = out.row_span(r);
          T m = x[0];
          for (auto v : x) m = std::max(m, v);
          T s = 0;
          for (std::size_t c = 0; c < n.cols; ++c) s += (y[c] = std::exp(x[c] - m));
          for (auto& v : y) v /= s;
        }
        break;
      }
      case Op::LayerNorm: {
        const auto& a = val(n.in[0]);
        for (std::size_t r = 0; r < n.rows; ++r) {
          auto x = a.row_span(r);
          auto y = out.row_span(r);
          T mean = 0, var = 0;
          for (auto v : x) mean += v;
          mean /= static_cast<T>(n.cols);
          for (auto v : x) var += (v - mean) * (v - mean);
          var /= static_cast<T>(n.cols);
          T rstd = T(1) / std::sqrt(var + n.scalar);
          for (std::size_t c = 0; c < n.cols; ++c) y[c] = (x[c] - mean) * rstd;
        }
        break;
      }
      case Op::L2NormalizeRows: {
        const auto& a = val(n.in[0]);
        for (std::size_t r = 0; r < n.rows; ++r) {
          auto x = a.row_span(r);
          auto y = out.row_span(r);
          T ss = 0;
          for (auto v : x) ss += v * v;
          T norm = std::max(std::sqrt(ss), static_cast<T>(kL2Epsilon));
          for (std::size_t c = 0; c < n.cols; ++c) y[c] = x[c] / norm;
        }
        break;
      }
      case Op::MaskedFill: {
        const auto& a = val(n.in[0]);
        const auto& m = *n.mask;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] ? n.scalar : a[i];
        break;
      }
    }
    if (n.op != Op::Constant && n.op != Op::Leaf && n.op != Op::Param) {
      if (!out.all_finite())
        throw DomainError(std::string(op_name(n.op)) + ": produced a non-finite value");
      n.value = std::move(out);
    }
    n.evaluated = true;
  }

  static T gelu_value(T x) {
    constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
    T inner = k * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(inner));
  }
  static T gelu_grad(T x) {
    constexpr T k = T(0.7978845608028654);
    T inner = k * (x + T(0.044715) * x * x * x);
    T th = std::tanh(inner);
    return T(0.5) * (T(1) + th) +
           T(0.5) * x * (T(1) - th * th) * k * (T(1) + T(3) * T(0.044715) * x * x);
  }

  NdArray<T>& grad_buf(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = NdArray<T>(n.rows, n.cols);
    return n.grad;
  }
  bool wants(std::uint32_t id) const { return nodes_[id].requires_grad; }

  void propagate(const Node& n) {
    const NdArray<T>& g = n.grad;
    switch (n.op) {
      case Op::Constant:
      case Op::Leaf:
      case Op::Param:
        break;
      case Op::Add: {
        const auto& a = val(n.in[0]);
        const auto& b = val(n.in[1]);
        if (wants(n.in[0])) grad_buf(n.in[0]) += g;
        if (wants(n.in[1])) {
          auto& gb = grad_buf(n.in[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gb[bidx(a, b, i)] += g[i];
        }
        break;
      }
      case Op::Multiply: {
        const auto& a = val(n.in[0]);
        const auto& b = val(n.in[1]);
        if (wants(n.in[0])) {
          auto& ga = grad_buf(n.in[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[bidx(a, b, i)];
        }
        if (wants(n.in[1])) {
          auto& gb = grad_buf(n.in[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gb[bidx(a, b, i)] += g[i] * a[i];
        }
        break;
      }
      case Op::MatMul: {
        const auto& a = val(n.in[0]);
        const auto& b = val(n.in[1]);
        const std::size_t R = n.rows, K = a.cols(), C = n.cols;
        if (wants(n.in[0])) {
          auto& ga = grad_buf(n.in[0]);
          if (!n.flag) {
            // ga = g * b^T
            const auto bt = transposed(b.data(), K, C);
            gemm_acc(R, C, K, g.data(), bt.data(), ga.data());
          } else {
            // ga = g * b
            gemm_acc(R, C, K, g.data(), b.data(), ga.data());
          }
        }
        if (wants(n.in[1])) {
          auto& gb = grad_buf(n.in[1]);
          if (!n.flag) {
            // gb = a^T * g
            for (std::size_t i = 0; i < R; ++i) {
              const T* gr = g.data() + i * C;
              for (std::size_t p = 0; p < K; ++p) {
                const T av = a(i, p);
                if (av == T(0)) continue;
                T* gbr = gb.data() + p * C;
                for (std::size_t j = 0; j < C; ++j) gbr[j] += av * gr[j];
              }
            }
          } else {
            // gb = g^T * a
            for (std::size_t i = 0; i < R; ++i) {
              const T* ar = a.data() + i * K;
              for (std::size_t j = 0; j < C; ++j) {
                const T gv = g(i, j);
                T* gbr = gb.data() + j * K;
                for (std::size_t p = 0; p < K; ++p) gbr[p] += gv * ar[p];
              }
            }
          }
        }
        break;
      }
      case Op::Exp: {
        auto& ga = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i];
        break;
      }
      case Op::Ln: {
        const auto& a = val(n.in[0]);
        auto& ga = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
        break;
      }
      case Op::Sin: {
        const auto& a = val(n.in[0]);
        auto& ga = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * std::cos(a[i]);
        break;
      }
      case Op::Negate: {
        auto& ga = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
        break;
      }
      case Op::Scale: {
        auto& ga = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.scalar * g[i];
        break;
      }
      case Op::Square: {
        const auto& a = val(n.in[0]);
        auto& ga = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T(2) * a[i] * g[i];
        break;
      }
      case Op::Gelu: {
        const auto& a = val(n.in[0]);
        auto& ga = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_grad(a[i]);
        break;
      }
      case Op::ConcatRows: {
        std::size_t offset = 0;
        for (auto id_in : n.in) {
          std::size_t sz = nodes_[id_in].rows * nodes_[id_in].cols;
          if (wants(id_in)) {
            auto& gi = grad_buf(id_in);
            for (std::size_t i = 0; i < sz; ++i) gi[i] += g[offset + i];
          }
          offset += sz;
        }
        break;
      }
      case Op::ConcatCols: {
        std::size_t c0 = 0;
        for (auto id_in : n.in) {
          std::size_t pc = nodes_[id_in].cols;
          if (wants(id_in)) {
            auto& gi = grad_buf(id_in);
            for (std::size_t r = 0; r < n.rows; ++r)
              for (std::size_t c = 0; c < pc; ++c) gi(r, c) += g(r, c0 + c);
          }
          c0 += pc;
        }
        break;
      }
      case Op::SliceCols: {
        auto& ga = grad_buf(n.in[0]);
        for (std::size_t r = 0; r < n.rows; ++r)
          for (std::size_t c = 0; c < n.cols; ++c) ga(r, n.begin + c) += g(r, c);
        break;
      }
      case Op::GatherRows: {
        auto& ga = grad_buf(n.in[0]);
        for (std::size_t r = 0; r < n.rows; ++r) {
          auto src = g.row_span(r);
          auto dst = ga.row_span(n.indices[r]);
          for (std::size_t c = 0; c < n.cols; ++c) dst[c] += src[c];
        }
        break;
      }
      case Op::ReduceSum:
      case Op::ReduceMean: {
        auto& ga = grad_buf(n.in[0]);
        T s = n.op == Op::ReduceSum ? g[0] : g[0] / static_cast<T>(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
        break;
      }
      case Op::RowSoftmax: {
        auto& ga = grad_buf(n.in[0]);
        for (std::size_t r = 0; r < n.rows; ++r) {
          auto y = n.value.row_span(r);
          auto gr = g.row_span(r);
          T dot = 0;
          for (std::size_t c = 0; c < n.cols; ++c) dot += gr[c] * y[c];
          auto dst = ga.row_span(r);
          for (std::size_t c = 0; c < n.cols; ++c) dst[c] += y[c] * (gr[c] - dot);
        }
        break;
      }
      case Op::LayerNorm: {
        const auto& a = val(n.in[0]);
        auto& ga = grad_buf(n.in[0]);
        const T inv_n = T(1) / static_cast<T>(n.cols);
        for (std::size_t r = 0; r < n.rows; ++r) {
          auto x = a.row_span(r);
          auto y = n.value.row_span(r);
          auto gr = g.row_span(r);
          T mean = 0, var = 0;
          for (auto v : x) mean += v;
          mean *= inv_n;
          for (auto v : x) var += (v - mean) * (v - mean);
          var *= inv_n;
          T rstd = T(1) / std::sqrt(var + n.scalar);
          T gmean = 0, gymean = 0;
          for (std::size_t c = 0; c < n.cols; ++c) {
            gmean += gr[c];
            gymean += gr[c] * y[c];
          }
          gmean *= inv_n;
          gymean *= inv_n;
          auto dst = ga.row_span(r);
          for (std::size_t c = 0; c < n.cols; ++c) dst[c] += rstd * (gr[c] - gmean - y[c] * gymean);
        }
        break;
      }
      case Op::L2NormalizeRows: {
        const auto& a = val(n.in[0]);
        auto& ga = grad_buf(n.in[0]);
        for (std::size_t r = 0; r < n.rows; ++r) {
          auto x = a.row_span(r);
          auto y = n.value.row_span(r);
          auto gr = g.row_span(r);
          T ss = 0, dot = 0;
          for (auto v : x) ss += v * v;
          const T raw = std::sqrt(ss);
          auto dst = ga.row_span(r);
          if (raw <= static_cast<T>(kL2Epsilon)) {
            for (std::size_t c = 0; c < n.cols; ++c) dst[c] += gr[c] / static_cast<T>(kL2Epsilon);
            continue;
          }
          for (std::size_t c = 0; c < n.cols; ++c) dot += y[c] * gr[c];
          for (std::size_t c = 0; c < n.cols; ++c) dst[c] += (gr[c] - y[c] * dot) / raw;
        }
        break;
      }
      case Op::MaskedFill: {
        auto& ga = grad_buf(n.in[0]);
        const auto& m = *n.mask;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (!m[i]) ga[i] += g[i];
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, std::uint32_t> param_nodes_;
  const ParamStore<T>* param_store_ = nullptr;
  std::uint32_t evaluated_upto_ = 0;
  bool backward_done_ = false;
};

}  // namespace tgcl::numerics
