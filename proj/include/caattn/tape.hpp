#ifndef CAATTN_TAPE_HPP_
#define CAATTN_TAPE_HPP_

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "caattn/tensor.hpp"

namespace caattn {

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Transpose,
  Softmax,
  Relu,
  Tanh,
  Sigmoid,
  MeanRows,
  ConcatRows,
  ConcatCols,
  Add,
  Sub,
  Hadamard,
  Scale,
  OneMinus,
  RowOf,
  CrossEntropy,
  AddN,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Softmax: return "softmax_rows";
    case OpKind::Relu: return "relu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::MeanRows: return "mean_rows";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Hadamard: return "hadamard";
    case OpKind::Scale: return "scale";
    case OpKind::OneMinus: return "one_minus";
    case OpKind::RowOf: return "row_of";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::AddN: return "add_n";
  }
  return "?";
}

/// One recorded operation. `cache` holds whatever the adjoint needs beyond
/// the output value (softmax probabilities for cross-entropy, the ReLU input).
struct TapeNode {
  OpKind op = OpKind::Leaf;
  std::vector<std::size_t> inputs;
  Tensor value;
  Tensor cache;
  double scalar = 0.0;
  std::size_t index = 0;
  bool requires_grad = false;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::string shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recorder. Nodes are appended in evaluation order, so the
/// reverse of the node list is a valid adjoint order. A tape has one owner;
/// it is not safe to record from several threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable input; receives a gradient.
  Var leaf(Tensor value) { return push(OpKind::Leaf, {}, std::move(value), true); }
  /// Detached input; its gradient is always zero.
  Var constant(Tensor value) { return push(OpKind::Constant, {}, std::move(value), false); }

  const TapeNode& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Runs the adjoint sweep from `output` seeded with `seed`. Gradients of
  /// every node are recomputed from scratch, so repeated calls agree bitwise.
  void backward(const Var& output, const Tensor& seed) {
    if (nodes_.empty()) throw UsageError("backward called on an empty tape (no forward pass)");
    if (output.tape() != this || output.id() >= nodes_.size()) {
      throw UsageError("backward: output does not belong to this tape");
    }
    const Tensor& out_val = nodes_[output.id()].value;
    if (seed.rows() != out_val.rows() || seed.cols() != out_val.cols()) {
      throw ShapeError("backward: seed " + seed.shape() + " does not match output " + out_val.shape());
    }
    grads_.assign(nodes_.size(), Tensor{});
    grads_[output.id()] = seed;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      TapeNode& n = nodes_[i];
      if (!n.requires_grad || grads_[i].empty()) continue;
      propagate(n, grads_[i]);
    }
    has_backward_ = true;
  }

  /// Convenience for scalar outputs: seed = 1.
  void backward(const Var& output) { backward(output, Tensor::ones(output.rows(), output.cols())); }

  /// Gradient of the last backward pass; zeros for detached or unreached nodes.
  Tensor grad(const Var& v) const {
    if (!has_backward_) throw UsageError("grad requested before backward");
    const Tensor& g = grads_.at(v.id());
    if (g.empty()) return Tensor::zeros(v.rows(), v.cols());
    return g;
  }

  /// Smallest |pre-activation| seen by any ReLU on this tape. Finite
  /// differences are unreliable when this is comparable to the step size.
  double min_relu_margin() const noexcept { return min_relu_margin_; }

  /// Test hook: perturbs the adjoint of one op kind by a relative factor so
  /// that gradient checks can demonstrate they detect a wrong derivative.
  void corrupt_adjoint_for_testing(OpKind kind, double relative = 1e-2) {
    corrupted_ = kind;
    corruption_ = relative;
  }

  Var push(OpKind op, std::vector<std::size_t> inputs, Tensor value, bool requires_grad,
           Tensor cache = {}, double scalar = 0.0, std::size_t index = 0) {
    if (!value.all_finite()) {
      throw std::domain_error(std::string("non-finite value produced by ") + op_name(op));
    }
    TapeNode n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.cache = std::move(cache);
    n.scalar = scalar;
    n.index = index;
    n.requires_grad = requires_grad;
    if (op == OpKind::Relu) {
      for (double v : n.cache.data()) min_relu_margin_ = std::min(min_relu_margin_, std::abs(v));
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  bool any_requires_grad(std::span<const std::size_t> ids) const {
    for (auto id : ids)
      if (nodes_[id].requires_grad) return true;
    return false;
  }

 private:
  void accumulate(std::size_t id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    Tensor& dst = grads_[id];
    if (dst.empty()) {
      dst = g;
    } else {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
  }

  void propagate(const TapeNode& n, const Tensor& g_in) {
    Tensor g = g_in;
    if (corrupted_ && *corrupted_ == n.op) g = scale(g, 1.0 + corruption_);
    const auto& in = n.inputs;
    switch (n.op) {
      case OpKind::Leaf:
      case OpKind::Constant:
        break;
      case OpKind::MatMul: {
        const Tensor& a = nodes_[in[0]].value;
        const Tensor& b = nodes_[in[1]].value;
        if (nodes_[in[0]].requires_grad) accumulate(in[0], matmul(g, transpose(b)));
        if (nodes_[in[1]].requires_grad) accumulate(in[1], matmul(transpose(a), g));
        break;
      }
      case OpKind::Transpose:
        accumulate(in[0], transpose(g));
        break;
      case OpKind::Softmax: {
        const Tensor& y = n.value;
        Tensor dx(y.rows(), y.cols());
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) = y(r, c) * (g(r, c) - dot);
        }
        accumulate(in[0], dx);
        break;
      }
      case OpKind::Relu: {
        Tensor dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (!(n.cache[i] > 0.0)) dx[i] = 0.0;
        accumulate(in[0], dx);
        break;
      }
      case OpKind::Tanh: {
        Tensor dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - n.value[i] * n.value[i];
        accumulate(in[0], dx);
        break;
      }
      case OpKind::Sigmoid: {
        Tensor dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= n.value[i] * (1.0 - n.value[i]);
        accumulate(in[0], dx);
        break;
      }
      case OpKind::MeanRows: {
        const std::size_t rows = nodes_[in[0]].value.rows();
        Tensor dx(rows, g.cols());
        const double inv = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) dx(r, c) = g[c] * inv;
        accumulate(in[0], dx);
        break;
      }
      case OpKind::ConcatRows: {
        std::size_t offset = 0;
        for (auto id : in) {
          const Tensor& part = nodes_[id].value;
          if (nodes_[id].requires_grad) {
            Tensor dx(part.rows(), part.cols());
            std::copy(g.data().begin() + static_cast<std::ptrdiff_t>(offset * g.cols()),
                      g.data().begin() + static_cast<std::ptrdiff_t>((offset + part.rows()) * g.cols()),
                      dx.data().begin());
            accumulate(id, dx);
          }
          offset += part.rows();
        }
        break;
      }
      case OpKind::ConcatCols: {
        std::size_t offset = 0;
        for (auto id : in) {
          const Tensor& part = nodes_[id].value;
          if (nodes_[id].requires_grad) {
            Tensor dx(part.rows(), part.cols());
            for (std::size_t r = 0; r < part.rows(); ++r)
              for (std::size_t c = 0; c < part.cols(); ++c) dx(r, c) = g(r, offset + c);
            accumulate(id, dx);
          }
          offset += part.cols();
        }
        break;
      }
      case OpKind::Add:
        accumulate(in[0], g);
        accumulate(in[1], g);
        break;
      case OpKind::Sub:
        accumulate(in[0], g);
        if (nodes_[in[1]].requires_grad) accumulate(in[1], scale(g, -1.0));
        break;
      case OpKind::Hadamard:
        if (nodes_[in[0]].requires_grad) accumulate(in[0], hadamard(g, nodes_[in[1]].value));
        if (nodes_[in[1]].requires_grad) accumulate(in[1], hadamard(g, nodes_[in[0]].value));
        break;
      case OpKind::Scale:
        accumulate(in[0], scale(g, n.scalar));
        break;
      case OpKind::OneMinus:
        accumulate(in[0], scale(g, -1.0));
        break;
      case OpKind::RowOf: {
        const Tensor& src = nodes_[in[0]].value;
        Tensor dx(src.rows(), src.cols());
        std::copy(g.data().begin(), g.data().end(), dx.row(n.index).begin());
        accumulate(in[0], dx);
        break;
      }
      case OpKind::CrossEntropy: {
        Tensor dx = scale(n.cache, g[0]);
        dx[n.index] -= g[0];
        accumulate(in[0], dx);
        break;
      }
      case OpKind::AddN:
        for (auto id : in) accumulate(id, g);
        break;
    }
  }

  std::vector<TapeNode> nodes_;
  std::vector<Tensor> grads_;
  bool has_backward_ = false;
  double min_relu_margin_ = std::numeric_limits<double>::infinity();
  std::optional<OpKind> corrupted_;
  double corruption_ = 0.0;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }

namespace detail {

inline Tape& common_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw UsageError("operands live on different tapes");
  return *a.tape();
}

inline Var record(Tape& t, OpKind op, std::vector<std::size_t> in, Tensor value, Tensor cache = {},
                  double scalar = 0.0, std::size_t index = 0) {
  const bool rg = t.any_requires_grad(in);
  return t.push(op, std::move(in), std::move(value), rg, std::move(cache), scalar, index);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable overloads. Same names as the Tensor primitives so that
// model code can be written once as a template over Tensor or Var.
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::common_tape(a, b);
  return detail::record(t, OpKind::MatMul, {a.id(), b.id()}, matmul(a.value(), b.value()));
}

inline Var transpose(const Var& a) {
  return detail::record(*a.tape(), OpKind::Transpose, {a.id()}, transpose(a.value()));
}

inline Var softmax_rows(const Var& a) {
  return detail::record(*a.tape(), OpKind::Softmax, {a.id()}, softmax_rows(a.value()));
}

inline Var relu(const Var& a) {
  return detail::record(*a.tape(), OpKind::Relu, {a.id()}, relu(a.value()), a.value());
}

inline Var tanh(const Var& a) {
  return detail::record(*a.tape(), OpKind::Tanh, {a.id()}, tanh(a.value()));
}

inline Var sigmoid(const Var& a) {
  return detail::record(*a.tape(), OpKind::Sigmoid, {a.id()}, sigmoid(a.value()));
}

inline Var mean_rows(const Var& a) {
  return detail::record(*a.tape(), OpKind::MeanRows, {a.id()}, mean_rows(a.value()));
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows: no parts");
  std::vector<Tensor> values;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    detail::common_tape(parts.front(), p);
    values.push_back(p.value());
    ids.push_back(p.id());
  }
  return detail::record(*parts.front().tape(), OpKind::ConcatRows, std::move(ids), concat_rows(values));
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols: no parts");
  std::vector<Tensor> values;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    detail::common_tape(parts.front(), p);
    values.push_back(p.value());
    ids.push_back(p.id());
  }
  return detail::record(*parts.front().tape(), OpKind::ConcatCols, std::move(ids), concat_cols(values));
}

inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}
inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::common_tape(a, b);
  return detail::record(t, OpKind::Add, {a.id(), b.id()}, add(a.value(), b.value()));
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::common_tape(a, b);
  return detail::record(t, OpKind::Sub, {a.id(), b.id()}, sub(a.value(), b.value()));
}

inline Var hadamard(const Var& a, const Var& b) {
  Tape& t = detail::common_tape(a, b);
  return detail::record(t, OpKind::Hadamard, {a.id(), b.id()}, hadamard(a.value(), b.value()));
}

inline Var scale(const Var& a, double s) {
  return detail::record(*a.tape(), OpKind::Scale, {a.id()}, scale(a.value(), s), {}, s);
}

inline Var one_minus(const Var& a) {
  return detail::record(*a.tape(), OpKind::OneMinus, {a.id()}, one_minus(a.value()));
}

inline Var row_of(const Var& a, std::size_t r) {
  return detail::record(*a.tape(), OpKind::RowOf, {a.id()}, row_of(a.value(), r), {}, 0.0, r);
}

/// 1 x 1 node holding -log softmax(logits)[gold].
inline Var cross_entropy(const Var& logits, std::size_t gold) {
  const double loss = cross_entropy_value(logits.value(), gold);
  return detail::record(*logits.tape(), OpKind::CrossEntropy, {logits.id()}, Tensor(1, 1, loss),
                        softmax_rows(logits.value()), 0.0, gold);
}

/// Elementwise sum of equally shaped nodes.
inline Var add_n(std::span<const Var> parts) {
  if (parts.empty()) throw EmptyInputError("add_n: no parts");
  Tensor acc = parts.front().value();
  std::vector<std::size_t> ids{parts.front().id()};
  for (std::size_t i = 1; i < parts.size(); ++i) {
    detail::common_tape(parts.front(), parts[i]);
    detail::require_same_shape(acc, parts[i].value(), "add_n");
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += parts[i].value()[k];
    ids.push_back(parts[i].id());
  }
  return detail::record(*parts.front().tape(), OpKind::AddN, std::move(ids), std::move(acc));
}

}  // namespace caattn

#endif  // CAATTN_TAPE_HPP_
