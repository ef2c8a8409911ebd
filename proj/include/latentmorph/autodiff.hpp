#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "latentmorph/tensor.hpp"

namespace lm {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Linear record of primitive applications for reverse-mode differentiation.
///
/// One tape per forward pass. Nodes are appended in evaluation order, so node
/// ids are already a topological order; backward() walks them in reverse and
/// visits each node once. Nodes whose inputs carry no gradient store no
/// backward rule.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Tensor value);
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return value(v.id); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient accumulated by the last backward(); zeros if unreachable.
  Tensor grad(Var v) const;

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Primitive implementation interface.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& upstream(std::size_t id) const { return *nodes_[id].grad; }
  /// Gradient buffer of a node, allocated on first use; nullptr when the
  /// node does not require a gradient.
  Tensor* grad_sink(std::size_t id);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<Tensor> grad;
  };

  std::deque<Node> nodes_;
};

// Elementwise arithmetic. Operands must share a shape, or one of them holds a
// single value, or the right operand is a per-channel vector [C] against a
// left operand of shape [N, C, ...].
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var a, double factor);
Var add_scalar(Var a, double value);
Var neg(Var a);
/// exp with the argument clamped to at most 700.
Var exp(Var a);
/// log with the argument clamped to at least 1e-12.
Var log(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var softmax(Var a);
Var log_softmax(Var a);

Var sum(Var a);
Var mean(Var a);
/// Sums a tensor of shape [N, C, ...] over every axis after the first two.
Var sum_spatial(Var a);

Var reshape(Var a, Shape shape);
/// Concatenates tensors of shape [N, C_i, ...] along axis 1.
Var concat_channels(std::span<const Var> parts);
Var matmul(Var a, Var b);

/// Cross-correlation. input [N,Cin,D,H,W], kernel [Cout,Cin,k,k,k], bias [Cout].
Var conv3d(Var input, Var kernel, Var bias, std::size_t stride, std::size_t pad);
/// Adjoint of conv3d. input [N,A,D,H,W], kernel [A,B,k,k,k], bias [B].
Var conv3d_transpose(Var input, Var kernel, Var bias, std::size_t stride, std::size_t pad);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace lm
