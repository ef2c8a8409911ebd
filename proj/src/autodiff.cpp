#include "latentmorph/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "latentmorph/conv.hpp"

namespace lm {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, std::nullopt});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, std::nullopt});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  const bool tracked =
      std::any_of(inputs.begin(), inputs.end(), [this](std::size_t i) { return nodes_[i].requires_grad; });
  Node node{std::move(value), std::move(inputs), {}, tracked, std::nullopt};
  if (tracked) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor* Tape::grad_sink(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return nullptr;
  if (!node.grad) node.grad = Tensor(node.value.shape(), 0.0);
  return &*node.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_[v.id];
  return node.grad ? *node.grad : Tensor(node.value.shape(), 0.0);
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to a different tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + to_string(nodes_[loss.id].value.shape()));
  }
  for (Node& node : nodes_) node.grad.reset();
  if (!nodes_[loss.id].requires_grad) return;
  grad_sink(loss.id)->fill(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad && node.backward) node.backward(*this, i);
  }
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw ContractError("operands recorded on different tapes");
}

// How the second operand of a binary op maps onto the output.
struct Broadcast {
  enum Kind { same, lhs_scalar, rhs_scalar, rhs_channel } kind;
  std::size_t inner = 1;
  std::size_t channels = 1;

  std::size_t lhs_index(std::size_t i) const { return kind == lhs_scalar ? 0 : i; }
  std::size_t rhs_index(std::size_t i) const {
    switch (kind) {
      case rhs_scalar: return 0;
      case rhs_channel: return (i / inner) % channels;
      default: return i;
    }
  }
};

Broadcast resolve_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return {Broadcast::same};
  if (numel(b) == 1) return {Broadcast::rhs_scalar};
  if (numel(a) == 1) return {Broadcast::lhs_scalar};
  if (b.size() == 1 && a.size() >= 2 && a[1] == b[0]) {
    std::size_t inner = 1;
    for (std::size_t i = 2; i < a.size(); ++i) inner *= a[i];
    return {Broadcast::rhs_channel, inner, b[0]};
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

// Shared machinery for binary elementwise ops. `dfa`/`dfb` return the
// partial derivative of the output w.r.t. each operand at (x, y).
template <class F, class DA, class DB>
Var binary(Var a, Var b, const char* name, F f, DA dfa, DB dfb) {
  require_same_tape(a, b);
  Tape& tape = *a.tape;
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast bc = resolve_broadcast(x.shape(), y.shape(), name);
  const Shape& out_shape = bc.kind == Broadcast::lhs_scalar ? y.shape() : x.shape();
  Tensor out(out_shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[bc.lhs_index(i)], y[bc.rhs_index(i)]);

  return tape.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id, bc, dfa, dfb](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& x = t.value(ai);
    const Tensor& y = t.value(bi);
    if (Tensor* ga = t.grad_sink(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        (*ga)[bc.lhs_index(i)] += g[i] * dfa(x[bc.lhs_index(i)], y[bc.rhs_index(i)]);
      }
    }
    if (Tensor* gb = t.grad_sink(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        (*gb)[bc.rhs_index(i)] += g[i] * dfb(x[bc.lhs_index(i)], y[bc.rhs_index(i)]);
      }
    }
  });
}

// Unary elementwise op; `df` maps (input, output) to the local derivative.
template <class F, class D>
Var unary(Var a, F f, D df) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape->record(std::move(out), {a.id}, [ai = a.id, df](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_sink(ai);
    const Tensor& g = t.upstream(self);
    const Tensor& x = t.value(ai);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df(x[i], y[i]);
  });
}

constexpr double kLogFloor = 1e-12;
constexpr double kExpCeiling = 700.0;

std::size_t last_extent(const Tensor& t, const char* op) {
  if (t.rank() == 0 || t.shape().back() == 0) {
    throw ShapeError(std::string(op) + " needs a non-empty last axis, got " + to_string(t.shape()));
  }
  return t.shape().back();
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Var neg(Var a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(std::min(x, kExpCeiling)); },
      [](double x, double y) { return x > kExpCeiling ? 0.0 : y; });
}

Var log(Var a) {
  return unary(
      a, [](double x) { return std::log(std::max(x, kLogFloor)); },
      [](double x, double) { return x > kLogFloor ? 1.0 / x : 0.0; });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var softmax(Var a) {
  const Tensor& x = a.value();
  const std::size_t cols = last_extent(x, "softmax");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.size() / cols; ++r) {
    const double* in = x.data().data() + r * cols;
    double* o = out.data().data() + r * cols;
    const double m = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - m));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  return a.tape->record(std::move(out), {a.id}, [ai = a.id, cols](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_sink(ai);
    const Tensor& g = t.upstream(self);
    const Tensor& y = t.value(self);
    for (std::size_t r = 0; r < g.size() / cols; ++r) {
      const std::size_t base = r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[base + c] * y[base + c];
      for (std::size_t c = 0; c < cols; ++c) (*ga)[base + c] += y[base + c] * (g[base + c] - dot);
    }
  });
}

Var log_softmax(Var a) {
  const Tensor& x = a.value();
  const std::size_t cols = last_extent(x, "log_softmax");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.size() / cols; ++r) {
    const double* in = x.data().data() + r * cols;
    double* o = out.data().data() + r * cols;
    const double m = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - m);
    const double lse = m + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - lse;
  }
  return a.tape->record(std::move(out), {a.id}, [ai = a.id, cols](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_sink(ai);
    const Tensor& g = t.upstream(self);
    const Tensor& y = t.value(self);
    for (std::size_t r = 0; r < g.size() / cols; ++r) {
      const std::size_t base = r * cols;
      double gsum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gsum += g[base + c];
      for (std::size_t c = 0; c < cols; ++c) (*ga)[base + c] += g[base + c] - std::exp(y[base + c]) * gsum;
    }
  });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v;
  return a.tape->record(Tensor::scalar(s), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_sink(ai);
    const double g = t.upstream(self)[0];
    for (double& v : ga->data()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_spatial(Var a) {
  const Tensor& x = a.value();
  if (x.rank() < 2) throw ShapeError("sum_spatial needs rank >= 2, got " + to_string(x.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t inner = rows == 0 ? 0 : x.size() / rows;
  Tensor out(Shape{x.dim(0), x.dim(1)});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* p = x.data().data() + r * inner;
    for (std::size_t i = 0; i < inner; ++i) s += p[i];
    out[r] = s;
  }
  return a.tape->record(std::move(out), {a.id}, [ai = a.id, inner](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_sink(ai);
    const Tensor& g = t.upstream(self);
    double* p = ga->data().data();
    for (std::size_t r = 0; r < g.size(); ++r, p += inner) {
      for (std::size_t i = 0; i < inner; ++i) p[i] += g[r];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_sink(ai);
    const Tensor& g = t.upstream(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels of zero tensors");
  Tape& tape = *parts[0].tape;
  const Shape& first = parts[0].shape();
  if (first.size() < 2) throw ShapeError("concat_channels needs rank >= 2, got " + to_string(first));

  std::vector<std::size_t> ids;
  std::vector<std::size_t> channels;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    Shape s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat_channels rank mismatch: " + to_string(first) + " vs " + to_string(s));
    s[1] = first[1];
    if (s != first) throw ShapeError("concat_channels shape mismatch: " + to_string(first) + " vs " + to_string(p.shape()));
    ids.push_back(p.id);
    channels.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  const std::size_t N = first[0];
  const std::size_t inner = numel(first) / std::max<std::size_t>(1, N * first[1]);
  Shape out_shape = first;
  out_shape[1] = total;
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t n = 0; n < N; ++n) {
      std::copy_n(v.data().data() + n * channels[k] * inner, channels[k] * inner,
                  out.data().data() + (n * total + offset) * inner);
    }
    offset += channels[k];
  }
  return tape.record(std::move(out), ids, [ids, channels, N, inner, total](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Tensor* gk = t.grad_sink(ids[k])) {
        for (std::size_t n = 0; n < N; ++n) {
          const double* src = g.data().data() + (n * total + offset) * inner;
          double* dst = gk->data().data() + n * channels[k] * inner;
          for (std::size_t i = 0; i < channels[k] * inner; ++i) dst[i] += src[i];
        }
      }
      offset += channels[k];
    }
  });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(x.shape()) + " and " + to_string(y.shape()));
  }
  const std::size_t M = x.dim(0), K = x.dim(1), N = y.dim(1);
  Tensor out(Shape{M, N});
  Eigen::Map<RowMat>(out.data().data(), M, N).noalias() =
      Eigen::Map<const RowMat>(x.data().data(), M, K) * Eigen::Map<const RowMat>(y.data().data(), K, N);
  return a.tape->record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id, M, K, N](Tape& t, std::size_t self) {
    Eigen::Map<const RowMat> G(t.upstream(self).data().data(), M, N);
    if (Tensor* ga = t.grad_sink(ai)) {
      Eigen::Map<RowMat>(ga->data().data(), M, K).noalias() +=
          G * Eigen::Map<const RowMat>(t.value(bi).data().data(), K, N).transpose();
    }
    if (Tensor* gb = t.grad_sink(bi)) {
      Eigen::Map<RowMat>(gb->data().data(), K, N).noalias() +=
          Eigen::Map<const RowMat>(t.value(ai).data().data(), M, K).transpose() * G;
    }
  });
}

Var conv3d(Var input, Var kernel, Var bias, std::size_t stride, std::size_t pad) {
  require_same_tape(input, kernel);
  require_same_tape(input, bias);
  Tensor out = kernels::conv3d(input.value(), kernel.value(), bias.value(), stride, pad);
  return input.tape->record(
      std::move(out), {input.id, kernel.id, bias.id},
      [xi = input.id, ki = kernel.id, bi = bias.id, stride, pad](Tape& t, std::size_t self) {
        kernels::conv3d_backward(t.value(xi), t.value(ki), t.upstream(self), stride, pad, t.grad_sink(xi),
                                 t.grad_sink(ki), t.grad_sink(bi));
      });
}

Var conv3d_transpose(Var input, Var kernel, Var bias, std::size_t stride, std::size_t pad) {
  require_same_tape(input, kernel);
  require_same_tape(input, bias);
  Tensor out = kernels::conv3d_transpose(input.value(), kernel.value(), bias.value(), stride, pad);
  return input.tape->record(
      std::move(out), {input.id, kernel.id, bias.id},
      [xi = input.id, ki = kernel.id, bi = bias.id, stride, pad](Tape& t, std::size_t self) {
        kernels::conv3d_transpose_backward(t.value(xi), t.value(ki), t.upstream(self), stride, pad,
                                           t.grad_sink(xi), t.grad_sink(ki), t.grad_sink(bi));
      });
}

}  // namespace lm
