#include "latentmorph/layers.hpp"

#include <cmath>

#include "latentmorph/rng.hpp"

namespace lm {

void LayerSpec::validate() const {
  if (in == 0 || out == 0 || kernel == 0 || stride == 0) {
    throw ShapeError("layer '" + name + "' has a non-positive extent");
  }
  if (kind == LayerKind::dense && (kernel != 1 || stride != 1 || padding != 0)) {
    throw ShapeError("dense layer '" + name + "' cannot have kernel/stride/padding");
  }
}

Shape LayerSpec::weight_shape() const {
  switch (kind) {
    case LayerKind::conv3d: return {out, in, kernel, kernel, kernel};
    case LayerKind::conv3d_transpose: return {in, out, kernel, kernel, kernel};
    case LayerKind::dense: return {in, out};
  }
  return {};
}

std::size_t LayerSpec::fan_in() const {
  switch (kind) {
    case LayerKind::conv3d: return in * kernel * kernel * kernel;
    case LayerKind::conv3d_transpose: {
      // Each output voxel of a strided transposed conv sees (k/stride)^3 taps per input channel.
      const std::size_t taps = std::max<std::size_t>(1, kernel / stride);
      return in * taps * taps * taps;
    }
    case LayerKind::dense: return in;
  }
  return 1;
}

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), adam_m(value.shape()), adam_v(value.shape()) {}

std::vector<Parameter> init_parameters(std::span<const LayerSpec> specs, std::uint64_t seed) {
  std::vector<Parameter> params;
  params.reserve(2 * specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& spec = specs[i];
    spec.validate();
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in()));
    Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::init), i});
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor weight(spec.weight_shape());
    for (double& w : weight.data()) w = dist(rng);
    params.emplace_back(spec.name + ".weight", std::move(weight));
    params.emplace_back(spec.name + ".bias", Tensor(Shape{spec.out}));
  }
  return params;
}

Var apply_layer(const LayerSpec& spec, Var x, Var weight, Var bias) {
  Var y;
  switch (spec.kind) {
    case LayerKind::conv3d: y = conv3d(x, weight, bias, spec.stride, spec.padding); break;
    case LayerKind::conv3d_transpose: y = conv3d_transpose(x, weight, bias, spec.stride, spec.padding); break;
    case LayerKind::dense: y = add(matmul(x, weight), bias); break;
  }
  switch (spec.activation) {
    case Activation::relu: return relu(y);
    case Activation::sigmoid: return sigmoid(y);
    case Activation::none: break;
  }
  return y;
}

double global_grad_norm(std::span<const Parameter> params) {
  double sq = 0.0;
  for (const Parameter& p : params) {
    if (!p.grad) continue;
    for (double g : p.grad->data()) sq += g * g;
  }
  return std::sqrt(sq);
}

void adam_step(std::span<Parameter> params, const AdamConfig& config) {
  for (const Parameter& p : params) {
    if (!p.grad) throw ContractError("adam_step: parameter '" + p.name + "' has no gradient");
    if (p.grad->shape() != p.value.shape()) {
      throw ContractError("adam_step: gradient shape mismatch for '" + p.name + "'");
    }
  }
  double clip = 1.0;
  if (config.clip_norm) {
    const double norm = global_grad_norm(params);
    if (norm > *config.clip_norm) clip = *config.clip_norm / norm;
  }
  for (Parameter& p : params) {
    ++p.step_count;
    const double t = static_cast<double>(p.step_count);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    Tensor& g = *p.grad;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = g[i] * clip;
      p.adam_m[i] = config.beta1 * p.adam_m[i] + (1.0 - config.beta1) * gi;
      p.adam_v[i] = config.beta2 * p.adam_v[i] + (1.0 - config.beta2) * gi * gi;
      const double m_hat = p.adam_m[i] / c1;
      const double v_hat = p.adam_v[i] / c2;
      p.value[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
    g.fill(0.0);
  }
}

}  // namespace lm
