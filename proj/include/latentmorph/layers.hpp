#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latentmorph/autodiff.hpp"
#include "latentmorph/tensor.hpp"

namespace lm {

enum class LayerKind { conv3d, conv3d_transpose, dense };
enum class Activation { none, relu, sigmoid };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::dense;
  std::size_t in = 1;   // channels or features
  std::size_t out = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Activation activation = Activation::none;

  void validate() const;
  Shape weight_shape() const;
  /// Inputs feeding one output unit; drives the init range.
  std::size_t fan_in() const;
};

/// A trainable tensor plus its Adam state.
struct Parameter {
  std::string name;
  Tensor value;
  std::optional<Tensor> grad;
  Tensor adam_m;
  Tensor adam_v;
  std::uint64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string name, Tensor value);
};

/// Two parameters per layer: "<name>.weight" and "<name>.bias".
/// Weights are Kaiming-uniform in [-sqrt(6/fan_in), sqrt(6/fan_in)], biases zero.
std::vector<Parameter> init_parameters(std::span<const LayerSpec> specs, std::uint64_t seed);

/// Applies the layer and its activation.
Var apply_layer(const LayerSpec& spec, Var x, Var weight, Var bias);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global-norm clipping threshold; disabled when empty.
  std::optional<double> clip_norm;
};

/// Bias-corrected Adam update. Every parameter must carry a gradient; the
/// gradients are zeroed afterwards.
void adam_step(std::span<Parameter> params, const AdamConfig& config);

double global_grad_norm(std::span<const Parameter> params);

}  // namespace lm
