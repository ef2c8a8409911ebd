#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentmorph/autodiff.hpp"
#include "latentmorph/layers.hpp"
#include "latentmorph/rng.hpp"

namespace lm {

inline constexpr std::size_t kNumClasses = 2;

/// Architecture and loss weights. Encoder: strided conv blocks over
/// `conv_channels`, flatten, two dense heads (mu, log_var). Decoder mirrors it
/// with transposed convs and a sigmoid output. The MLP head reads mu.
struct ModelConfig {
  std::string preset = "desk32";
  std::size_t input_size = 32;
  std::size_t channels = 2;
  std::size_t latent_dim = 16;
  std::vector<std::size_t> conv_channels{16, 32, 64};
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t padding = 1;
  std::vector<std::size_t> mlp_hidden{32};
  double alpha = 0.1;
  double beta = 1.0;
  double dice_smooth = 1.0;

  static ModelConfig desk32();
  static ModelConfig paper80();
  static ModelConfig from_preset(std::string_view name);

  void validate() const;
  /// Spatial extent at the encoder bottleneck.
  std::size_t bottleneck_extent() const;
  std::size_t flat_features() const;

  std::vector<LayerSpec> encoder_layers() const;  // conv blocks, then mu and log_var heads
  std::vector<LayerSpec> decoder_layers() const;  // dense, then transposed conv blocks
  std::vector<LayerSpec> mlp_layers() const;
  std::vector<LayerSpec> all_layers() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Batched latent Gaussian: mu and log_var are [N, d].
struct LatentCode {
  Tensor mu;
  Tensor log_var;
};

struct LatentVars {
  Var mu;
  Var log_var;
};

class VaeModel {
 public:
  /// Parameters bound as leaves on one tape, parallel to parameters().
  struct Bindings {
    Tape* tape = nullptr;
    std::vector<Var> vars;
  };

  VaeModel(ModelConfig config, std::uint64_t seed);
  /// Adopts restored parameters; throws ContractError naming the first
  /// parameter whose name or shape disagrees with the config.
  VaeModel(ModelConfig config, std::vector<Parameter> params);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  Parameter& parameter(std::string_view name);
  const Parameter& parameter(std::string_view name) const;

  Bindings bind(Tape& tape, bool trainable) const;
  /// Copies gradients from the tape into each Parameter::grad.
  void collect_grads(const Tape& tape, const Bindings& bound);

  LatentVars encode(const Bindings& bound, Var x) const;
  Var decode(const Bindings& bound, Var z) const;
  Var logits(const Bindings& bound, Var mu) const;

  // Inference with frozen parameters.
  LatentCode encode(const Tensor& x) const;
  Tensor decode(const Tensor& z) const;
  /// Softmax class probabilities [N, 2] from mu [N, d].
  Tensor classify(const Tensor& mu) const;

 private:
  Var layer(const Bindings& bound, std::size_t layer_index, Var x) const;
  void check_input(const Shape& shape) const;

  ModelConfig config_;
  std::vector<LayerSpec> layers_;
  std::size_t encoder_convs_ = 0;
  std::vector<Parameter> params_;
};

/// z = mu + exp(log_var / 2) * eps; eps is a constant.
Var reparameterize(Var mu, Var log_var, const Tensor& eps);
/// Tensor-level draw of z from a code.
Tensor reparameterize(const LatentCode& code, Rng& rng);

/// Standard normal noise for a batch, keyed by (seed, iteration, sample index)
/// so a draw does not depend on how samples were batched.
Tensor sample_eps(std::uint64_t seed, std::uint64_t iteration, std::span<const std::uint64_t> sample_ids,
                  std::size_t latent_dim);

/// 1 - (2 sum(x * x_hat) + s) / (sum x + sum x_hat + s), per sample and channel, averaged.
Var dice_loss(Var x, Var x_hat, double smooth = 1.0);
/// (1/N) sum_n 1/2 sum_i (mu^2 + exp(log_var) - 1 - log_var).
Var kl_loss(Var mu, Var log_var);
/// Mean negative log-likelihood of the labels, from logits via log-softmax.
Var ce_loss(Var logits, std::span<const int> labels);
/// Same loss from class probabilities [N, 2]; probabilities clamped at 1e-12.
double ce_loss(const Tensor& probs, std::span<const int> labels);

/// Hard Dice overlap of masks thresholded at 0.5, averaged over samples and channels.
double dice_score(const Tensor& x, const Tensor& x_hat);

struct LossComponents {
  double rec = 0.0;
  double kl = 0.0;
  double mlp = 0.0;
  double total = 0.0;
};

struct LossTerms {
  Var total;
  LossComponents components;
  Var x_hat;
  Var logits;
};

/// rec + alpha * kl + beta * mlp. With eps == nullptr the decoder reads mu
/// directly (test-time path).
LossTerms total_loss(const VaeModel& model, const VaeModel::Bindings& bound, Var x, std::span<const int> labels,
                     const Tensor* eps);

}  // namespace lm
