#include "latentmorph/vae.hpp"

#include <algorithm>
#include <cmath>

#include "latentmorph/conv.hpp"

namespace lm {

ModelConfig ModelConfig::desk32() { return ModelConfig{}; }

ModelConfig ModelConfig::paper80() {
  ModelConfig c;
  c.preset = "paper80";
  c.input_size = 80;
  c.latent_dim = 64;
  return c;
}

ModelConfig ModelConfig::from_preset(std::string_view name) {
  if (name == "desk32") return desk32();
  if (name == "paper80") return paper80();
  throw std::invalid_argument("unknown model preset '" + std::string(name) + "'");
}

std::size_t ModelConfig::bottleneck_extent() const {
  std::size_t s = input_size;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) s = kernels::conv_out_extent(s, kernel, stride, padding);
  return s;
}

std::size_t ModelConfig::flat_features() const {
  const std::size_t b = bottleneck_extent();
  return conv_channels.back() * b * b * b;
}

void ModelConfig::validate() const {
  if (channels == 0 || latent_dim == 0 || input_size == 0) throw ShapeError("model config extents must be positive");
  if (conv_channels.empty()) throw ShapeError("model config needs at least one conv block");
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("loss weights alpha and beta must be >= 0");
  std::size_t s = bottleneck_extent();
  for (std::size_t i = 0; i < conv_channels.size(); ++i) s = kernels::conv_transpose_out_extent(s, kernel, stride, padding);
  if (s != input_size) {
    throw ShapeError("decoder output extent " + std::to_string(s) + " does not mirror input extent " +
                     std::to_string(input_size));
  }
}

std::vector<LayerSpec> ModelConfig::encoder_layers() const {
  std::vector<LayerSpec> out;
  std::size_t in = channels;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    out.push_back({"encoder.conv" + std::to_string(i + 1), LayerKind::conv3d, in, conv_channels[i], kernel, stride,
                   padding, Activation::relu});
    in = conv_channels[i];
  }
  out.push_back({"encoder.mu", LayerKind::dense, flat_features(), latent_dim, 1, 1, 0, Activation::none});
  out.push_back({"encoder.log_var", LayerKind::dense, flat_features(), latent_dim, 1, 1, 0, Activation::none});
  return out;
}

std::vector<LayerSpec> ModelConfig::decoder_layers() const {
  std::vector<LayerSpec> out;
  out.push_back({"decoder.dense", LayerKind::dense, latent_dim, flat_features(), 1, 1, 0, Activation::relu});
  const std::size_t n = conv_channels.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t in = conv_channels[n - 1 - i];
    const bool last = i + 1 == n;
    const std::size_t o = last ? channels : conv_channels[n - 2 - i];
    out.push_back({"decoder.deconv" + std::to_string(i + 1), LayerKind::conv3d_transpose, in, o, kernel, stride,
                   padding, last ? Activation::sigmoid : Activation::relu});
  }
  return out;
}

std::vector<LayerSpec> ModelConfig::mlp_layers() const {
  std::vector<LayerSpec> out;
  std::size_t in = latent_dim;
  for (std::size_t i = 0; i < mlp_hidden.size(); ++i) {
    out.push_back({"mlp.fc" + std::to_string(i + 1), LayerKind::dense, in, mlp_hidden[i], 1, 1, 0, Activation::relu});
    in = mlp_hidden[i];
  }
  out.push_back({"mlp.out", LayerKind::dense, in, kNumClasses, 1, 1, 0, Activation::none});
  return out;
}

std::vector<LayerSpec> ModelConfig::all_layers() const {
  std::vector<LayerSpec> all = encoder_layers();
  for (auto& l : decoder_layers()) all.push_back(l);
  for (auto& l : mlp_layers()) all.push_back(l);
  return all;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"preset", preset},       {"input_size", input_size}, {"channels", channels},
          {"latent_dim", latent_dim}, {"conv_channels", conv_channels}, {"kernel", kernel},
          {"stride", stride},       {"padding", padding},       {"mlp_hidden", mlp_hidden},
          {"alpha", alpha},         {"beta", beta},             {"dice_smooth", dice_smooth}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.input_size = j.at("input_size").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.stride = j.at("stride").get<std::size_t>();
  c.padding = j.at("padding").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::vector<std::size_t>>();
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.dice_smooth = j.at("dice_smooth").get<double>();
  return c;
}

VaeModel::VaeModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), layers_(config_.all_layers()), encoder_convs_(config_.conv_channels.size()) {
  config_.validate();
  params_ = init_parameters(layers_, seed);
}

VaeModel::VaeModel(ModelConfig config, std::vector<Parameter> params)
    : config_(std::move(config)), layers_(config_.all_layers()), encoder_convs_(config_.conv_channels.size()) {
  config_.validate();
  const std::vector<Parameter> expected = init_parameters(layers_, 0);
  if (params.size() != expected.size()) {
    throw ContractError("checkpoint holds " + std::to_string(params.size()) + " parameters, architecture expects " +
                        std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (params[i].name != expected[i].name) {
      throw ContractError("parameter mismatch: expected '" + expected[i].name + "', found '" + params[i].name + "'");
    }
    if (params[i].value.shape() != expected[i].value.shape()) {
      throw ContractError("parameter '" + params[i].name + "' has shape " + to_string(params[i].value.shape()) +
                          ", architecture expects " + to_string(expected[i].value.shape()));
    }
  }
  params_ = std::move(params);
}

std::size_t VaeModel::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

Parameter& VaeModel::parameter(std::string_view name) {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return *it;
}

const Parameter& VaeModel::parameter(std::string_view name) const {
  return const_cast<VaeModel*>(this)->parameter(name);
}

VaeModel::Bindings VaeModel::bind(Tape& tape, bool trainable) const {
  Bindings b{&tape, {}};
  b.vars.reserve(params_.size());
  for (const Parameter& p : params_) b.vars.push_back(trainable ? tape.variable(p.value) : tape.constant(p.value));
  return b;
}

void VaeModel::collect_grads(const Tape& tape, const Bindings& bound) {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].grad = tape.grad(bound.vars[i]);
}

Var VaeModel::layer(const Bindings& bound, std::size_t index, Var x) const {
  return apply_layer(layers_[index], x, bound.vars[2 * index], bound.vars[2 * index + 1]);
}

void VaeModel::check_input(const Shape& s) const {
  const std::size_t S = config_.input_size;
  if (s.size() != 5 || s[1] != config_.channels || s[2] != S || s[3] != S || s[4] != S) {
    throw ShapeError("encoder expects [N, " + std::to_string(config_.channels) + ", " + std::to_string(S) + ", " +
                     std::to_string(S) + ", " + std::to_string(S) + "], got " + to_string(s));
  }
}

LatentVars VaeModel::encode(const Bindings& bound, Var x) const {
  check_input(x.shape());
  Var h = x;
  for (std::size_t i = 0; i < encoder_convs_; ++i) h = layer(bound, i, h);
  h = reshape(h, Shape{x.shape()[0], config_.flat_features()});
  return {layer(bound, encoder_convs_, h), layer(bound, encoder_convs_ + 1, h)};
}

Var VaeModel::decode(const Bindings& bound, Var z) const {
  const Shape& zs = z.shape();
  if (zs.size() != 2 || zs[1] != config_.latent_dim) {
    throw ShapeError("decoder expects [N, " + std::to_string(config_.latent_dim) + "], got " + to_string(zs));
  }
  const std::size_t first = encoder_convs_ + 2;
  const std::size_t b = config_.bottleneck_extent();
  Var h = layer(bound, first, z);
  h = reshape(h, Shape{zs[0], config_.conv_channels.back(), b, b, b});
  for (std::size_t i = 0; i < encoder_convs_; ++i) h = layer(bound, first + 1 + i, h);
  return h;
}

Var VaeModel::logits(const Bindings& bound, Var mu) const {
  const Shape& s = mu.shape();
  if (s.size() != 2 || s[1] != config_.latent_dim) {
    throw ShapeError("MLP expects [N, " + std::to_string(config_.latent_dim) + "], got " + to_string(s));
  }
  Var h = mu;
  for (std::size_t i = 2 * encoder_convs_ + 3; i < layers_.size(); ++i) h = layer(bound, i, h);
  return h;
}

LatentCode VaeModel::encode(const Tensor& x) const {
  Tape tape;
  const Bindings b = bind(tape, false);
  const LatentVars code = encode(b, tape.constant(x));
  return {code.mu.value(), code.log_var.value()};
}

Tensor VaeModel::decode(const Tensor& z) const {
  Tape tape;
  return decode(bind(tape, false), tape.constant(z)).value();
}

Tensor VaeModel::classify(const Tensor& mu) const {
  Tape tape;
  return softmax(logits(bind(tape, false), tape.constant(mu))).value();
}

Var reparameterize(Var mu, Var log_var, const Tensor& eps) {
  if (eps.shape() != mu.shape()) {
    throw ShapeError("reparameterize: eps " + to_string(eps.shape()) + " vs mu " + to_string(mu.shape()));
  }
  Var sigma = exp(scale(log_var, 0.5));
  return add(mu, mul(sigma, mu.tape->constant(eps)));
}

Tensor reparameterize(const LatentCode& code, Rng& rng) {
  if (code.mu.shape() != code.log_var.shape()) throw ShapeError("latent code mu/log_var shape mismatch");
  std::normal_distribution<double> normal;
  Tensor z(code.mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = code.mu[i] + std::exp(0.5 * code.log_var[i]) * normal(rng);
  return z;
}

Tensor sample_eps(std::uint64_t seed, std::uint64_t iteration, std::span<const std::uint64_t> sample_ids,
                  std::size_t latent_dim) {
  Tensor eps(Shape{sample_ids.size(), latent_dim});
  for (std::size_t n = 0; n < sample_ids.size(); ++n) {
    Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::reparam), iteration, sample_ids[n]});
    std::normal_distribution<double> normal;
    for (std::size_t i = 0; i < latent_dim; ++i) eps[n * latent_dim + i] = normal(rng);
  }
  return eps;
}

Var dice_loss(Var x, Var x_hat, double smooth) {
  if (x.shape() != x_hat.shape()) {
    throw ShapeError("dice_loss: target " + to_string(x.shape()) + " vs reconstruction " + to_string(x_hat.shape()));
  }
  Var overlap = sum_spatial(mul(x, x_hat));
  Var denom = add_scalar(add(sum_spatial(x), sum_spatial(x_hat)), smooth);
  Var dice = div(add_scalar(scale(overlap, 2.0), smooth), denom);
  return add_scalar(neg(mean(dice)), 1.0);
}

Var kl_loss(Var mu, Var log_var) {
  if (mu.shape() != log_var.shape() || mu.shape().size() != 2) {
    throw ShapeError("kl_loss: mu " + to_string(mu.shape()) + " vs log_var " + to_string(log_var.shape()));
  }
  Var terms = sub(add(mul(mu, mu), exp(log_var)), add_scalar(log_var, 1.0));
  return scale(sum(terms), 0.5 / static_cast<double>(mu.shape()[0]));
}

namespace {

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor t(Shape{labels.size(), classes});
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= classes) {
      throw std::invalid_argument("class label " + std::to_string(labels[n]) + " out of range");
    }
    t[n * classes + static_cast<std::size_t>(labels[n])] = 1.0;
  }
  return t;
}

}  // namespace

Var ce_loss(Var logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw ShapeError("ce_loss: logits " + to_string(s) + " for " + std::to_string(labels.size()) + " labels");
  }
  Var picked = mul(log_softmax(logits), logits.tape->constant(one_hot(labels, s[1])));
  return scale(sum(picked), -1.0 / static_cast<double>(labels.size()));
}

double ce_loss(const Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw ShapeError("ce_loss: probs " + to_string(probs.shape()) + " for " + std::to_string(labels.size()) + " labels");
  }
  const Tensor hot = one_hot(labels, probs.dim(1));
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (hot[i] != 0.0) total -= std::log(std::max(probs[i], 1e-12));
  }
  return total / static_cast<double>(labels.size());
}

double dice_score(const Tensor& x, const Tensor& x_hat) {
  if (x.shape() != x_hat.shape() || x.rank() < 2) {
    throw ShapeError("dice_score: " + to_string(x.shape()) + " vs " + to_string(x_hat.shape()));
  }
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t inner = x.size() / rows;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t a = 0, b = 0, both = 0;
    for (std::size_t i = r * inner; i < (r + 1) * inner; ++i) {
      const bool in_a = x[i] >= 0.5, in_b = x_hat[i] >= 0.5;
      a += in_a;
      b += in_b;
      both += in_a && in_b;
    }
    total += a + b == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
  }
  return total / static_cast<double>(rows);
}

LossTerms total_loss(const VaeModel& model, const VaeModel::Bindings& bound, Var x, std::span<const int> labels,
                     const Tensor* eps) {
  const ModelConfig& cfg = model.config();
  const LatentVars code = model.encode(bound, x);
  Var z = eps ? reparameterize(code.mu, code.log_var, *eps) : code.mu;
  Var x_hat = model.decode(bound, z);
  Var rec = dice_loss(x, x_hat, cfg.dice_smooth);
  Var kl = kl_loss(code.mu, code.log_var);
  Var logits = model.logits(bound, code.mu);
  Var mlp = ce_loss(logits, labels);
  Var total = add(add(rec, scale(kl, cfg.alpha)), scale(mlp, cfg.beta));

  LossTerms out{total, {}, x_hat, logits};
  out.components.rec = rec.value().item();
  out.components.kl = kl.value().item();
  out.components.mlp = mlp.value().item();
  out.components.total = total.value().item();
  return out;
}

}  // namespace lm
