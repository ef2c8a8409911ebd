#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "latentmorph/gradcheck.hpp"
#include "latentmorph/vae.hpp"
#include "support.hpp"

using lm::ModelConfig;
using lm::Shape;
using lm::Tape;
using lm::Tensor;
using lm::VaeModel;
using lm::Var;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.preset = "tiny";
  c.input_size = 8;
  c.latent_dim = 4;
  c.conv_channels = {3, 4};
  c.mlp_hidden = {5};
  return c;
}

Tensor random_mask(const Shape& shape, std::mt19937_64& rng, double p = 0.4) {
  std::bernoulli_distribution on(p);
  Tensor t(shape);
  for (double& v : t.data()) v = on(rng) ? 1.0 : 0.0;
  return t;
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Parameters of a conv / dense stack counted by hand.
std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t k3 = c.kernel * c.kernel * c.kernel;
  std::size_t n = 0, in = c.channels;
  for (std::size_t ch : c.conv_channels) n += ch * in * k3 + ch, in = ch;
  std::size_t b = c.input_size;
  for (std::size_t i = 0; i < c.conv_channels.size(); ++i) b /= 2;
  const std::size_t flat = c.conv_channels.back() * b * b * b;
  n += 2 * (flat * c.latent_dim + c.latent_dim);
  n += c.latent_dim * flat + flat;
  for (std::size_t i = c.conv_channels.size(); i-- > 0;) {
    const std::size_t out = i == 0 ? c.channels : c.conv_channels[i - 1];
    n += c.conv_channels[i] * out * k3 + out;
  }
  in = c.latent_dim;
  for (std::size_t h : c.mlp_hidden) n += in * h + h, in = h;
  return n + in * 2 + 2;
}

}  // namespace

TEST(ModelConfig, DeskPresetShapes) {
  const ModelConfig c = ModelConfig::desk32();
  c.validate();
  EXPECT_EQ(c.bottleneck_extent(), 4u);
  EXPECT_EQ(c.flat_features(), 64u * 64u);
  const VaeModel model(c, 1);
  EXPECT_EQ(model.parameter_count(), expected_parameter_count(c));
  EXPECT_EQ(model.parameter_count(), 533284u);
}

TEST(ModelConfig, PaperPresetUsesLatent64) {
  const ModelConfig c = ModelConfig::paper80();
  c.validate();
  EXPECT_EQ(c.input_size, 80u);
  EXPECT_EQ(c.latent_dim, 64u);
  EXPECT_EQ(c.bottleneck_extent(), 10u);
  EXPECT_THROW(ModelConfig::from_preset("nope"), std::invalid_argument);
}

TEST(ModelConfig, JsonRoundTrip) {
  const ModelConfig c = tiny();
  EXPECT_EQ(ModelConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(ModelConfig, RejectsNonMirroringDecoder) {
  ModelConfig c = tiny();
  c.input_size = 9;
  EXPECT_THROW(c.validate(), lm::ShapeError);
}

TEST(VaeModel, ForwardShapes) {
  const VaeModel model(tiny(), 3);
  std::mt19937_64 rng(1);
  const Tensor x = random_mask({3, 2, 8, 8, 8}, rng);
  const lm::LatentCode code = model.encode(x);
  EXPECT_EQ(code.mu.shape(), (Shape{3, 4}));
  EXPECT_EQ(code.log_var.shape(), (Shape{3, 4}));
  const Tensor y = model.decode(code.mu);
  EXPECT_EQ(y.shape(), x.shape());
  for (double v : y.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  const Tensor p = model.classify(code.mu);
  EXPECT_EQ(p.shape(), (Shape{3, 2}));
  for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(p[2 * n] + p[2 * n + 1], 1.0, 1e-15);
  EXPECT_THROW(model.encode(Tensor(Shape{1, 2, 4, 4, 4})), lm::ShapeError);
}

TEST(VaeModel, RestoreRejectsMismatchedParameter) {
  const VaeModel model(tiny(), 3);
  ModelConfig other = tiny();
  other.latent_dim = 5;
  try {
    VaeModel restored(other, model.parameters());
    FAIL() << "expected a ContractError";
  } catch (const lm::ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.mu.weight"), std::string::npos) << e.what();
  }
}

TEST(Losses, KlClosedForms) {
  Tape tape;
  Var zero = tape.constant(Tensor(Shape{2, 3}));
  EXPECT_EQ(lm::kl_loss(zero, zero).value().item(), 0.0);

  Var mu = tape.constant(Tensor(Shape{1, 1}, 1.0));
  Var lv = tape.constant(Tensor(Shape{1, 1}, 0.0));
  EXPECT_NEAR(lm::kl_loss(mu, lv).value().item(), 0.5, 1e-12);

  // Per-dimension closed form 1/2 (mu^2 + e^lv - 1 - lv), averaged over the batch.
  std::mt19937_64 rng(2);
  const Tensor m = random_tensor({4, 3}, rng), l = random_tensor({4, 3}, rng);
  double want = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) want += 0.5 * (m[i] * m[i] + std::exp(l[i]) - 1 - l[i]);
  EXPECT_NEAR(lm::kl_loss(tape.constant(m), tape.constant(l)).value().item(), want / 4, 1e-12);
}

TEST(Losses, CrossEntropyClosedForms) {
  const std::vector<int> labels{0, 1, 1, 0};
  Tape tape;
  Var uniform_logits = tape.constant(Tensor(Shape{4, 2}, 0.3));
  EXPECT_NEAR(lm::ce_loss(uniform_logits, labels).value().item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(lm::ce_loss(Tensor(Shape{4, 2}, 0.5), labels), std::log(2.0), 1e-12);

  const Tensor sure(Shape{1, 2}, std::vector<double>{1 - 1e-12, 1e-12});
  const std::vector<int> zero{0};
  EXPECT_NEAR(lm::ce_loss(sure, zero), 0.0, 1e-11);
  const std::vector<int> one{1};
  EXPECT_NEAR(lm::ce_loss(Tensor(Shape{1, 2}, std::vector<double>{1.0, 0.0}), one), -std::log(1e-12), 1e-9);
}

TEST(Losses, DiceOfIdenticalLargeMasksIsTiny) {
  std::mt19937_64 rng(4);
  const Tensor x = random_mask({2, 2, 16, 16, 16}, rng, 0.3);
  Tape tape;
  const double d = lm::dice_loss(tape.constant(x), tape.constant(x)).value().item();
  EXPECT_LE(d, 1e-3);
  EXPECT_GE(d, 0.0);
  EXPECT_DOUBLE_EQ(lm::dice_score(x, x), 1.0);
}

TEST(Losses, DiceClosedFormAndRange) {
  // One sample, one channel: |x| = 3, |y| = 2, overlap 1 -> 1 - (2 + 1) / (5 + 1).
  Tape tape;
  Var x = tape.constant(Tensor(Shape{1, 1, 4}, std::vector<double>{1, 1, 1, 0}));
  Var y = tape.constant(Tensor(Shape{1, 1, 4}, std::vector<double>{0, 0, 1, 1}));
  EXPECT_NEAR(lm::dice_loss(x, y).value().item(), 0.5, 1e-15);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const Tensor a = random_mask({2, 2, 3, 3, 3}, rng), b = random_tensor({2, 2, 3, 3, 3}, rng, 0, 1);
    const double d = lm::dice_loss(tape.constant(a), tape.constant(b)).value().item();
    ASSERT_GE(d, 0.0);
    ASSERT_LT(d, 1.0);
  }
}

TEST(Losses, HardDiceCountsEmptyPairAsOne) {
  const Tensor empty(Shape{1, 1, 8});
  EXPECT_DOUBLE_EQ(lm::dice_score(empty, empty), 1.0);
  const Tensor full(Shape{1, 1, 8}, 1.0);
  EXPECT_DOUBLE_EQ(lm::dice_score(full, empty), 0.0);
}

TEST(Reparameterize, MonteCarloMoments) {
  const lm::LatentCode code{Tensor(Shape{1, 2}, std::vector<double>{1.5, -0.5}),
                            Tensor(Shape{1, 2}, std::vector<double>{std::log(4.0), std::log(0.25)})};
  lm::Rng rng(17);
  const int draws = 100000;
  double s[2] = {0, 0}, ss[2] = {0, 0};
  for (int i = 0; i < draws; ++i) {
    const Tensor z = lm::reparameterize(code, rng);
    for (int j = 0; j < 2; ++j) s[j] += z[j], ss[j] += z[j] * z[j];
  }
  const double want_mean[2] = {1.5, -0.5}, want_var[2] = {4.0, 0.25};
  for (int j = 0; j < 2; ++j) {
    const double mean = s[j] / draws, var = ss[j] / draws - mean * mean;
    // Five standard errors of the sample mean and variance.
    EXPECT_NEAR(mean, want_mean[j], 5 * std::sqrt(want_var[j] / draws));
    EXPECT_NEAR(var, want_var[j], 5 * want_var[j] * std::sqrt(2.0 / draws));
  }
}

TEST(Reparameterize, TapeVersionIsMuPlusSigmaEps) {
  Tape tape;
  Var mu = tape.constant(Tensor(Shape{1, 2}, std::vector<double>{1.0, 2.0}));
  Var lv = tape.constant(Tensor(Shape{1, 2}, std::vector<double>{0.0, std::log(9.0)}));
  const Tensor eps(Shape{1, 2}, std::vector<double>{0.5, -1.0});
  const Tensor z = lm::reparameterize(mu, lv, eps).value();
  EXPECT_DOUBLE_EQ(z[0], 1.5);
  EXPECT_NEAR(z[1], 2.0 - 3.0, 1e-15);
}

TEST(Reparameterize, NoiseIndependentOfBatchComposition) {
  const std::vector<std::uint64_t> batch_a{3, 7, 11}, batch_b{11, 3};
  const Tensor a = lm::sample_eps(42, 5, batch_a, 4);
  const Tensor b = lm::sample_eps(42, 5, batch_b, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a[8 + i], b[i]);
    EXPECT_EQ(a[i], b[4 + i]);
  }
  EXPECT_NE(lm::sample_eps(42, 6, batch_a, 4), a);
  EXPECT_NE(lm::sample_eps(43, 5, batch_a, 4), a);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  // Some ReLU pre-activations sit within 1e-5 of zero; a small step keeps the stencil on one side.
  for (std::uint64_t instance = 0; instance < 20; ++instance)
    EXPECT_LE(lm::testing::total_loss_gradient_error(instance, 1e-7), 1e-4) << "instance " << instance;
}

TEST(TotalLoss, ComponentsAndWeights) {
  std::mt19937_64 rng(9);
  const Tensor x = random_mask({2, 2, 8, 8, 8}, rng);
  const std::vector<int> labels{0, 1};
  const std::vector<std::uint64_t> ids{0, 1};
  const Tensor eps = lm::sample_eps(1, 0, ids, 4);

  auto run = [&](double alpha, double beta) {
    ModelConfig cfg = tiny();
    cfg.alpha = alpha;
    cfg.beta = beta;
    const VaeModel model(cfg, 5);
    Tape tape;
    return lm::total_loss(model, model.bind(tape, false), tape.constant(x), labels, &eps).components;
  };
  const lm::LossComponents base = run(0.1, 1.0);
  EXPECT_GE(base.rec, 0.0);
  EXPECT_GE(base.kl, 0.0);
  EXPECT_GE(base.mlp, 0.0);
  EXPECT_NEAR(base.total, base.rec + 0.1 * base.kl + base.mlp, 1e-12);

  const lm::LossComponents none = run(0.0, 0.0);
  EXPECT_EQ(none.total, none.rec);

  // Scaling alpha scales only the KL contribution, and likewise for beta.
  const lm::LossComponents a3 = run(0.3, 1.0);
  EXPECT_NEAR(a3.total - base.total, 0.2 * base.kl, 1e-12);
  const lm::LossComponents b2 = run(0.1, 2.0);
  EXPECT_NEAR(b2.total - base.total, base.mlp, 1e-12);
}

TEST(TotalLoss, TestTimePathIsDeterministic) {
  const VaeModel model(tiny(), 8);
  std::mt19937_64 rng(10);
  const Tensor x = random_mask({2, 2, 8, 8, 8}, rng);
  const lm::LatentCode a = model.encode(x), b = model.encode(x);
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(model.decode(a.mu), model.decode(b.mu));
  EXPECT_EQ(model.classify(a.mu), model.classify(b.mu));

  const std::vector<int> labels{0, 1};
  Tape t1, t2;
  const double l1 = lm::total_loss(model, model.bind(t1, false), t1.constant(x), labels, nullptr).components.total;
  const double l2 = lm::total_loss(model, model.bind(t2, false), t2.constant(x), labels, nullptr).components.total;
  EXPECT_EQ(l1, l2);
}
