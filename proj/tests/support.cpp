#include "support.hpp"

#include <algorithm>
#include <cmath>

#include "latentmorph/conv.hpp"
#include "latentmorph/gradcheck.hpp"
#include "latentmorph/vae.hpp"

namespace lm::testing {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Shape random_shape(std::mt19937_64& rng, std::size_t rank) {
  Shape s(rank);
  for (auto& d : s) d = pick(rng, 1, 4);
  return s;
}

// Values at least 0.05 from the relu kink.
Tensor away_from_zero(const Shape& shape, std::mt19937_64& rng) {
  Tensor t = random_tensor(shape, rng, 0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.data()) v = sign(rng) ? v : -v;
  return t;
}

using Draw = std::function<std::vector<Tensor>(std::mt19937_64&)>;

OpCase fixed(std::string name, Draw draw, Builder op) {
  return {std::move(name), [draw, op](std::mt19937_64& rng) { return OpInstance{draw(rng), op}; }};
}

Builder binary(Var (*f)(Var, Var), bool swap = false) {
  return [f, swap](Tape&, const std::vector<Var>& v) { return swap ? f(v[1], v[0]) : f(v[0], v[1]); };
}

Builder unary(Var (*f)(Var)) {
  return [f](Tape&, const std::vector<Var>& v) { return f(v[0]); };
}

}  // namespace

std::vector<OpCase> primitive_op_cases() {
  const Draw same = [](std::mt19937_64& rng) {
    const Shape s = random_shape(rng, 3);
    return std::vector<Tensor>{random_tensor(s, rng), random_tensor(s, rng, 0.5, 2.0)};
  };
  const Draw scalar = [](std::mt19937_64& rng) {
    return std::vector<Tensor>{random_tensor(random_shape(rng, 2), rng), random_tensor(Shape{}, rng, 0.5, 2.0)};
  };
  const Draw channel = [](std::mt19937_64& rng) {
    const Shape s = random_shape(rng, 4);
    return std::vector<Tensor>{random_tensor(s, rng), random_tensor(Shape{s[1]}, rng, 0.5, 2.0)};
  };
  const Draw plain = [](std::mt19937_64& rng) {
    return std::vector<Tensor>{random_tensor(random_shape(rng, 3), rng, -2, 2)};
  };
  const Draw positive = [](std::mt19937_64& rng) {
    return std::vector<Tensor>{random_tensor(random_shape(rng, 3), rng, 0.1, 3.0)};
  };
  const Draw kinked = [](std::mt19937_64& rng) { return std::vector<Tensor>{away_from_zero(random_shape(rng, 3), rng)}; };
  const Draw rows = [](std::mt19937_64& rng) {
    return std::vector<Tensor>{random_tensor(random_shape(rng, 2), rng, -3, 3)};
  };
  const Draw rank4 = [](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor(random_shape(rng, 4), rng)}; };

  std::vector<OpCase> cases{
      fixed("add", same, binary(lm::add)),
      fixed("sub", same, binary(lm::sub)),
      fixed("mul", same, binary(lm::mul)),
      fixed("div", same, binary(lm::div)),
      fixed("add scalar", scalar, binary(lm::add)),
      fixed("sub scalar", scalar, binary(lm::sub, true)),
      fixed("mul scalar", scalar, binary(lm::mul, true)),
      fixed("div scalar", scalar, binary(lm::div)),
      fixed("add channel", channel, binary(lm::add)),
      fixed("sub channel", channel, binary(lm::sub)),
      fixed("mul channel", channel, binary(lm::mul)),
      fixed("div channel", channel, binary(lm::div)),
      fixed("scale", plain, [](Tape&, const std::vector<Var>& v) { return lm::scale(v[0], -1.7); }),
      fixed("add_scalar", plain, [](Tape&, const std::vector<Var>& v) { return lm::add_scalar(v[0], 0.3); }),
      fixed("neg", plain, unary(lm::neg)),
      fixed("exp", plain, unary(lm::exp)),
      fixed("log", positive, unary(lm::log)),
      fixed("relu", kinked, unary(lm::relu)),
      fixed("sigmoid", plain, unary(lm::sigmoid)),
      fixed("softmax", rows, unary(lm::softmax)),
      fixed("log_softmax", rows, unary(lm::log_softmax)),
      fixed("sum", rank4, unary(lm::sum)),
      fixed("mean", rank4, unary(lm::mean)),
      fixed("sum_spatial", rank4, unary(lm::sum_spatial)),
      fixed("reshape", plain,
            [](Tape&, const std::vector<Var>& v) { return lm::reshape(v[0], Shape{v[0].value().size()}); }),
      fixed(
          "concat_channels",
          [](std::mt19937_64& rng) {
            Shape a = random_shape(rng, 4), b = a;
            b[1] = pick(rng, 1, 3);
            return std::vector<Tensor>{random_tensor(a, rng), random_tensor(b, rng)};
          },
          [](Tape&, const std::vector<Var>& v) { return lm::concat_channels(v); }),
      fixed(
          "matmul",
          [](std::mt19937_64& rng) {
            const Shape a = random_shape(rng, 2);
            return std::vector<Tensor>{random_tensor(a, rng), random_tensor(Shape{a[1], pick(rng, 1, 4)}, rng)};
          },
          binary(lm::matmul)),
  };

  cases.push_back({"conv3d", [](std::mt19937_64& rng) {
                     const std::size_t k = pick(rng, 1, 3), s = pick(rng, 1, 2), p = pick(rng, 0, k - 1);
                     const std::size_t cin = pick(rng, 1, 2), cout = pick(rng, 1, 2), ext = pick(rng, k, 5);
                     std::vector<Tensor> in{random_tensor({pick(rng, 1, 2), cin, ext, ext, ext}, rng),
                                            random_tensor({cout, cin, k, k, k}, rng), random_tensor({cout}, rng)};
                     return OpInstance{std::move(in), [s, p](Tape&, const std::vector<Var>& v) {
                                         return lm::conv3d(v[0], v[1], v[2], s, p);
                                       }};
                   }});
  cases.push_back({"conv3d_transpose", [](std::mt19937_64& rng) {
                     const std::size_t k = pick(rng, 2, 4), s = pick(rng, 1, 2), p = pick(rng, 0, (k - 1) / 2);
                     const std::size_t cin = pick(rng, 1, 2), cout = pick(rng, 1, 2), ext = pick(rng, 1, 3);
                     std::vector<Tensor> in{random_tensor({pick(rng, 1, 2), cin, ext, ext, ext}, rng),
                                            random_tensor({cin, cout, k, k, k}, rng), random_tensor({cout}, rng)};
                     return OpInstance{std::move(in), [s, p](Tape&, const std::vector<Var>& v) {
                                         return lm::conv3d_transpose(v[0], v[1], v[2], s, p);
                                       }};
                   }});
  return cases;
}

double gradient_error(const OpInstance& instance, std::mt19937_64& rng, double h) {
  const auto& inputs = instance.inputs;
  Tensor weights;
  {
    Tape probe;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(probe.constant(t));
    weights = random_tensor(instance.op(probe, vars).value().shape(), rng);
  }
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
  tape.backward(lm::sum(lm::mul(instance.op(tape, vars), tape.constant(weights))));

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor& xk) {
      Tape t2;
      std::vector<Var> v2;
      for (std::size_t j = 0; j < inputs.size(); ++j) v2.push_back(t2.constant(j == k ? xk : inputs[j]));
      return dot(instance.op(t2, v2).value(), weights);
    };
    const Tensor analytic = tape.grad(vars[k]);
    if (analytic.shape() != inputs[k].shape()) return INFINITY;
    worst = std::max(worst, lm::relative_error(analytic, lm::finite_diff_grad(f, inputs[k], h)));
  }
  return worst;
}

double total_loss_gradient_error(std::uint64_t instance, double h) {
  ModelConfig cfg;
  cfg.preset = "tiny";
  cfg.input_size = 8;
  cfg.latent_dim = 4;
  cfg.conv_channels = {3, 4};
  cfg.mlp_hidden = {5};

  VaeModel model(cfg, 100 + instance);
  std::mt19937_64 rng(200 + instance);
  // Nonzero biases so no parameter sits at its init symmetry.
  for (Parameter& p : model.parameters())
    if (p.name.ends_with(".bias")) p.value = random_tensor(p.value.shape(), rng, -0.1, 0.1);
  Tensor x(Shape{2, 2, 8, 8, 8});
  std::bernoulli_distribution on(0.4);
  for (double& v : x.data()) v = on(rng) ? 1.0 : 0.0;
  const std::vector<int> labels{static_cast<int>(instance % 2), static_cast<int>(1 - instance % 2)};
  const std::vector<std::uint64_t> ids{0, 1};
  const Tensor eps = sample_eps(7, instance, ids, cfg.latent_dim);

  Tape tape;
  const auto bound = model.bind(tape, true);
  tape.backward(total_loss(model, bound, tape.constant(x), labels, &eps).total);

  std::vector<double> a_all, n_all;
  for (std::size_t k = 0; k < model.parameters().size(); ++k) {
    const Tensor base = model.parameters()[k].value;
    auto f = [&](const Tensor& v) {
      model.parameters()[k].value = v;
      Tape t2;
      const double out = total_loss(model, model.bind(t2, false), t2.constant(x), labels, &eps).components.total;
      model.parameters()[k].value = base;
      return out;
    };
    const Tensor g = tape.grad(bound.vars[k]);
    const Tensor fd = finite_diff_grad(f, base, h);
    a_all.insert(a_all.end(), g.data().begin(), g.data().end());
    n_all.insert(n_all.end(), fd.data().begin(), fd.data().end());
  }
  return relative_error(Tensor(Shape{a_all.size()}, a_all), Tensor(Shape{n_all.size()}, n_all));
}

ConvCase conforming_case(std::mt19937_64& rng) {
  ConvCase c{};
  c.n = pick(rng, 1, 2);
  c.cin = pick(rng, 1, 3);
  c.cout = pick(rng, 1, 3);
  c.k = pick(rng, 1, 4);
  c.s = pick(rng, 1, 3);
  c.p = pick(rng, 0, (c.k - 1) / 2);
  c.d = (pick(rng, 1, 4) - 1) * c.s + c.k - 2 * c.p;
  c.h = (pick(rng, 1, 4) - 1) * c.s + c.k - 2 * c.p;
  c.w = (pick(rng, 1, 4) - 1) * c.s + c.k - 2 * c.p;
  return c;
}

std::array<double, 2> adjoint_gap(const ConvCase& c, std::mt19937_64& rng) {
  const Tensor x = random_tensor({c.n, c.cin, c.d, c.h, c.w}, rng);
  const Tensor w = random_tensor({c.cout, c.cin, c.k, c.k, c.k}, rng);
  const Tensor cx = kernels::conv3d(x, w, Tensor({c.cout}), c.s, c.p);
  const Tensor y = random_tensor(cx.shape(), rng);
  const Tensor ty = kernels::conv3d_transpose(y, w, Tensor({c.cin}), c.s, c.p);
  if (ty.shape() != x.shape()) return {INFINITY, 0.0};
  const double lhs = dot(cx, y);
  return {std::abs(lhs - dot(x, ty)), std::abs(lhs)};
}

std::array<double, 3> mean_position(const Mask& m) {
  double s[3] = {0, 0, 0};
  double n = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m.data[i]) continue;
    s[0] += static_cast<double>(i / (m.dims[1] * m.dims[2]));
    s[1] += static_cast<double>((i / m.dims[2]) % m.dims[1]);
    s[2] += static_cast<double>(i % m.dims[2]);
    n += 1;
  }
  return {s[0] / n, s[1] / n, s[2] / n};
}

}  // namespace lm::testing
