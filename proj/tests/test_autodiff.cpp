#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "latentmorph/autodiff.hpp"
#include "latentmorph/gradcheck.hpp"
#include "support.hpp"

using lm::Shape;
using lm::Tape;
using lm::Tensor;
using lm::Var;

// 20 random instances per op, every input checked against central differences.
TEST(Autodiff, PrimitiveOpsMatchFiniteDifferences) {
  const auto cases = lm::testing::primitive_op_cases();
  EXPECT_GE(cases.size(), 29u);
  std::uint64_t seed = 1;
  for (const auto& c : cases) {
    std::mt19937_64 rng(seed++);
    for (int i = 0; i < 20; ++i) {
      const lm::testing::OpInstance inst = c.draw(rng);
      EXPECT_LE(lm::testing::gradient_error(inst, rng, 1e-5), 1e-4) << c.name << " instance " << i;
    }
  }
}

TEST(Autodiff, ReusedVariableAccumulates) {
  Tape tape;
  Var x = tape.variable(Tensor::from({1.5, -2.0}));
  tape.backward(lm::sum(x * x + x));
  const Tensor g = tape.grad(x);
  EXPECT_DOUBLE_EQ(g[0], 2 * 1.5 + 1);
  EXPECT_DOUBLE_EQ(g[1], 2 * -2.0 + 1);
}

TEST(Autodiff, BackwardTwiceGivesSameGradient) {
  Tape tape;
  Var x = tape.variable(Tensor::from({0.3, 0.7}));
  Var loss = lm::sum(lm::exp(x));
  tape.backward(loss);
  const Tensor first = tape.grad(x);
  tape.backward(loss);
  EXPECT_EQ(tape.grad(x), first);
}

TEST(Autodiff, NonScalarLossIsContractError) {
  Tape tape;
  Var x = tape.variable(Tensor::from({1.0, 2.0}));
  EXPECT_THROW(tape.backward(x), lm::ContractError);
}

TEST(Autodiff, ConstantsGetNoGradient) {
  Tape tape;
  Var c = tape.constant(Tensor::from({1.0, 2.0}));
  Var x = tape.variable(Tensor::from({3.0, 4.0}));
  tape.backward(lm::sum(c * x));
  EXPECT_FALSE(tape.requires_grad(c));
  EXPECT_EQ(tape.grad(c), Tensor(Shape{2}));
  EXPECT_DOUBLE_EQ(tape.grad(x)[1], 2.0);
}

TEST(Autodiff, LogClampsAtTinyValue) {
  Tape tape;
  Var x = tape.constant(Tensor::from({0.0}));
  EXPECT_NEAR(lm::log(x).value()[0], std::log(1e-12), 1e-9);
}

TEST(Autodiff, SigmoidIsStableForLargeInputs) {
  Tape tape;
  Var x = tape.constant(Tensor::from({-800.0, 800.0, 0.0}));
  const Tensor y = lm::sigmoid(x).value();
  EXPECT_TRUE(y.all_finite());
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 1.0);
  EXPECT_DOUBLE_EQ(y[2], 0.5);
}

TEST(Autodiff, ShapeMismatchThrows) {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{2, 3}));
  Var b = tape.constant(Tensor(Shape{3, 2}));
  EXPECT_THROW(lm::add(a, b), lm::ShapeError);
  EXPECT_THROW(lm::matmul(a, a), lm::ShapeError);
}

TEST(Gradcheck, FiniteDifferenceOfQuadratic) {
  const Tensor x = Tensor::from({1.0, -2.0, 0.5});
  auto f = [](const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v * v;
    return s;
  };
  const Tensor g = lm::finite_diff_grad(f, x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], 3 * x[i] * x[i], 1e-8);
  EXPECT_DOUBLE_EQ(lm::relative_error(x, x), 0.0);
}
