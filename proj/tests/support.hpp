#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "latentmorph/autodiff.hpp"
#include "latentmorph/voxel.hpp"

namespace lm::testing {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);
double dot(const Tensor& a, const Tensor& b);

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

/// One random draw of an op: its inputs and how to apply it.
struct OpInstance {
  std::vector<Tensor> inputs;
  Builder op;
};

struct OpCase {
  std::string name;
  std::function<OpInstance(std::mt19937_64&)> draw;
};

/// Every primitive differentiable op, including each broadcasting form.
std::vector<OpCase> primitive_op_cases();

/// Largest relative error, over all inputs, between tape gradients and central
/// differences of a random projection of the op's output.
double gradient_error(const OpInstance& instance, std::mt19937_64& rng, double h);

/// Same comparison for the full VAE loss over all parameters, on an 8^3 grid
/// with d = 4. `instance` picks the model, data and noise.
double total_loss_gradient_error(std::uint64_t instance, double h);

struct ConvCase {
  std::size_t n, cin, cout, k, s, p, d, h, w;
};

/// Input extents (o - 1) s + k - 2p, so conv3d_transpose maps back onto them exactly.
ConvCase conforming_case(std::mt19937_64& rng);

/// |<conv(x), y> - <x, conv_transpose(y)>| and the size of the left side.
std::array<double, 2> adjoint_gap(const ConvCase& c, std::mt19937_64& rng);

/// Mean voxel coordinate of the nonzero entries.
std::array<double, 3> mean_position(const Mask& m);

}  // namespace lm::testing
