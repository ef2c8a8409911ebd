#pragma once

#include <functional>

#include "latentmorph/tensor.hpp"

namespace lm {

/// Central-difference estimate (f(x + h e_i) - f(x - h e_i)) / 2h for every i.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// ||a - b||_2 / max(||a||_2, ||b||_2, floor).
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8);

}  // namespace lm
