#pragma once

#include <cstddef>

#include "latentmorph/tensor.hpp"

// Raw 3D convolution kernels (no tape). The autodiff primitives conv3d and
// conv3d_transpose are thin wrappers over these.
namespace lm::kernels {

/// Extent of a strided cross-correlation; throws ShapeError when < 1.
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);
/// Extent of the transposed convolution; throws ShapeError when < 1.
std::size_t conv_transpose_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t pad);

/// Accumulates into whichever gradient pointers are non-null.
void conv3d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                     std::size_t stride, std::size_t pad, Tensor* grad_input, Tensor* grad_kernel,
                     Tensor* grad_bias);

Tensor conv3d_transpose(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                        std::size_t stride, std::size_t pad);

void conv3d_transpose_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                               std::size_t stride, std::size_t pad, Tensor* grad_input,
                               Tensor* grad_kernel, Tensor* grad_bias);

}  // namespace lm::kernels
