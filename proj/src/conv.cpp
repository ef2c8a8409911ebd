#include "latentmorph/conv.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <vector>

namespace lm::kernels {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// "image" is the dense side of the correlation, "grid" the strided side.
struct Geometry {
  std::size_t channels;
  std::size_t img[3];
  std::size_t grid[3];
  std::size_t k;
  std::size_t stride;
  std::size_t pad;

  std::size_t image_size() const { return img[0] * img[1] * img[2]; }
  std::size_t grid_size() const { return grid[0] * grid[1] * grid[2]; }
  std::size_t patch_size() const { return channels * k * k * k; }
};

// Output positions ow in [lo, hi) read inside the image along one axis.
struct Span {
  std::size_t lo, hi;
};

Span valid_span(std::size_t grid, std::size_t img, std::size_t stride, std::size_t kidx, std::size_t pad) {
  // iw = ow * stride + kidx - pad must land in [0, img).
  const long off = static_cast<long>(kidx) - static_cast<long>(pad);
  const long s = static_cast<long>(stride);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (static_cast<long>(img) - 1 - off) < 0 ? 0 : (static_cast<long>(img) - 1 - off) / s + 1;
  lo = std::min<long>(lo, static_cast<long>(grid));
  hi = std::clamp<long>(hi, lo, static_cast<long>(grid));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// cols[(c, kd, kh, kw), p] = image[c, g*stride - pad + kidx] or 0 outside.
void im2col(const double* image, const Geometry& g, double* cols) {
  const std::size_t P = g.grid_size();
  const long pad = static_cast<long>(g.pad);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* ch = image + c * g.image_size();
    for (std::size_t kd = 0; kd < g.k; ++kd)
      for (std::size_t kh = 0; kh < g.k; ++kh)
        for (std::size_t kw = 0; kw < g.k; ++kw, ++row) {
          double* out = cols + row * P;
          const Span w = valid_span(g.grid[2], g.img[2], g.stride, kw, g.pad);
          const long w0 = static_cast<long>(w.lo * g.stride + kw) - pad;
          for (std::size_t od = 0; od < g.grid[0]; ++od) {
            const long id = static_cast<long>(od * g.stride + kd) - pad;
            const bool din = id >= 0 && id < static_cast<long>(g.img[0]);
            for (std::size_t oh = 0; oh < g.grid[1]; ++oh, out += g.grid[2]) {
              const long ih = static_cast<long>(oh * g.stride + kh) - pad;
              if (!din || ih < 0 || ih >= static_cast<long>(g.img[1])) {
                std::fill(out, out + g.grid[2], 0.0);
                continue;
              }
              const double* src = ch + (id * static_cast<long>(g.img[1]) + ih) * static_cast<long>(g.img[2]) + w0;
              std::fill(out, out + w.lo, 0.0);
              for (std::size_t ow = w.lo; ow < w.hi; ++ow, src += g.stride) out[ow] = *src;
              std::fill(out + w.hi, out + g.grid[2], 0.0);
            }
          }
        }
  }
}

// Adjoint of im2col: scatter-adds columns back onto the image.
void col2im(const double* cols, const Geometry& g, double* image) {
  const std::size_t P = g.grid_size();
  const long pad = static_cast<long>(g.pad);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* ch = image + c * g.image_size();
    for (std::size_t kd = 0; kd < g.k; ++kd)
      for (std::size_t kh = 0; kh < g.k; ++kh)
        for (std::size_t kw = 0; kw < g.k; ++kw, ++row) {
          const double* in = cols + row * P;
          const Span w = valid_span(g.grid[2], g.img[2], g.stride, kw, g.pad);
          const long w0 = static_cast<long>(w.lo * g.stride + kw) - pad;
          for (std::size_t od = 0; od < g.grid[0]; ++od) {
            const long id = static_cast<long>(od * g.stride + kd) - pad;
            const bool din = id >= 0 && id < static_cast<long>(g.img[0]);
            for (std::size_t oh = 0; oh < g.grid[1]; ++oh, in += g.grid[2]) {
              const long ih = static_cast<long>(oh * g.stride + kh) - pad;
              if (!din || ih < 0 || ih >= static_cast<long>(g.img[1])) continue;
              double* dst = ch + (id * static_cast<long>(g.img[1]) + ih) * static_cast<long>(g.img[2]) + w0;
              for (std::size_t ow = w.lo; ow < w.hi; ++ow, dst += g.stride) *dst += in[ow];
            }
          }
        }
  }
}

void check_rank5(const Tensor& t, const char* what) {
  if (t.rank() != 5) throw ShapeError(std::string(what) + " must be rank 5, got " + to_string(t.shape()));
}

void check_kernel(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t in_axis,
                  std::size_t out_axis) {
  check_rank5(input, "conv input");
  check_rank5(kernel, "conv kernel");
  const std::size_t k = kernel.dim(2);
  if (kernel.dim(3) != k || kernel.dim(4) != k) {
    throw ShapeError("conv kernel must be cubic, got " + to_string(kernel.shape()));
  }
  if (kernel.dim(in_axis) != input.dim(1)) {
    throw ShapeError("conv channel mismatch: input " + to_string(input.shape()) + " vs kernel " +
                     to_string(kernel.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != kernel.dim(out_axis)) {
    throw ShapeError("conv bias " + to_string(bias.shape()) + " does not match kernel " +
                     to_string(kernel.shape()));
  }
}

void add_bias(Tensor& out, const Tensor& bias) {
  const std::size_t N = out.dim(0), C = out.dim(1), inner = out.size() / (N * C);
  double* p = out.data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c, p += inner) {
      const double b = bias[c];
      for (std::size_t i = 0; i < inner; ++i) p[i] += b;
    }
}

void bias_grad(const Tensor& grad_out, Tensor& grad_bias) {
  const std::size_t N = grad_out.dim(0), C = grad_out.dim(1), inner = grad_out.size() / (N * C);
  const double* p = grad_out.data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c, p += inner) {
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) s += p[i];
      grad_bias[c] += s;
    }
}

Geometry conv_geometry(const Tensor& input, std::size_t k, std::size_t stride, std::size_t pad) {
  Geometry g{};
  g.channels = input.dim(1);
  for (int a = 0; a < 3; ++a) {
    g.img[a] = input.dim(2 + a);
    g.grid[a] = conv_out_extent(g.img[a], k, stride, pad);
  }
  g.k = k;
  g.stride = stride;
  g.pad = pad;
  return g;
}

Geometry transpose_geometry(const Tensor& input, std::size_t out_channels, std::size_t k,
                            std::size_t stride, std::size_t pad) {
  Geometry g{};
  g.channels = out_channels;
  for (int a = 0; a < 3; ++a) {
    g.grid[a] = input.dim(2 + a);
    g.img[a] = conv_transpose_out_extent(g.grid[a], k, stride, pad);
  }
  g.k = k;
  g.stride = stride;
  g.pad = pad;
  return g;
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0 || k == 0) throw ShapeError("conv stride and kernel size must be positive");
  const long span = static_cast<long>(in + 2 * pad) - static_cast<long>(k);
  if (span < 0) {
    throw ShapeError("conv output extent < 1 (input " + std::to_string(in) + ", kernel " + std::to_string(k) +
                     ", pad " + std::to_string(pad) + ")");
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

std::size_t conv_transpose_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0 || k == 0 || in == 0) throw ShapeError("transposed conv extents must be positive");
  const long out = static_cast<long>((in - 1) * stride + k) - 2 * static_cast<long>(pad);
  if (out < 1) {
    throw ShapeError("transposed conv output extent < 1 (input " + std::to_string(in) + ", kernel " +
                     std::to_string(k) + ", pad " + std::to_string(pad) + ")");
  }
  return static_cast<std::size_t>(out);
}

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  check_kernel(input, kernel, bias, 1, 0);
  const Geometry g = conv_geometry(input, kernel.dim(2), stride, pad);
  const std::size_t N = input.dim(0), Cout = kernel.dim(0), K = g.patch_size(), P = g.grid_size();

  Tensor out(Shape{N, Cout, g.grid[0], g.grid[1], g.grid[2]});
  std::vector<double> cols(K * P);
  ConstMatMap W(kernel.data().data(), Cout, K);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(input.data().data() + n * g.channels * g.image_size(), g, cols.data());
    MatMap Y(out.data().data() + n * Cout * P, Cout, P);
    Y.noalias() = W * ConstMatMap(cols.data(), K, P);
  }
  add_bias(out, bias);
  return out;
}

void conv3d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out, std::size_t stride,
                     std::size_t pad, Tensor* grad_input, Tensor* grad_kernel, Tensor* grad_bias) {
  const Geometry g = conv_geometry(input, kernel.dim(2), stride, pad);
  const std::size_t N = input.dim(0), Cout = kernel.dim(0), K = g.patch_size(), P = g.grid_size();
  if (grad_bias) bias_grad(grad_out, *grad_bias);
  if (!grad_input && !grad_kernel) return;

  std::vector<double> cols(K * P);
  ConstMatMap W(kernel.data().data(), Cout, K);
  for (std::size_t n = 0; n < N; ++n) {
    ConstMatMap G(grad_out.data().data() + n * Cout * P, Cout, P);
    if (grad_kernel) {
      im2col(input.data().data() + n * g.channels * g.image_size(), g, cols.data());
      MatMap(grad_kernel->data().data(), Cout, K).noalias() += G * ConstMatMap(cols.data(), K, P).transpose();
    }
    if (grad_input) {
      MatMap(cols.data(), K, P).noalias() = W.transpose() * G;
      col2im(cols.data(), g, grad_input->data().data() + n * g.channels * g.image_size());
    }
  }
}

Tensor conv3d_transpose(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                        std::size_t pad) {
  check_kernel(input, kernel, bias, 0, 1);
  const std::size_t N = input.dim(0), A = kernel.dim(0), B = kernel.dim(1);
  const Geometry g = transpose_geometry(input, B, kernel.dim(2), stride, pad);
  const std::size_t K = g.patch_size(), P = g.grid_size();

  Tensor out(Shape{N, B, g.img[0], g.img[1], g.img[2]});
  std::vector<double> cols(K * P);
  ConstMatMap W(kernel.data().data(), A, K);
  for (std::size_t n = 0; n < N; ++n) {
    MatMap(cols.data(), K, P).noalias() = W.transpose() * ConstMatMap(input.data().data() + n * A * P, A, P);
    col2im(cols.data(), g, out.data().data() + n * B * g.image_size());
  }
  add_bias(out, bias);
  return out;
}

void conv3d_transpose_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                               std::size_t stride, std::size_t pad, Tensor* grad_input, Tensor* grad_kernel,
                               Tensor* grad_bias) {
  const std::size_t N = input.dim(0), A = kernel.dim(0), B = kernel.dim(1);
  const Geometry g = transpose_geometry(input, B, kernel.dim(2), stride, pad);
  const std::size_t K = g.patch_size(), P = g.grid_size();
  if (grad_bias) bias_grad(grad_out, *grad_bias);
  if (!grad_input && !grad_kernel) return;

  std::vector<double> cols(K * P);
  ConstMatMap W(kernel.data().data(), A, K);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(grad_out.data().data() + n * B * g.image_size(), g, cols.data());
    ConstMatMap Gc(cols.data(), K, P);
    if (grad_input) MatMap(grad_input->data().data() + n * A * P, A, P).noalias() += W * Gc;
    if (grad_kernel) {
      MatMap(grad_kernel->data().data(), A, K).noalias() +=
          ConstMatMap(input.data().data() + n * A * P, A, P) * Gc.transpose();
    }
  }
}

}  // namespace lm::kernels
