#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>

#include "mocnn/tensor.hpp"

// Forward/backward kernels for the layers the network uses. Spatial layers
// work on one sample (C x H x W); fully connected layers on a batch (B x N).
// Every backward accumulates parameter gradients and returns the exact
// gradient of its forward definition.

namespace mocnn {

struct Conv2dGeometry {
  std::size_t channels, height, width;
  std::size_t out_channels, kernel, stride, pad;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t positions() const { return out_height() * out_width(); }
};

namespace detail {

template <typename Scalar>
Conv2dGeometry conv_geometry(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                             std::size_t stride, std::size_t pad) {
  if (input.rank() != 3 || kernels.rank() != 4 || kernels.dim(1) != input.dim(0) ||
      kernels.dim(2) != kernels.dim(3) || stride == 0) {
    throw Error(Errc::ShapeMismatch, "conv2d input " + shape_string(input.shape()) + " kernels " +
                                         shape_string(kernels.shape()));
  }
  Conv2dGeometry g{input.dim(0), input.dim(1), input.dim(2), kernels.dim(0), kernels.dim(2), stride, pad};
  if (g.height + 2 * pad < g.kernel || g.width + 2 * pad < g.kernel) {
    throw Error(Errc::ShapeMismatch, "conv2d kernel larger than padded input");
  }
  return g;
}

// Output columns [lo, hi) whose stride-1 input column ox + kx - pad is inside the image.
inline std::pair<std::size_t, std::size_t> valid_columns(const Conv2dGeometry& g, std::size_t kx, std::size_t ow) {
  const std::size_t lo = g.pad > kx ? g.pad - kx : 0;
  const std::size_t hi = std::min(ow, g.width + g.pad - kx);
  return {std::min(lo, hi), hi};
}

// im2col restricted to output rows [r0, r1): col is patch x ((r1 - r0) * ow).
template <typename Scalar>
void im2col(const Scalar* x, const Conv2dGeometry& g, std::size_t r0, std::size_t r1, RowMatrix<Scalar>& col) {
  const std::size_t ow = g.out_width(), n = (r1 - r0) * ow;
  col.resize(Eigen::Index(g.patch()), Eigen::Index(n));
  for (std::size_t c = 0; c < g.channels; ++c) {
    const Scalar* plane = x + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        Scalar* dst = col.data() + ((c * g.kernel + ky) * g.kernel + kx) * n;
        for (std::size_t oy = r0; oy < r1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
          Scalar* out = dst + (oy - r0) * ow;
          if (iy < 0 || iy >= std::ptrdiff_t(g.height)) {
            std::fill(out, out + ow, Scalar(0));
            continue;
          }
          const Scalar* src = plane + std::size_t(iy) * g.width;
          if (g.stride == 1) {
            const auto [lo, hi] = valid_columns(g, kx, ow);
            std::fill(out, out + lo, Scalar(0));
            std::copy(src + lo + kx - g.pad, src + hi + kx - g.pad, out + lo);
            std::fill(out + hi, out + ow, Scalar(0));
            continue;
          }
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
            out[ox] = (ix < 0 || ix >= std::ptrdiff_t(g.width)) ? Scalar(0) : src[ix];
          }
        }
      }
    }
  }
}

// Adds the band of columns for output rows [r0, r1) back into dx.
template <typename Scalar>
void col2im(const RowMatrix<Scalar>& col, const Conv2dGeometry& g, std::size_t r0, std::size_t r1, Scalar* dx) {
  const std::size_t ow = g.out_width(), n = (r1 - r0) * ow;
  for (std::size_t c = 0; c < g.channels; ++c) {
    Scalar* plane = dx + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const Scalar* src = col.data() + ((c * g.kernel + ky) * g.kernel + kx) * n;
        for (std::size_t oy = r0; oy < r1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
          if (iy < 0 || iy >= std::ptrdiff_t(g.height)) continue;
          Scalar* dst = plane + std::size_t(iy) * g.width;
          const Scalar* in = src + (oy - r0) * ow;
          if (g.stride == 1) {
            const auto [lo, hi] = valid_columns(g, kx, ow);
            Scalar* d = dst + kx - g.pad;
            for (std::size_t ox = lo; ox < hi; ++ox) d[ox] += in[ox];
            continue;
          }
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
            if (ix >= 0 && ix < std::ptrdiff_t(g.width)) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

// Output rows per im2col band, sized so a band stays cache resident.
inline std::size_t band_rows(const Conv2dGeometry& g) {
  constexpr std::size_t kBandElements = std::size_t{1} << 16;
  return std::max<std::size_t>(1, kBandElements / (g.patch() * g.out_width()));
}

// Direct stride-1 convolution for layers with one or two output channels,
// where im2col traffic dominates the arithmetic.
inline bool use_direct(const Conv2dGeometry& g) {
  return g.stride == 1 && g.out_channels <= 2;
}

// Calls f(oy, iy, lo, hi, shift) for every output row whose input row iy is inside the image.
template <typename F>
void for_each_valid_row(const Conv2dGeometry& g, std::size_t ky, std::size_t kx, F&& f) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const auto [lo, hi] = valid_columns(g, kx, ow);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - std::ptrdiff_t(g.pad);
    if (iy < 0 || iy >= std::ptrdiff_t(g.height)) continue;
    f(oy, std::size_t(iy), lo, hi, std::ptrdiff_t(kx) - std::ptrdiff_t(g.pad));
  }
}

template <typename Scalar>
void direct_forward(const Scalar* x, const Scalar* k, const Conv2dGeometry& g, Scalar* y) {
  const std::size_t ow = g.out_width(), kk = g.kernel * g.kernel;
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    Scalar* yo = y + o * g.positions();
    for (std::size_t c = 0; c < g.channels; ++c) {
      const Scalar* xc = x + c * g.height * g.width;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const Scalar w = k[(o * g.channels + c) * kk + ky * g.kernel + kx];
          for_each_valid_row(g, ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t lo, std::size_t hi,
                                            std::ptrdiff_t shift) {
            Scalar* yr = yo + oy * ow;
            const Scalar* xr = xc + iy * g.width + shift;
            for (std::size_t ox = lo; ox < hi; ++ox) yr[ox] += w * xr[ox];
          });
        }
      }
    }
  }
}

template <typename Scalar>
void direct_backward(const Scalar* x, const Scalar* k, const Scalar* dy, const Conv2dGeometry& g, Scalar* dk,
                     Scalar* dx) {
  const std::size_t ow = g.out_width(), kk = g.kernel * g.kernel;
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const Scalar* dyo = dy + o * g.positions();
    for (std::size_t c = 0; c < g.channels; ++c) {
      const Scalar* xc = x + c * g.height * g.width;
      Scalar* dxc = dx ? dx + c * g.height * g.width : nullptr;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const std::size_t ki = (o * g.channels + c) * kk + ky * g.kernel + kx;
          const Scalar w = k[ki];
          Scalar acc = 0;
          for_each_valid_row(g, ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t lo, std::size_t hi,
                                            std::ptrdiff_t shift) {
            const Scalar* dyr = dyo + oy * ow;
            const Scalar* xr = xc + iy * g.width + shift;
            using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
            const Eigen::Map<const Vec> dyv(dyr + lo, Eigen::Index(hi - lo));
            acc += dyv.dot(Eigen::Map<const Vec>(xr + lo, Eigen::Index(hi - lo)));
            if (dxc) Eigen::Map<Vec>(dxc + iy * g.width + shift + lo, Eigen::Index(hi - lo)) += w * dyv;
          });
          dk[ki] += acc;
        }
      }
    }
  }
}

template <typename Scalar>
RowMatrix<Scalar>& workspace() {
  thread_local RowMatrix<Scalar> col;
  return col;
}

}  // namespace detail

/// Cross-correlation of a C x H x W input with O x C x k x k kernels plus bias.
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                              const Tensor<Scalar>& bias, std::size_t stride = 1, std::size_t pad = 0) {
  const auto g = detail::conv_geometry(input, kernels, stride, pad);
  if (bias.size() != g.out_channels) throw Error(Errc::ShapeMismatch, "conv2d bias length");
  Tensor<Scalar> out({g.out_channels, g.out_height(), g.out_width()});
  auto y = out.matrix(g.out_channels, g.positions());
  if (detail::use_direct(g)) {
    detail::direct_forward(input.data(), kernels.data(), g, out.data());
  } else {
    auto& col = detail::workspace<Scalar>();
    const auto k = kernels.matrix(g.out_channels, g.patch());
    const std::size_t ow = g.out_width(), step = detail::band_rows(g);
    for (std::size_t r0 = 0; r0 < g.out_height(); r0 += step) {
      const std::size_t r1 = std::min(g.out_height(), r0 + step);
      detail::im2col(input.data(), g, r0, r1, col);
      y.middleCols(Eigen::Index(r0 * ow), Eigen::Index((r1 - r0) * ow)).noalias() = k * col;
    }
  }
  for (std::size_t o = 0; o < g.out_channels; ++o) y.row(Eigen::Index(o)).array() += bias[o];
  return out;
}

/// Accumulates kernel/bias gradients; writes the input gradient when asked.
template <typename Scalar>
void conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                     const Tensor<Scalar>& grad_output, Tensor<Scalar>& grad_kernels,
                     Tensor<Scalar>& grad_bias, Tensor<Scalar>* grad_input, std::size_t stride = 1,
                     std::size_t pad = 0) {
  const auto g = detail::conv_geometry(input, kernels, stride, pad);
  if (grad_output.size() != g.out_channels * g.positions() || grad_kernels.shape() != kernels.shape() ||
      grad_bias.size() != g.out_channels) {
    throw Error(Errc::ShapeMismatch, "conv2d backward shapes");
  }
  const auto dy = grad_output.matrix(g.out_channels, g.positions());
  if (detail::use_direct(g)) {
    for (std::size_t o = 0; o < g.out_channels; ++o) grad_bias[o] += dy.row(Eigen::Index(o)).sum();
    if (grad_input) *grad_input = Tensor<Scalar>(input.shape());
    detail::direct_backward(input.data(), kernels.data(), grad_output.data(), g, grad_kernels.data(),
                            grad_input ? grad_input->data() : nullptr);
    return;
  }
  for (std::size_t o = 0; o < g.out_channels; ++o) grad_bias[o] += dy.row(Eigen::Index(o)).sum();
  if (grad_input) *grad_input = Tensor<Scalar>(input.shape());
  auto& col = detail::workspace<Scalar>();
  auto dk = grad_kernels.matrix(g.out_channels, g.patch());
  const auto k = kernels.matrix(g.out_channels, g.patch());
  const std::size_t ow = g.out_width(), step = detail::band_rows(g);
  for (std::size_t r0 = 0; r0 < g.out_height(); r0 += step) {
    const std::size_t r1 = std::min(g.out_height(), r0 + step);
    const auto dy_band = dy.middleCols(Eigen::Index(r0 * ow), Eigen::Index((r1 - r0) * ow));
    detail::im2col(input.data(), g, r0, r1, col);
    dk.noalias() += dy_band * col.transpose();
    if (grad_input) {
      col.noalias() = k.transpose() * dy_band;
      detail::col2im(col, g, r0, r1, grad_input->data());
    }
  }
}

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& input) {
  Tensor<Scalar> out = input;
  for (auto& v : out.values()) v = v > Scalar(0) ? v : Scalar(0);
  return out;
}

/// Uses the forward output: the gradient passes where the output is positive.
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& output, const Tensor<Scalar>& grad_output) {
  if (output.shape() != grad_output.shape()) throw Error(Errc::ShapeMismatch, "relu backward");
  Tensor<Scalar> dx(output.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = output[i] > Scalar(0) ? grad_output[i] : Scalar(0);
  return dx;
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <typename Scalar>
Tensor<Scalar> maxpool2_forward(const Tensor<Scalar>& input) {
  if (input.rank() != 3 || input.dim(1) < 2 || input.dim(2) < 2) {
    throw Error(Errc::ShapeMismatch, "maxpool2 input " + shape_string(input.shape()));
  }
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<Scalar> out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const Scalar* plane = input.data() + ch * h * w;
    Scalar* dst = out.data() + ch * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const Scalar* r0 = plane + (2 * y) * w;
      const Scalar* r1 = r0 + w;
      for (std::size_t x = 0; x < ow; ++x) {
        dst[y * ow + x] = std::max(std::max(r0[2 * x], r0[2 * x + 1]), std::max(r1[2 * x], r1[2 * x + 1]));
      }
    }
  }
  return out;
}

/// Routes each gradient to the first maximal element of its window.
template <typename Scalar>
Tensor<Scalar> maxpool2_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& grad_output) {
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  if (grad_output.shape() != Shape{c, oh, ow}) throw Error(Errc::ShapeMismatch, "maxpool2 backward");
  Tensor<Scalar> dx(input.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const Scalar* plane = input.data() + ch * h * w;
    Scalar* dplane = dx.data() + ch * h * w;
    const Scalar* dy = grad_output.data() + ch * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t cand[4] = {(2 * y) * w + 2 * x, (2 * y) * w + 2 * x + 1,
                                     (2 * y + 1) * w + 2 * x, (2 * y + 1) * w + 2 * x + 1};
        std::size_t best = cand[0];
        for (std::size_t k = 1; k < 4; ++k) {
          if (plane[cand[k]] > plane[best]) best = cand[k];
        }
        dplane[best] += dy[y * ow + x];
      }
    }
  }
  return dx;
}

/// Nearest-neighbour 2x upsampling of C x H x W.
template <typename Scalar>
Tensor<Scalar> upsample2_forward(const Tensor<Scalar>& input) {
  if (input.rank() != 3) throw Error(Errc::ShapeMismatch, "upsample2 input " + shape_string(input.shape()));
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  Tensor<Scalar> out({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const Scalar* src = input.data() + ch * h * w;
    Scalar* dst = out.data() + ch * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> upsample2_backward(const Tensor<Scalar>& grad_output) {
  if (grad_output.rank() != 3 || grad_output.dim(1) % 2 || grad_output.dim(2) % 2) {
    throw Error(Errc::ShapeMismatch, "upsample2 backward " + shape_string(grad_output.shape()));
  }
  const std::size_t c = grad_output.dim(0), h = grad_output.dim(1) / 2, w = grad_output.dim(2) / 2;
  Tensor<Scalar> dx({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const Scalar* src = grad_output.data() + ch * 4 * h * w;
    Scalar* dst = dx.data() + ch * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) dst[(y / 2) * w + x / 2] += src[y * 2 * w + x];
    }
  }
  return dx;
}

/// Y = X W^T + b for X: B x N, W: O x N.
template <typename Scalar>
Tensor<Scalar> fully_connected_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                                       const Tensor<Scalar>& bias) {
  if (input.rank() != 2 || weights.rank() != 2 || input.dim(1) != weights.dim(1) ||
      bias.size() != weights.dim(0)) {
    throw Error(Errc::ShapeMismatch, "fully_connected input " + shape_string(input.shape()) +
                                         " weights " + shape_string(weights.shape()));
  }
  const std::size_t b = input.dim(0), o = weights.dim(0);
  Tensor<Scalar> out({b, o});
  auto y = out.matrix(b, o);
  y.noalias() = input.matrix() * weights.matrix().transpose();
  const auto bias_row = bias.matrix(1, o);
  y.rowwise() += bias_row.row(0);
  return out;
}

template <typename Scalar>
void fully_connected_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                              const Tensor<Scalar>& grad_output, Tensor<Scalar>& grad_weights,
                              Tensor<Scalar>& grad_bias, Tensor<Scalar>* grad_input) {
  const std::size_t b = input.dim(0), o = weights.dim(0);
  if (grad_output.shape() != Shape{b, o} || grad_weights.shape() != weights.shape() || grad_bias.size() != o) {
    throw Error(Errc::ShapeMismatch, "fully_connected backward shapes");
  }
  const auto dy = grad_output.matrix();
  grad_weights.matrix().noalias() += dy.transpose() * input.matrix();
  grad_bias.matrix(1, o).row(0) += dy.colwise().sum();
  if (grad_input) {
    *grad_input = Tensor<Scalar>(input.shape());
    grad_input->matrix().noalias() = dy * weights.matrix();
  }
}

template <typename Scalar>
Tensor<Scalar> sigmoid_forward(const Tensor<Scalar>& input) {
  Tensor<Scalar> out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Scalar v = input[i];
    // Stable in both tails.
    out[i] = v >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-v)) : std::exp(v) / (Scalar(1) + std::exp(v));
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& output, const Tensor<Scalar>& grad_output) {
  Tensor<Scalar> dx(output.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_output[i] * output[i] * (Scalar(1) - output[i]);
  return dx;
}

/// Row-wise softmax of B x C logits.
template <typename Scalar>
Tensor<Scalar> softmax_forward(const Tensor<Scalar>& logits) {
  if (logits.rank() != 2) throw Error(Errc::ShapeMismatch, "softmax expects B x C");
  Tensor<Scalar> out(logits.shape());
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  for (std::size_t i = 0; i < b; ++i) {
    const Scalar* z = logits.data() + i * c;
    Scalar* p = out.data() + i * c;
    const Scalar m = *std::max_element(z, z + c);
    Scalar total = 0;
    for (std::size_t k = 0; k < c; ++k) total += (p[k] = std::exp(z[k] - m));
    for (std::size_t k = 0; k < c; ++k) p[k] /= total;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& probs, const Tensor<Scalar>& grad_output) {
  Tensor<Scalar> dx(probs.shape());
  const std::size_t b = probs.dim(0), c = probs.dim(1);
  for (std::size_t i = 0; i < b; ++i) {
    const Scalar* p = probs.data() + i * c;
    const Scalar* g = grad_output.data() + i * c;
    Scalar dot = 0;
    for (std::size_t k = 0; k < c; ++k) dot += p[k] * g[k];
    for (std::size_t k = 0; k < c; ++k) dx[i * c + k] = p[k] * (g[k] - dot);
  }
  return dx;
}

}  // namespace mocnn
