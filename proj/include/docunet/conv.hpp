#pragma once

#include <vector>

#include "docunet/ops.hpp"

namespace docunet {

namespace detail {

struct ConvGeometry {
  std::size_t channels, height, width;  // input
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;
};

// Unfolds x[C x H x W] into columns [(C*k*k) x (out_h*out_w)].
inline void im2col(const double* x, const ConvGeometry& g, std::vector<double>& cols) {
  const std::size_t k = g.kernel, plane = g.out_h * g.out_w;
  cols.assign(g.channels * k * k * plane, 0.0);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = cols.data() + ((c * k + ki) * k + kj) * plane;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long ii = long(oi * g.stride + ki) - long(g.pad);
          if (ii < 0 || ii >= long(g.height)) continue;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const long jj = long(oj * g.stride + kj) - long(g.pad);
            if (jj < 0 || jj >= long(g.width)) continue;
            row[oi * g.out_w + oj] = x[(c * g.height + ii) * g.width + jj];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters columns back onto an image, accumulating.
inline void col2im(const double* cols, const ConvGeometry& g, double* x) {
  const std::size_t k = g.kernel, plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols + ((c * k + ki) * k + kj) * plane;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long ii = long(oi * g.stride + ki) - long(g.pad);
          if (ii < 0 || ii >= long(g.height)) continue;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const long jj = long(oj * g.stride + kj) - long(g.pad);
            if (jj < 0 || jj >= long(g.width)) continue;
            x[(c * g.height + ii) * g.width + jj] += row[oi * g.out_w + oj];
          }
        }
      }
    }
  }
}

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                     std::size_t n) {
  gemm(false, false, m, n, k, A, B, C);
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_abt_acc(const double* A, const double* B, double* C, std::size_t m,
                         std::size_t k, std::size_t n) {
  gemm(false, true, m, n, k, A, B, C);
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_atb_acc(const double* A, const double* B, double* C, std::size_t m,
                         std::size_t k, std::size_t n) {
  gemm(true, false, m, n, k, A, B, C);
}

}  // namespace detail

/// 2-D cross-correlation of x[Cin x H x W] with k[Cout x Cin x s x s] and
/// zero padding. Output extent is floor((H + 2*pad - s) / stride) + 1.
inline Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride = 1,
                     std::size_t pad = 0) {
  detail::require_rank(x, 3, "conv2d");
  detail::require_rank(k, 4, "conv2d");
  if (stride == 0) throw ConfigError("conv2d: stride must be >= 1");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = k.dim(0), s = k.dim(2);
  if (k.dim(1) != cin || k.dim(3) != s) {
    throw DimensionError(detail::cat("conv2d: kernel ", detail::shape_str(k.shape()),
                                     " incompatible with input ", detail::shape_str(x.shape())));
  }
  if (h + 2 * pad < s || w + 2 * pad < s) {
    throw DimensionError(detail::cat("conv2d: kernel ", s, "x", s, " larger than padded input ",
                                     h + 2 * pad, "x", w + 2 * pad));
  }
  detail::ConvGeometry g{cin, h, w, s, stride, pad, (h + 2 * pad - s) / stride + 1,
                         (w + 2 * pad - s) / stride + 1};
  const std::size_t plane = g.out_h * g.out_w, red = cin * s * s;
  std::vector<double> cols;
  detail::im2col(x.data().data(), g, cols);
  std::vector<double> out(cout * plane, 0.0);
  detail::gemm_acc(k.data().data(), cols.data(), out.data(), cout, red, plane);

  auto xn = x.node(), kn = k.node();
  return detail::make_result(
      {cout, g.out_h, g.out_w}, std::move(out), x.requires_grad() || k.requires_grad(),
      [xn, kn, g, cout, plane, red, cols = std::move(cols)](detail::TensorNode& o) {
        if (kn->requires_grad) {
          kn->ensure_grad();
          detail::gemm_abt_acc(o.grad.data(), cols.data(), kn->grad.data(), cout, plane, red);
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          std::vector<double> dcols(red * plane, 0.0);
          detail::gemm_atb_acc(kn->data.data(), o.grad.data(), dcols.data(), red, cout, plane);
          detail::col2im(dcols.data(), g, xn->grad.data());
        }
      });
}

/// Transposed convolution (the adjoint of conv2d without padding) of
/// x[Cin x H x W] with k[Cin x Cout x s x s]. Output extent is
/// (H - 1) * stride + s; for stride == s == 2 the extent doubles.
inline Tensor transposed_conv2d(const Tensor& x, const Tensor& k, std::size_t stride = 2) {
  detail::require_rank(x, 3, "transposed_conv2d");
  detail::require_rank(k, 4, "transposed_conv2d");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = k.dim(1), s = k.dim(2);
  if (stride == 0 || k.dim(3) != s || s == 0) {
    throw ConfigError(detail::cat("transposed_conv2d: unsupported kernel ",
                                  detail::shape_str(k.shape()), " with stride ", stride));
  }
  if (k.dim(0) != cin) {
    throw DimensionError(detail::cat("transposed_conv2d: kernel ", detail::shape_str(k.shape()),
                                     " incompatible with input ", detail::shape_str(x.shape())));
  }
  const std::size_t oh = (h - 1) * stride + s, ow = (w - 1) * stride + s;
  // Geometry of the equivalent forward convolution on the output image.
  detail::ConvGeometry g{cout, oh, ow, s, stride, 0, h, w};
  const std::size_t plane = h * w, red = cout * s * s;
  std::vector<double> cols(red * plane, 0.0);
  detail::gemm_atb_acc(k.data().data(), x.data().data(), cols.data(), red, cin, plane);
  std::vector<double> out(cout * oh * ow, 0.0);
  detail::col2im(cols.data(), g, out.data());

  auto xn = x.node(), kn = k.node();
  return detail::make_result(
      {cout, oh, ow}, std::move(out), x.requires_grad() || k.requires_grad(),
      [xn, kn, g, cin, plane, red](detail::TensorNode& o) {
        std::vector<double> gcols;
        detail::im2col(o.grad.data(), g, gcols);
        if (xn->requires_grad) {
          xn->ensure_grad();
          detail::gemm_acc(kn->data.data(), gcols.data(), xn->grad.data(), cin, red, plane);
        }
        if (kn->requires_grad) {
          kn->ensure_grad();
          detail::gemm_abt_acc(xn->data.data(), gcols.data(), kn->grad.data(), cin, plane, red);
        }
      });
}

/// Non-overlapping max pooling over window x window blocks of x[C x H x W].
/// Ties resolve to the first element in row-major window order.
inline Tensor max_pool2d(const Tensor& x, std::size_t window = 2) {
  detail::require_rank(x, 3, "max_pool2d");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (window == 0 || h % window != 0 || w % window != 0) {
    throw DimensionError(detail::cat("max_pool2d: extents ", h, "x", w,
                                     " not divisible by window ", window));
  }
  const std::size_t oh = h / window, ow = w / window;
  std::vector<double> out(c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  auto X = x.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (ch * h + i * window) * w + j * window;
        for (std::size_t di = 0; di < window; ++di) {
          for (std::size_t dj = 0; dj < window; ++dj) {
            const std::size_t at = (ch * h + i * window + di) * w + j * window + dj;
            if (X[at] > X[best]) best = at;
          }
        }
        const std::size_t o = (ch * oh + i) * ow + j;
        out[o] = X[best];
        argmax[o] = best;
      }
    }
  }
  auto xn = x.node();
  return detail::make_result({c, oh, ow}, std::move(out), x.requires_grad(),
                             [xn, argmax = std::move(argmax)](detail::TensorNode& o) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               for (std::size_t i = 0; i < argmax.size(); ++i)
                                 xn->grad[argmax[i]] += o.grad[i];
                             });
}

/// Adds one bias value per channel of x[C x H x W].
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank(x, 3, "add_channel_bias");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  if (bias.numel() != c) throw DimensionError("add_channel_bias: bias does not match channels");
  std::vector<double> out(x.values());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] += bias[ch];
  auto xn = x.node(), bn = bias.node();
  return detail::make_result(x.shape(), std::move(out), x.requires_grad() || bias.requires_grad(),
                             [xn, bn, c, plane](detail::TensorNode& o) {
                               if (xn->requires_grad) {
                                 xn->ensure_grad();
                                 detail::accumulate(xn->grad, o.grad);
                               }
                               if (bn->requires_grad) {
                                 bn->ensure_grad();
                                 for (std::size_t ch = 0; ch < c; ++ch)
                                   for (std::size_t i = 0; i < plane; ++i)
                                     bn->grad[ch] += o.grad[ch * plane + i];
                               }
                             });
}

}  // namespace docunet
