#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "docunet/gemm.hpp"
#include "docunet/tensor.hpp"

namespace docunet {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(cat(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                             shape_str(b.shape())));
  }
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(cat(op, ": expected rank ", rank, ", got ", shape_str(t.shape())));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) for strided loops.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(cat(op, ": axis ", axis, " out of range for ", shape_str(shape)));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

inline void accumulate(std::vector<double>& dst, std::span<const double> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

// Elementwise map with derivative expressed through input x and output y.
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> out(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), x.requires_grad(),
                     [xn, df](TensorNode& o) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         xn->grad[i] += o.grad[i] * df(xn->data[i], o.data[i]);
                       }
                     });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                             [an, bn](detail::TensorNode& o) {
                               for (auto& n : {an, bn}) {
                                 if (!n->requires_grad) continue;
                                 n->ensure_grad();
                                 detail::accumulate(n->grad, o.grad);
                               }
                             });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                             [an, bn](detail::TensorNode& o) {
                               if (an->requires_grad) {
                                 an->ensure_grad();
                                 detail::accumulate(an->grad, o.grad);
                               }
                               if (bn->requires_grad) {
                                 bn->ensure_grad();
                                 for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   bn->grad[i] -= o.grad[i];
                               }
                             });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                             [an, bn](detail::TensorNode& o) {
                               if (an->requires_grad) {
                                 an->ensure_grad();
                                 for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   an->grad[i] += o.grad[i] * bn->data[i];
                               }
                               if (bn->requires_grad) {
                                 bn->ensure_grad();
                                 for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   bn->grad[i] += o.grad[i] * an->data[i];
                               }
                             });
}

/// x * c for a scalar constant c.
inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(
      x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

/// x + c for a scalar constant c.
inline Tensor shift(const Tensor& x, double c) {
  return detail::unary(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return shift(a, c); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

/// log(1 + e^x), evaluated as max(x,0) + log1p(e^{-|x|}).
inline Tensor log1p_exp(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product of a[m x k] and b[k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError(detail::cat("matmul: incompatible shapes ", detail::shape_str(a.shape()),
                                     " and ", detail::shape_str(b.shape())));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data());
  auto an = a.node(), bn = b.node();
  return detail::make_result(
      {m, n}, std::move(out), a.requires_grad() || b.requires_grad(),
      [an, bn, m, k, n](detail::TensorNode& o) {
        const double* G = o.grad.data();
        if (an->requires_grad) {
          an->ensure_grad();
          detail::gemm(false, true, m, k, n, G, bn->data.data(), an->grad.data());
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          detail::gemm(true, false, k, n, m, an->data.data(), G, bn->grad.data());
        }
      });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  auto xn = x.node();
  return detail::make_result({n, m}, std::move(out), x.requires_grad(),
                             [xn, m, n](detail::TensorNode& o) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j)
                                   xn->grad[i * n + j] += o.grad[j * m + i];
                             });
}

/// Adds a length-n bias vector to every row of x[m x n].
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank(x, 2, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) {
    throw DimensionError(detail::cat("add_bias: bias ", detail::shape_str(bias.shape()),
                                     " does not match rows of ", detail::shape_str(x.shape())));
  }
  std::vector<double> out(x.values());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
  auto xn = x.node(), bn = bias.node();
  return detail::make_result(x.shape(), std::move(out), x.requires_grad() || bias.requires_grad(),
                             [xn, bn, m, n](detail::TensorNode& o) {
                               if (xn->requires_grad) {
                                 xn->ensure_grad();
                                 detail::accumulate(xn->grad, o.grad);
                               }
                               if (bn->requires_grad) {
                                 bn->ensure_grad();
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j)
                                     bn->grad[j] += o.grad[i * n + j];
                               }
                             });
}

/// x[m x k] * w[k x n] + b[n].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw DimensionError(detail::cat("reshape: cannot view ", detail::shape_str(x.shape()),
                                     " as ", detail::shape_str(shape)));
  }
  auto xn = x.node();
  return detail::make_result(std::move(shape), x.values(), x.requires_grad(),
                             [xn](detail::TensorNode& o) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               detail::accumulate(xn->grad, o.grad);
                             });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  Shape out_shape = ref;
  out_shape.at(axis) = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.dim(i) != ref[i]) {
        throw DimensionError(detail::cat("concat: shape mismatch ", detail::shape_str(ref),
                                         " vs ", detail::shape_str(p.shape()), " on axis ", axis));
      }
    }
    out_shape[axis] += p.dim(axis);
    needs_grad = needs_grad || p.requires_grad();
  }
  auto s = detail::split_axis(out_shape, axis, "concat");
  std::vector<double> out(numel_of(out_shape));
  std::vector<detail::NodePtr> nodes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t e = p.dim(axis);
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.data().data() + o * e * s.inner, e * s.inner,
                  out.data() + (o * s.extent + offset) * s.inner);
    }
    offset += e;
    nodes.push_back(p.node());
  }
  return detail::make_result(
      out_shape, std::move(out), needs_grad, [nodes, axis, s](detail::TensorNode& o) {
        std::size_t offset = 0;
        for (const auto& n : nodes) {
          const std::size_t e = n->shape[axis];
          if (n->requires_grad) {
            n->ensure_grad();
            for (std::size_t q = 0; q < s.outer; ++q) {
              const double* src = o.grad.data() + (q * s.extent + offset) * s.inner;
              double* dst = n->grad.data() + q * e * s.inner;
              for (std::size_t i = 0; i < e * s.inner; ++i) dst[i] += src[i];
            }
          }
          offset += e;
        }
      });
}

/// Elements [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  auto s = detail::split_axis(x.shape(), axis, "slice");
  if (begin >= end || end > s.extent) {
    throw DimensionError(detail::cat("slice: range [", begin, ",", end, ") invalid for extent ",
                                     s.extent));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t e = end - begin;
  std::vector<double> out(numel_of(out_shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data().data() + (o * s.extent + begin) * s.inner, e * s.inner,
                out.data() + o * e * s.inner);
  }
  auto xn = x.node();
  return detail::make_result(out_shape, std::move(out), x.requires_grad(),
                             [xn, s, begin, e](detail::TensorNode& o) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               for (std::size_t q = 0; q < s.outer; ++q) {
                                 const double* src = o.grad.data() + q * e * s.inner;
                                 double* dst = xn->grad.data() + (q * s.extent + begin) * s.inner;
                                 for (std::size_t i = 0; i < e * s.inner; ++i) dst[i] += src[i];
                               }
                             });
}

/// Zero padding of `before` and `after` elements along `axis`.
inline Tensor pad(const Tensor& x, std::size_t axis, std::size_t before, std::size_t after) {
  if (before == 0 && after == 0) return x;
  auto s = detail::split_axis(x.shape(), axis, "pad");
  Shape out_shape = x.shape();
  out_shape[axis] += before + after;
  const std::size_t e = out_shape[axis];
  std::vector<double> out(numel_of(out_shape), 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data().data() + o * s.extent * s.inner, s.extent * s.inner,
                out.data() + (o * e + before) * s.inner);
  }
  auto xn = x.node();
  return detail::make_result(out_shape, std::move(out), x.requires_grad(),
                             [xn, s, before, e](detail::TensorNode& o) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               for (std::size_t q = 0; q < s.outer; ++q) {
                                 const double* src = o.grad.data() + (q * e + before) * s.inner;
                                 double* dst = xn->grad.data() + q * s.extent * s.inner;
                                 for (std::size_t i = 0; i < s.extent * s.inner; ++i)
                                   dst[i] += src[i];
                               }
                             });
}

/// Selects rows of x[m x n] by index; repeated indices are allowed.
inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> rows) {
  detail::require_rank(x, 2, "gather_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  std::vector<double> out(rows.size() * n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m) {
      throw DimensionError(detail::cat("gather_rows: index ", rows[r], " out of range ", m));
    }
    std::copy_n(x.data().data() + rows[r] * n, n, out.data() + r * n);
  }
  auto xn = x.node();
  const std::size_t k = rows.size();
  return detail::make_result({k, n}, std::move(out), x.requires_grad(),
                             [xn, rows = std::move(rows), n](detail::TensorNode& o) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               for (std::size_t r = 0; r < rows.size(); ++r) {
                                 const double* src = o.grad.data() + r * n;
                                 double* dst = xn->grad.data() + rows[r] * n;
                                 for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Reductions and normalizations

inline Tensor reduce_sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  auto xn = x.node();
  return detail::make_result({1}, {total}, x.requires_grad(), [xn](detail::TensorNode& o) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (auto& g : xn->grad) g += o.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(reduce_sum(x), 1.0 / double(x.numel())); }

/// Sum along `axis`; the axis is removed from the result shape.
inline Tensor sum(const Tensor& x, std::size_t axis) {
  auto s = detail::split_axis(x.shape(), axis, "sum");
  std::vector<double> out(s.outer * s.inner, 0.0);
  auto X = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t a = 0; a < s.extent; ++a)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += X[(o * s.extent + a) * s.inner + i];
  auto xn = x.node();
  return detail::make_result(detail::drop_axis(x.shape(), axis), std::move(out),
                             x.requires_grad(), [xn, s](detail::TensorNode& o) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               for (std::size_t q = 0; q < s.outer; ++q)
                                 for (std::size_t a = 0; a < s.extent; ++a)
                                   for (std::size_t i = 0; i < s.inner; ++i)
                                     xn->grad[(q * s.extent + a) * s.inner + i] +=
                                         o.grad[q * s.inner + i];
                             });
}

/// Softmax along `axis` with max subtraction.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  auto s = detail::split_axis(x.shape(), axis, "softmax");
  std::vector<double> out(x.numel());
  auto X = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < s.extent; ++a) mx = std::max(mx, X[base + a * s.inner]);
      double z = 0.0;
      for (std::size_t a = 0; a < s.extent; ++a) {
        double e = std::exp(X[base + a * s.inner] - mx);
        out[base + a * s.inner] = e;
        z += e;
      }
      for (std::size_t a = 0; a < s.extent; ++a) out[base + a * s.inner] /= z;
    }
  }
  auto xn = x.node();
  return detail::make_result(x.shape(), std::move(out), x.requires_grad(),
                             [xn, s](detail::TensorNode& o) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               for (std::size_t q = 0; q < s.outer; ++q) {
                                 for (std::size_t i = 0; i < s.inner; ++i) {
                                   const std::size_t base = q * s.extent * s.inner + i;
                                   double dot = 0.0;
                                   for (std::size_t a = 0; a < s.extent; ++a) {
                                     const std::size_t at = base + a * s.inner;
                                     dot += o.grad[at] * o.data[at];
                                   }
                                   for (std::size_t a = 0; a < s.extent; ++a) {
                                     const std::size_t at = base + a * s.inner;
                                     xn->grad[at] += o.data[at] * (o.grad[at] - dot);
                                   }
                                 }
                               }
                             });
}

/// log(sum(exp(x))) along `axis`, stabilized by the running maximum.
/// The gradient is the softmax over the reduced axis.
inline Tensor logsumexp(const Tensor& x, std::size_t axis = 0) {
  auto s = detail::split_axis(x.shape(), axis, "logsumexp");
  std::vector<double> out(s.outer * s.inner);
  auto X = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < s.extent; ++a) mx = std::max(mx, X[base + a * s.inner]);
      double z = 0.0;
      for (std::size_t a = 0; a < s.extent; ++a) z += std::exp(X[base + a * s.inner] - mx);
      out[o * s.inner + i] = mx + std::log(z);
    }
  }
  auto xn = x.node();
  return detail::make_result(detail::drop_axis(x.shape(), axis), std::move(out),
                             x.requires_grad(), [xn, s](detail::TensorNode& o) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               for (std::size_t q = 0; q < s.outer; ++q) {
                                 for (std::size_t i = 0; i < s.inner; ++i) {
                                   const double lse = o.data[q * s.inner + i];
                                   const double g = o.grad[q * s.inner + i];
                                   const std::size_t base = q * s.extent * s.inner + i;
                                   for (std::size_t a = 0; a < s.extent; ++a) {
                                     const std::size_t at = base + a * s.inner;
                                     xn->grad[at] += g * std::exp(xn->data[at] - lse);
                                   }
                                 }
                               }
                             });
}

/// Divides each fibre along `axis` by its sum, so that it sums to one.
inline Tensor normalize(const Tensor& x, std::size_t axis) {
  auto s = detail::split_axis(x.shape(), axis, "normalize");
  std::vector<double> out(x.numel()), totals(s.outer * s.inner, 0.0);
  auto X = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double& z = totals[o * s.inner + i];
      for (std::size_t a = 0; a < s.extent; ++a) z += X[(o * s.extent + a) * s.inner + i];
      for (std::size_t a = 0; a < s.extent; ++a) {
        const std::size_t at = (o * s.extent + a) * s.inner + i;
        out[at] = X[at] / z;
      }
    }
  auto xn = x.node();
  return detail::make_result(x.shape(), std::move(out), x.requires_grad(),
                             [xn, s, totals = std::move(totals)](detail::TensorNode& o) {
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               for (std::size_t q = 0; q < s.outer; ++q)
                                 for (std::size_t i = 0; i < s.inner; ++i) {
                                   double dot = 0.0;
                                   for (std::size_t a = 0; a < s.extent; ++a) {
                                     const std::size_t at = (q * s.extent + a) * s.inner + i;
                                     dot += o.grad[at] * o.data[at];
                                   }
                                   const double z = totals[q * s.inner + i];
                                   for (std::size_t a = 0; a < s.extent; ++a) {
                                     const std::size_t at = (q * s.extent + a) * s.inner + i;
                                     xn->grad[at] += (o.grad[at] - dot) / z;
                                   }
                                 }
                             });
}

/// Row-wise layer normalization of x[m x n] with affine gamma, beta of length n.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  detail::require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm: affine parameters do not match feature width");
  }
  std::vector<double> xhat(m * n), inv_std(m), out(m * n);
  auto X = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += X[i * n + j];
    mu /= double(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double d = X[i * n + j] - mu;
      var += d * d;
    }
    var /= double(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (X[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = gamma[j] * xhat[i * n + j] + beta[j];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return detail::make_result(
      x.shape(), std::move(out),
      x.requires_grad() || gamma.requires_grad() || beta.requires_grad(),
      [xn, gn, bn, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          detail::TensorNode& o) {
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          const double* g = o.grad.data() + i * n;
          const double* xh = xhat.data() + i * n;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            if (gn->requires_grad) gn->grad[j] += g[j] * xh[j];
            if (bn->requires_grad) bn->grad[j] += g[j];
            dxhat[j] = g[j] * gn->data[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
          }
          if (!xn->requires_grad) continue;
          mean_d /= double(n);
          mean_dx /= double(n);
          for (std::size_t j = 0; j < n; ++j) {
            xn->grad[i * n + j] += inv_std[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
          }
        }
      });
}

/// Cosine similarity between matching rows of a and b, returned as [m].
/// A row with zero norm yields similarity 0 and no gradient.
inline Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "cosine_rows");
  detail::require_same_shape(a, b, "cosine_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m, 0.0), na(m), nb(m);
  for (std::size_t i = 0; i < m; ++i) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dot += a[i * n + j] * b[i * n + j];
      sa += a[i * n + j] * a[i * n + j];
      sb += b[i * n + j] * b[i * n + j];
    }
    na[i] = std::sqrt(sa);
    nb[i] = std::sqrt(sb);
    if (na[i] > 0 && nb[i] > 0) out[i] = dot / (na[i] * nb[i]);
  }
  auto an = a.node(), bn = b.node();
  return detail::make_result(
      {m}, std::move(out), a.requires_grad() || b.requires_grad(),
      [an, bn, m, n, na = std::move(na), nb = std::move(nb)](detail::TensorNode& o) {
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          if (na[i] == 0 || nb[i] == 0) continue;
          const double c = o.data[i], g = o.grad[i], inv = 1.0 / (na[i] * nb[i]);
          for (std::size_t j = 0; j < n; ++j) {
            const double av = an->data[i * n + j], bv = bn->data[i * n + j];
            if (an->requires_grad)
              an->grad[i * n + j] += g * (bv * inv - c * av / (na[i] * na[i]));
            if (bn->requires_grad)
              bn->grad[i * n + j] += g * (av * inv - c * bv / (nb[i] * nb[i]));
          }
        }
      });
}

}  // namespace docunet
