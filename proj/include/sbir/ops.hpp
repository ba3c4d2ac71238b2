#pragma once

// Differentiable tensor operations. Images are NCHW, row-major; matrices are
// [rows, cols]. Dense products go through Eigen.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sbir/autograd.hpp"

namespace sbir::ops {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace detail {

inline void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw std::invalid_argument(std::string(op) + ": " + what);
}

inline void require_same(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class Fwd, class Dfdx>
Var unary(const Var& x, Fwd f, Dfdx dfdx) {
  std::vector<double> out(x.size());
  auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_op(x.shape(), std::move(out), {x}, [dfdx](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = parent_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (double* g = parent_grad(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

inline Var scale(const Var& x, double s) {
  return detail::unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

inline Var relu(const Var& x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(const Var& x, double slope) {
  return detail::unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
                       [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline Var tanh(const Var& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_scalar(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline Var sigmoid(const Var& x) {
  return detail::unary(x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(const Var& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

// ---------------------------------------------------------------------------
// Reductions and reshapes

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  return make_op({1}, {s}, {x}, [](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

inline Var reshape(const Var& x, Shape shape) {
  detail::require(numel(shape) == x.size(), "reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(x.value().begin(), x.value().end());
  return make_op(std::move(shape), std::move(out), {x}, [](Node& self) {
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// Concatenates [N, A] and [N, B] into [N, A + B].
inline Var concat_cols(const Var& a, const Var& b) {
  detail::require(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(0) == b.dim(0), "concat_cols",
                  shape_str(a.shape()) + " + " + shape_str(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), c = ca + cb;
  std::vector<double> out(static_cast<std::size_t>(n) * c);
  for (int r = 0; r < n; ++r) {
    std::copy_n(a.value().begin() + r * ca, ca, out.begin() + r * c);
    std::copy_n(b.value().begin() + r * cb, cb, out.begin() + r * c + ca);
  }
  return make_op({n, c}, std::move(out), {a, b}, [n, ca, cb, c](Node& self) {
    if (double* g = parent_grad(self, 0))
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < ca; ++j) g[r * ca + j] += self.grad[r * c + j];
    if (double* g = parent_grad(self, 1))
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < cb; ++j) g[r * cb + j] += self.grad[r * c + ca + j];
  });
}

// Columns [start, start + len) of an [N, D] matrix.
inline Var slice_cols(const Var& x, int start, int len) {
  detail::require(x.shape().size() == 2 && start >= 0 && start + len <= x.dim(1), "slice_cols",
                  shape_str(x.shape()));
  const int n = x.dim(0), d = x.dim(1);
  std::vector<double> out(static_cast<std::size_t>(n) * len);
  for (int r = 0; r < n; ++r) std::copy_n(x.value().begin() + r * d + start, len, out.begin() + r * len);
  return make_op({n, len}, std::move(out), {x}, [n, d, start, len](Node& self) {
    if (double* g = parent_grad(self, 0))
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < len; ++j) g[r * d + start + j] += self.grad[r * len + j];
  });
}

// Stacks equally shaped tensors along a new leading axis.
inline Var stack(const std::vector<Var>& xs) {
  detail::require(!xs.empty(), "stack", "empty input");
  const Shape inner = xs.front().shape();
  const std::size_t m = numel(inner);
  Shape shape{static_cast<int>(xs.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> out(m * xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    detail::require(xs[k].shape() == inner, "stack", "ragged input");
    std::copy(xs[k].value().begin(), xs[k].value().end(), out.begin() + k * m);
  }
  return make_op(std::move(shape), std::move(out), xs, [m](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k)
      if (double* g = parent_grad(self, k))
        for (std::size_t i = 0; i < m; ++i) g[i] += self.grad[k * m + i];
  });
}

// ---------------------------------------------------------------------------
// Dense layers

// y = x W^T + b with x [N, I], W [O, I], b [O] (b may be undefined).
inline Var linear(const Var& x, const Var& w, const Var& b = Var()) {
  detail::require(x.shape().size() == 2 && w.shape().size() == 2 && x.dim(1) == w.dim(1), "linear",
                  shape_str(x.shape()) + " x " + shape_str(w.shape()));
  const int n = x.dim(0), in = x.dim(1), o = w.dim(0);
  std::vector<double> out(static_cast<std::size_t>(n) * o);
  MapMat y(out.data(), n, o);
  y.noalias() = CMapMat(x.value().data(), n, in) * CMapMat(w.value().data(), o, in).transpose();
  std::vector<Var> parents{x, w};
  if (b.defined()) {
    detail::require(b.size() == static_cast<std::size_t>(o), "linear", "bias size");
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < o; ++j) out[r * o + j] += b[j];
    parents.push_back(b);
  }
  return make_op({n, o}, std::move(out), parents, [n, in, o](Node& self) {
    CMapMat gy(self.grad.data(), n, o);
    if (double* g = parent_grad(self, 0))
      MapMat(g, n, in).noalias() += gy * CMapMat(parent_value(self, 1).data(), o, in);
    if (double* g = parent_grad(self, 1))
      MapMat(g, o, in).noalias() += gy.transpose() * CMapMat(parent_value(self, 0).data(), n, in);
    if (self.parents.size() > 2)
      if (double* g = parent_grad(self, 2))
        for (int r = 0; r < n; ++r)
          for (int j = 0; j < o; ++j) g[j] += self.grad[r * o + j];
  });
}

struct Conv2dGeometry {
  int n, c, h, w;        // input
  int co, kh, kw;        // kernel
  int stride, ph, pw;    // stride and zero padding
  int ho, wo;            // output

  int patch() const { return c * kh * kw; }
  int out_pixels() const { return ho * wo; }
};

namespace detail {

// cols is [C*kh*kw, N*Ho*Wo]; column index = n*Ho*Wo + oy*Wo + ox.
inline void im2col(const double* x, const Conv2dGeometry& g, double* cols) {
  const std::size_t ncols = static_cast<std::size_t>(g.n) * g.out_pixels();
  for (int ci = 0; ci < g.c; ++ci)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        double* row = cols + (static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx)) * ncols;
        for (int b = 0; b < g.n; ++b) {
          const double* plane = x + (static_cast<std::size_t>(b) * g.c + ci) * g.h * g.w;
          double* dst = row + static_cast<std::size_t>(b) * g.out_pixels();
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.ph + ky;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pw + kx;
              dst[oy * g.wo + ox] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? plane[iy * g.w + ix] : 0.0;
            }
          }
        }
      }
}

inline void col2im(const double* cols, const Conv2dGeometry& g, double* dx) {
  const std::size_t ncols = static_cast<std::size_t>(g.n) * g.out_pixels();
  for (int ci = 0; ci < g.c; ++ci)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + (static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx)) * ncols;
        for (int b = 0; b < g.n; ++b) {
          double* plane = dx + (static_cast<std::size_t>(b) * g.c + ci) * g.h * g.w;
          const double* src = row + static_cast<std::size_t>(b) * g.out_pixels();
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.ph + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pw + kx;
              if (ix >= 0 && ix < g.w) plane[iy * g.w + ix] += src[oy * g.wo + ox];
            }
          }
        }
      }
}

}  // namespace detail

// 2-D cross-correlation. x [N,C,H,W], w [Co,C,kh,kw], b [Co] or undefined.
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad_h, int pad_w) {
  detail::require(x.shape().size() == 4 && w.shape().size() == 4 && x.dim(1) == w.dim(1), "conv2d",
                  shape_str(x.shape()) + " * " + shape_str(w.shape()));
  Conv2dGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, pad_h, pad_w, 0, 0};
  g.ho = (g.h + 2 * g.ph - g.kh) / stride + 1;
  g.wo = (g.w + 2 * g.pw - g.kw) / stride + 1;
  detail::require(g.ho > 0 && g.wo > 0, "conv2d", "empty output");

  const std::size_t ncols = static_cast<std::size_t>(g.n) * g.out_pixels();
  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(g.patch()) * ncols);
  detail::im2col(x.value().data(), g, cols->data());

  RowMat prod = CMapMat(w.value().data(), g.co, g.patch()) * CMapMat(cols->data(), g.patch(), ncols);
  std::vector<double> out(static_cast<std::size_t>(g.n) * g.co * g.out_pixels());
  for (int bi = 0; bi < g.n; ++bi)
    for (int oc = 0; oc < g.co; ++oc) {
      const double bias = b.defined() ? b[oc] : 0.0;
      const double* src = prod.data() + static_cast<std::size_t>(oc) * ncols + static_cast<std::size_t>(bi) * g.out_pixels();
      double* dst = out.data() + (static_cast<std::size_t>(bi) * g.co + oc) * g.out_pixels();
      for (int p = 0; p < g.out_pixels(); ++p) dst[p] = src[p] + bias;
    }

  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  const bool keep_cols = grad_enabled();
  if (!keep_cols) cols.reset();
  return make_op({g.n, g.co, g.ho, g.wo}, std::move(out), parents, [g, cols, ncols](Node& self) {
    RowMat gy(g.co, ncols);
    for (int bi = 0; bi < g.n; ++bi)
      for (int oc = 0; oc < g.co; ++oc) {
        const double* src = self.grad.data() + (static_cast<std::size_t>(bi) * g.co + oc) * g.out_pixels();
        std::copy_n(src, g.out_pixels(), gy.data() + static_cast<std::size_t>(oc) * ncols + static_cast<std::size_t>(bi) * g.out_pixels());
      }
    if (double* gw = parent_grad(self, 1))
      MapMat(gw, g.co, g.patch()).noalias() += gy * CMapMat(cols->data(), g.patch(), ncols).transpose();
    if (double* gx = parent_grad(self, 0)) {
      RowMat dcols = CMapMat(parent_value(self, 1).data(), g.co, g.patch()).transpose() * gy;
      detail::col2im(dcols.data(), g, gx);
    }
    if (self.parents.size() > 2)
      if (double* gb = parent_grad(self, 2))
        for (int oc = 0; oc < g.co; ++oc) gb[oc] += gy.row(oc).sum();
  });
}

// ---------------------------------------------------------------------------
// Spatial operations on [N, C, H, W]

// x + v broadcast over all spatial positions; v is [N, C].
inline Var add_spatial(const Var& x, const Var& v) {
  detail::require(x.shape().size() == 4 && v.shape() == Shape{x.dim(0), x.dim(1)}, "add_spatial",
                  shape_str(x.shape()) + " + " + shape_str(v.shape()));
  const int nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(x.size());
  for (int k = 0; k < nc; ++k)
    for (int p = 0; p < hw; ++p) out[k * hw + p] = x[k * hw + p] + v[k];
  return make_op(x.shape(), std::move(out), {x, v}, [nc, hw](Node& self) {
    if (double* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = parent_grad(self, 1))
      for (int k = 0; k < nc; ++k)
        for (int p = 0; p < hw; ++p) g[k] += self.grad[k * hw + p];
  });
}

// x * a where a is [N, 1, H, W] broadcast across channels.
inline Var mul_spatial(const Var& x, const Var& a) {
  detail::require(x.shape().size() == 4 && a.shape() == Shape{x.dim(0), 1, x.dim(2), x.dim(3)}, "mul_spatial",
                  shape_str(x.shape()) + " * " + shape_str(a.shape()));
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(x.size());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p) out[(b * c + ch) * hw + p] = x[(b * c + ch) * hw + p] * a[b * hw + p];
  return make_op(x.shape(), std::move(out), {x, a}, [n, c, hw](Node& self) {
    const auto& xv = parent_value(self, 0);
    const auto& av = parent_value(self, 1);
    double* gx = parent_grad(self, 0);
    double* ga = parent_grad(self, 1);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < hw; ++p) {
          const std::size_t i = static_cast<std::size_t>((b * c + ch) * hw + p);
          if (gx) gx[i] += self.grad[i] * av[b * hw + p];
          if (ga) ga[b * hw + p] += self.grad[i] * xv[i];
        }
  });
}

// Softmax over all spatial positions of a single-channel map [N, 1, H, W].
inline Var spatial_softmax(const Var& x) {
  detail::require(x.shape().size() == 4 && x.dim(1) == 1, "spatial_softmax", shape_str(x.shape()));
  const int n = x.dim(0), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(x.size());
  for (int b = 0; b < n; ++b) {
    const double* src = x.value().data() + b * hw;
    double mx = *std::max_element(src, src + hw);
    double z = 0.0;
    for (int p = 0; p < hw; ++p) z += (out[b * hw + p] = std::exp(src[p] - mx));
    for (int p = 0; p < hw; ++p) out[b * hw + p] /= z;
  }
  return make_op(x.shape(), std::move(out), {x}, [n, hw](Node& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    for (int b = 0; b < n; ++b) {
      const double* y = self.value.data() + b * hw;
      const double* gy = self.grad.data() + b * hw;
      double dot = 0.0;
      for (int p = 0; p < hw; ++p) dot += gy[p] * y[p];
      for (int p = 0; p < hw; ++p) g[b * hw + p] += y[p] * (gy[p] - dot);
    }
  });
}

// sum_{p} alpha[n, 0, p] * feat[n, c, p] -> [N, C].
inline Var weighted_spatial_sum(const Var& alpha, const Var& feat) {
  detail::require(feat.shape().size() == 4 && alpha.shape() == Shape{feat.dim(0), 1, feat.dim(2), feat.dim(3)},
                  "weighted_spatial_sum", shape_str(alpha.shape()) + " . " + shape_str(feat.shape()));
  const int n = feat.dim(0), c = feat.dim(1), hw = feat.dim(2) * feat.dim(3);
  std::vector<double> out(static_cast<std::size_t>(n) * c, 0.0);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int p = 0; p < hw; ++p) s += alpha[b * hw + p] * feat[(b * c + ch) * hw + p];
      out[b * c + ch] = s;
    }
  return make_op({n, c}, std::move(out), {alpha, feat}, [n, c, hw](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& fv = parent_value(self, 1);
    double* ga = parent_grad(self, 0);
    double* gf = parent_grad(self, 1);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch) {
        const double gy = self.grad[b * c + ch];
        for (int p = 0; p < hw; ++p) {
          const std::size_t i = static_cast<std::size_t>((b * c + ch) * hw + p);
          if (ga) ga[b * hw + p] += gy * fv[i];
          if (gf) gf[i] += gy * av[b * hw + p];
        }
      }
  });
}

// Mean over spatial positions: [N, C, H, W] -> [N, C].
inline Var global_avg_pool(const Var& x) {
  detail::require(x.shape().size() == 4, "global_avg_pool", shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<std::size_t>(n) * c);
  for (int k = 0; k < n * c; ++k) {
    double s = 0.0;
    for (int p = 0; p < hw; ++p) s += x[k * hw + p];
    out[k] = s / hw;
  }
  return make_op({n, c}, std::move(out), {x}, [n, c, hw](Node& self) {
    if (double* g = parent_grad(self, 0))
      for (int k = 0; k < n * c; ++k)
        for (int p = 0; p < hw; ++p) g[k * hw + p] += self.grad[k] / hw;
  });
}

// ---------------------------------------------------------------------------
// Recurrent cell

// Gates [N, 4H] in (input, forget, cell, output) order plus c_prev [N, H]
// produce [N, 2H] holding (h, c).
inline Var lstm_cell(const Var& gates, const Var& c_prev) {
  detail::require(gates.shape().size() == 2 && c_prev.shape().size() == 2 && gates.dim(0) == c_prev.dim(0) &&
                      gates.dim(1) == 4 * c_prev.dim(1),
                  "lstm_cell", shape_str(gates.shape()) + ", " + shape_str(c_prev.shape()));
  const int n = c_prev.dim(0), h = c_prev.dim(1);
  std::vector<double> out(static_cast<std::size_t>(n) * 2 * h);
  for (int b = 0; b < n; ++b) {
    const double* z = gates.value().data() + b * 4 * h;
    for (int j = 0; j < h; ++j) {
      const double i = sigmoid_scalar(z[j]), f = sigmoid_scalar(z[h + j]);
      const double g = std::tanh(z[2 * h + j]), o = sigmoid_scalar(z[3 * h + j]);
      const double c = f * c_prev[b * h + j] + i * g;
      out[b * 2 * h + h + j] = c;
      out[b * 2 * h + j] = o * std::tanh(c);
    }
  }
  return make_op({n, 2 * h}, std::move(out), {gates, c_prev}, [n, h](Node& self) {
    const auto& zv = parent_value(self, 0);
    const auto& cp = parent_value(self, 1);
    double* gz = parent_grad(self, 0);
    double* gc = parent_grad(self, 1);
    for (int b = 0; b < n; ++b) {
      const double* z = zv.data() + b * 4 * h;
      for (int j = 0; j < h; ++j) {
        const double i = sigmoid_scalar(z[j]), f = sigmoid_scalar(z[h + j]);
        const double g = std::tanh(z[2 * h + j]), o = sigmoid_scalar(z[3 * h + j]);
        const double c = self.value[b * 2 * h + h + j];
        const double tc = std::tanh(c);
        const double dh = self.grad[b * 2 * h + j];
        const double dc = self.grad[b * 2 * h + h + j] + dh * o * (1.0 - tc * tc);
        if (gz) {
          double* d = gz + b * 4 * h;
          d[j] += dc * g * i * (1.0 - i);
          d[h + j] += dc * cp[b * h + j] * f * (1.0 - f);
          d[2 * h + j] += dc * i * (1.0 - g * g);
          d[3 * h + j] += dh * tc * o * (1.0 - o);
        }
        if (gc) gc[b * h + j] += dc * f;
      }
    }
  });
}

// Rows of x [N, D] picked by index (repeats allowed).
inline Var gather_rows(const Var& x, std::vector<int> idx) {
  detail::require(x.shape().size() == 2, "gather_rows", "expects a 2-D input, got " + shape_str(x.shape()));
  const int n = x.dim(0), d = x.dim(1);
  std::vector<double> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    detail::require(idx[r] >= 0 && idx[r] < n, "gather_rows", "index out of range");
    std::copy_n(x.value().begin() + static_cast<std::ptrdiff_t>(idx[r]) * d, d, out.begin() + r * d);
  }
  const int m = static_cast<int>(idx.size());
  return make_op({m, d}, std::move(out), {x}, [d, idx = std::move(idx)](Node& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (int k = 0; k < d; ++k) g[idx[r] * d + k] += self.grad[r * d + k];
  });
}

}  // namespace sbir::ops
