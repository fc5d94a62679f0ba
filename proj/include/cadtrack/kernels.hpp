#pragma once

// Plain forward/adjoint loops shared by the differentiable ops. Every
// reduction runs in ascending index order so results are reproducible.

#include <cmath>
#include <numbers>

#include "cadtrack/tensor.hpp"

namespace cadtrack::kernels {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t r, const char* op) {
  if (t.rank() != r) throw dim_error(op, t.shape());
}

// c[m,n] = a[m,k] * b[k,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw dim_error("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return c;
}

// c[m,n] = a[m,k] * b[n,k]^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw dim_error("matmul_nt", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* br = b.data() + j * k;
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      c[i * n + j] = acc;
    }
  }
  return c;
}

// c[m,n] = a[k,m]^T * b[k,n]
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw dim_error("matmul_tn", a.shape(), b.shape());
  }
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  T* pc = c.data();
  for (std::size_t p = 0; p < k; ++p) {
    const T* ar = a.data() + p * m;
    const T* br = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = ar[i];
      T* row = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * br[j];
    }
  }
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

/// Numerically stable softmax along `axis` (max subtracted per slice).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw dim_error("softmax: axis " + std::to_string(axis), x.shape());
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Tensor<T> y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = x[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, x[base + i * inner]);
      T sum = 0;
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(x[base + i * inner] - mx);
        y[base + i * inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < len; ++i) y[base + i * inner] /= sum;
    }
  }
  return y;
}

template <typename T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T silu(T x) { return x * sigmoid(x); }

template <typename T>
T silu_grad(T x) {
  const T s = sigmoid(x);
  return s * (T(1) + x * (T(1) - s));
}

// tanh approximation of x * Phi(x)
template <typename T>
T gelu(T x) {
  const T k = std::sqrt(T(2) / std::numbers::pi_v<T>);
  const T u = k * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  const T k = std::sqrt(T(2) / std::numbers::pi_v<T>);
  const T u = k * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(u);
  const T du = k * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

template <typename T>
T softplus(T x) {
  if (x > T(20)) return x;
  if (x < T(-20)) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <typename T>
T softplus_grad(T x) { return sigmoid(x); }

// ---------------------------------------------------------------- convolution

enum class ConvMode { pointwise, depthwise, dense };

struct ConvGeometry {
  std::size_t c_in, c_out, h, w, k, stride, pad, out_h, out_w;
};

// Kernel shapes: pointwise [C_out, C_in]; depthwise [C, K, K]; dense [C_out, C_in, K, K].
template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& kernel, ConvMode mode,
                           std::size_t stride, std::size_t pad) {
  require_rank(x, 3, "conv2d input");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.c_in = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.stride = stride;
  g.pad = pad;
  switch (mode) {
    case ConvMode::pointwise:
      if (kernel.rank() != 2 || kernel.dim(1) != g.c_in) throw dim_error("conv2d pointwise", x.shape(), kernel.shape());
      g.c_out = kernel.dim(0);
      g.k = 1;
      break;
    case ConvMode::depthwise:
      if (kernel.rank() != 3 || kernel.dim(0) != g.c_in || kernel.dim(1) != kernel.dim(2)) {
        throw dim_error("conv2d depthwise", x.shape(), kernel.shape());
      }
      g.c_out = g.c_in;
      g.k = kernel.dim(1);
      break;
    case ConvMode::dense:
      if (kernel.rank() != 4 || kernel.dim(1) != g.c_in || kernel.dim(2) != kernel.dim(3)) {
        throw dim_error("conv2d dense", x.shape(), kernel.shape());
      }
      g.c_out = kernel.dim(0);
      g.k = kernel.dim(2);
      break;
  }
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k) throw dim_error("conv2d: kernel larger than input", x.shape(), kernel.shape());
  g.out_h = (g.h + 2 * pad - g.k) / stride + 1;
  g.out_w = (g.w + 2 * pad - g.k) / stride + 1;
  return g;
}

// Visits every (out, in, kernel-tap) triple of a cross-correlation; `fn`
// receives flat indices into output, input, and kernel buffers.
template <typename Fn>
void for_each_tap(const ConvGeometry& g, ConvMode mode, Fn&& fn) {
  const auto ih_of = [&](std::size_t oy, std::size_t ky) -> long {
    return static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
  };
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const std::size_t oi = (co * g.out_h + oy) * g.out_w + ox;
        const std::size_t ci_begin = mode == ConvMode::depthwise ? co : 0;
        const std::size_t ci_end = mode == ConvMode::depthwise ? co + 1 : g.c_in;
        for (std::size_t ci = ci_begin; ci < ci_end; ++ci) {
          for (std::size_t ky = 0; ky < g.k; ++ky) {
            const long iy = ih_of(oy, ky);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              const long ix = ih_of(ox, kx);
              if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
              const std::size_t ii = (ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix);
              std::size_t ki = 0;
              switch (mode) {
                case ConvMode::pointwise: ki = co * g.c_in + ci; break;
                case ConvMode::depthwise: ki = (co * g.k + ky) * g.k + kx; break;
                case ConvMode::dense: ki = ((co * g.c_in + ci) * g.k + ky) * g.k + kx; break;
              }
              fn(oi, ii, ki);
            }
          }
        }
      }
    }
  }
}

/// Cross-correlation with zero padding. x is [C_in, H, W].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, ConvMode mode, std::size_t stride = 1,
                 std::size_t pad = 0) {
  const auto g = conv_geometry(x, kernel, mode, stride, pad);
  Tensor<T> y({g.c_out, g.out_h, g.out_w});
  if (mode == ConvMode::pointwise && stride == 1 && pad == 0) {
    // [C_out, C_in] x [C_in, HW]
    return matmul(kernel, x.reshaped({g.c_in, g.h * g.w})).reshaped({g.c_out, g.h, g.w});
  }
  for_each_tap(g, mode, [&](std::size_t oi, std::size_t ii, std::size_t ki) { y[oi] += kernel[ki] * x[ii]; });
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, ConvMode mode, std::size_t stride,
                     std::size_t pad, const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dk) {
  const auto g = conv_geometry(x, kernel, mode, stride, pad);
  if (mode == ConvMode::pointwise && stride == 1 && pad == 0) {
    const auto xm = x.reshaped({g.c_in, g.h * g.w});
    const auto dym = dy.reshaped({g.c_out, g.h * g.w});
    if (dx) {
      const auto d = matmul_tn(kernel, dym);
      for (std::size_t i = 0; i < d.numel(); ++i) (*dx)[i] += d[i];
    }
    if (dk) {
      const auto d = matmul_nt(dym, xm);
      for (std::size_t i = 0; i < d.numel(); ++i) (*dk)[i] += d[i];
    }
    return;
  }
  for_each_tap(g, mode, [&](std::size_t oi, std::size_t ii, std::size_t ki) {
    if (dx) (*dx)[ii] += kernel[ki] * dy[oi];
    if (dk) (*dk)[ki] += x[ii] * dy[oi];
  });
}

/// Causal depthwise 1-D convolution over the sequence axis of x[L, D] with
/// kernel [D, K]: y[t,d] = sum_k w[d,k] * x[t-(K-1)+k, d], left zero padding.
template <typename T>
Tensor<T> conv1d_causal(const Tensor<T>& x, const Tensor<T>& w) {
  require_rank(x, 2, "conv1d input");
  if (w.rank() != 2 || w.dim(0) != x.dim(1)) throw dim_error("conv1d_causal", x.shape(), w.shape());
  const std::size_t len = x.dim(0), d = x.dim(1), k = w.dim(1);
  Tensor<T> y({len, d});
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      T acc = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const long src = static_cast<long>(t + j) - static_cast<long>(k - 1);
        if (src < 0) continue;
        acc += w[c * k + j] * x[static_cast<std::size_t>(src) * d + c];
      }
      y[t * d + c] = acc;
    }
  }
  return y;
}

// ------------------------------------------------------------- bilinear sampling

/// Sampling points are (row, col) in continuous cell coordinates; integer
/// values land exactly on stored cells. Points are clamped to
/// [0, H-1] x [0, W-1] before interpolation.
struct BilinearTap {
  std::size_t r0, r1, c0, c1;
  double fr, fc;
  bool clamped_r, clamped_c;
};

template <typename T>
BilinearTap bilinear_tap(T r, T c, std::size_t h, std::size_t w) {
  BilinearTap tap{};
  const T rmax = static_cast<T>(h - 1), cmax = static_cast<T>(w - 1);
  tap.clamped_r = !(r >= 0 && r <= rmax);
  tap.clamped_c = !(c >= 0 && c <= cmax);
  const T rc = std::clamp(std::isnan(r) ? T(0) : r, T(0), rmax);
  const T cc = std::clamp(std::isnan(c) ? T(0) : c, T(0), cmax);
  tap.r0 = static_cast<std::size_t>(std::floor(rc));
  tap.c0 = static_cast<std::size_t>(std::floor(cc));
  tap.r1 = std::min(tap.r0 + 1, h - 1);
  tap.c1 = std::min(tap.c0 + 1, w - 1);
  tap.fr = static_cast<double>(rc - static_cast<T>(tap.r0));
  tap.fc = static_cast<double>(cc - static_cast<T>(tap.c0));
  return tap;
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& f, const Tensor<T>& points) {
  require_rank(f, 3, "bilinear_sample grid");
  if (points.rank() != 2 || points.dim(1) != 2) throw dim_error("bilinear_sample points", points.shape());
  const std::size_t h = f.dim(0), w = f.dim(1), ch = f.dim(2), n = points.dim(0);
  Tensor<T> out({n, ch});
  for (std::size_t p = 0; p < n; ++p) {
    const auto tap = bilinear_tap(points[2 * p], points[2 * p + 1], h, w);
    const T fr = static_cast<T>(tap.fr), fc = static_cast<T>(tap.fc);
    const T w00 = (1 - fr) * (1 - fc), w01 = (1 - fr) * fc, w10 = fr * (1 - fc), w11 = fr * fc;
    const T* v00 = f.data() + (tap.r0 * w + tap.c0) * ch;
    const T* v01 = f.data() + (tap.r0 * w + tap.c1) * ch;
    const T* v10 = f.data() + (tap.r1 * w + tap.c0) * ch;
    const T* v11 = f.data() + (tap.r1 * w + tap.c1) * ch;
    for (std::size_t c = 0; c < ch; ++c) {
      out[p * ch + c] = w00 * v00[c] + w01 * v01[c] + w10 * v10[c] + w11 * v11[c];
    }
  }
  return out;
}

}  // namespace cadtrack::kernels
