#pragma once

// Straight-loop reference implementations. They share no code with the
// library kernels and favour obviousness over speed; tests compare the
// library against them.

#include <cmath>
#include <numbers>
#include <vector>

#include "cadtrack/kernels.hpp"

namespace cadtrack::oracle {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] = static_cast<T>(s);
    }
  return c;
}

/// Direct cross-correlation, zero padding. Kernel layouts follow
/// kernels::conv2d: pointwise [Co,Ci], depthwise [C,K,K], dense [Co,Ci,K,K].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, kernels::ConvMode mode, std::size_t stride, std::size_t pad) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  std::size_t co = 0, k = 1;
  if (mode == kernels::ConvMode::pointwise) {
    co = w.dim(0);
  } else if (mode == kernels::ConvMode::depthwise) {
    co = ci;
    k = w.dim(1);
  } else {
    co = w.dim(0);
    k = w.dim(2);
  }
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  auto in = [&](std::size_t c, long y, long xx) -> long double {
    if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(wd)) return 0;
    return x[(c * h + static_cast<std::size_t>(y)) * wd + static_cast<std::size_t>(xx)];
  };
  Tensor<T> y({co, oh, ow});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        long double s = 0;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long yy = static_cast<long>(r * stride + ky) - static_cast<long>(pad);
            const long xx = static_cast<long>(c * stride + kx) - static_cast<long>(pad);
            if (mode == kernels::ConvMode::pointwise) {
              for (std::size_t i = 0; i < ci; ++i) s += w[o * ci + i] * in(i, yy, xx);
            } else if (mode == kernels::ConvMode::depthwise) {
              s += w[(o * k + ky) * k + kx] * in(o, yy, xx);
            } else {
              for (std::size_t i = 0; i < ci; ++i) s += w[((o * ci + i) * k + ky) * k + kx] * in(i, yy, xx);
            }
          }
        y[(o * oh + r) * ow + c] = static_cast<T>(s);
      }
  return y;
}

/// y[t,d] = sum_j w[d,j] x[t - (K-1) + j, d], zero before the sequence start.
template <typename T>
Tensor<T> conv1d_causal(const Tensor<T>& x, const Tensor<T>& w) {
  const std::size_t len = x.dim(0), d = x.dim(1), k = w.dim(1);
  Tensor<T> y({len, d});
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < d; ++c) {
      long double s = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const long src = static_cast<long>(t) - static_cast<long>(k - 1) + static_cast<long>(j);
        if (src >= 0) s += static_cast<long double>(w[c * k + j]) * x[static_cast<std::size_t>(src) * d + c];
      }
      y[t * d + c] = static_cast<T>(s);
    }
  return y;
}

/// Clamp each (row, col) point into the grid, then blend the four
/// surrounding cells.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& f, const Tensor<T>& points) {
  const std::size_t h = f.dim(0), w = f.dim(1), c = f.dim(2), n = points.dim(0);
  Tensor<T> out({n, c});
  for (std::size_t p = 0; p < n; ++p) {
    const double r = std::clamp(static_cast<double>(points[2 * p]), 0.0, static_cast<double>(h - 1));
    const double q = std::clamp(static_cast<double>(points[2 * p + 1]), 0.0, static_cast<double>(w - 1));
    const auto r0 = static_cast<std::size_t>(std::floor(r)), q0 = static_cast<std::size_t>(std::floor(q));
    const std::size_t r1 = std::min(r0 + 1, h - 1), q1 = std::min(q0 + 1, w - 1);
    const double fr = r - static_cast<double>(r0), fq = q - static_cast<double>(q0);
    for (std::size_t k = 0; k < c; ++k) {
      const double v00 = f[(r0 * w + q0) * c + k], v01 = f[(r0 * w + q1) * c + k];
      const double v10 = f[(r1 * w + q0) * c + k], v11 = f[(r1 * w + q1) * c + k];
      out[p * c + k] = static_cast<T>((1 - fr) * ((1 - fq) * v00 + fq * v01) + fr * ((1 - fq) * v10 + fq * v11));
    }
  }
  return out;
}

/// One step at a time, with the discretization spelled out per step:
/// decay = exp(delta * a), input = delta * b, h = decay h + input x.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b,
                         const Tensor<T>& c, const Tensor<T>& d, bool backward) {
  const std::size_t len = x.dim(0), ch = x.dim(1), ns = a.dim(1);
  Tensor<T> y({len, ch});
  for (std::size_t k = 0; k < ch; ++k) {
    std::vector<double> h(ns, 0.0);
    for (std::size_t step = 0; step < len; ++step) {
      const std::size_t t = backward ? len - 1 - step : step;
      const double dt = delta[t * ch + k], xt = x[t * ch + k];
      std::vector<double> next(ns);
      for (std::size_t s = 0; s < ns; ++s) {
        const double a_bar = std::exp(dt * static_cast<double>(a[k * ns + s]));
        const double b_bar = dt * static_cast<double>(b[t * ns + s]);
        next[s] = a_bar * h[s] + b_bar * xt;
      }
      h = next;
      double out = static_cast<double>(d[k]) * xt;
      for (std::size_t s = 0; s < ns; ++s) out += static_cast<double>(c[t * ns + s]) * h[s];
      y[t * ch + k] = static_cast<T>(out);
    }
  }
  return y;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t n = x.dim(0), m = x.dim(1);
  Tensor<T> y({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY, z = 0;
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, static_cast<double>(x[i * m + j]));
    for (std::size_t j = 0; j < m; ++j) z += std::exp(x[i * m + j] - mx);
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] = static_cast<T>(std::exp(x[i * m + j] - mx) / z);
  }
  return y;
}

/// Single-head attention softmax(Q K^T / sqrt(d)) V on already projected
/// matrices.
template <typename T>
Tensor<T> dense_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  const std::size_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1), dv = v.dim(1);
  Tensor<T> s({nq, nk});
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < nk; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < d; ++p) acc += static_cast<double>(q[i * d + p]) * k[j * d + p];
      s[i * nk + j] = static_cast<T>(acc / std::sqrt(static_cast<double>(d)));
    }
  const auto a = softmax_rows(s);
  Tensor<T> out({nq, dv});
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t p = 0; p < dv; ++p) {
      double acc = 0;
      for (std::size_t j = 0; j < nk; ++j) acc += static_cast<double>(a[i * nk + j]) * v[j * dv + p];
      out[i * dv + p] = static_cast<T>(acc);
    }
  return out;
}

/// Two-pass mean and variance per row, then affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps = 1e-5) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor<T> y({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += x[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (x[i * c + j] - mu) * (x[i * c + j] - mu);
    var /= static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j)
      y[i * c + j] = static_cast<T>((x[i * c + j] - mu) / std::sqrt(var + eps) * gain[j] + bias[j]);
  }
  return y;
}

inline double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

}  // namespace cadtrack::oracle
