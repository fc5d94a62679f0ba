#pragma once

// Differentiable primitives over Var. Each op computes its value with the
// plain kernels and registers the adjoint rule on the tape.

#include <vector>

#include "cadtrack/autodiff.hpp"
#include "cadtrack/kernels.hpp"

namespace cadtrack {

namespace detail {

template <typename T>
void add_into(Tensor<T>* dst, const Tensor<T>& src) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.numel(); ++i) (*dst)[i] += src[i];
}

template <typename T>
void same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) throw dim_error(op, a.shape(), b.shape());
  if (a.graph != b.graph) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

template <typename T, typename F, typename DF>
Var<T> unary(Var<T> x, F f, DF df) {
  const auto& xv = x.value();
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = f(xv[i]);
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x}, [g, x, df](const Tensor<T>& gy) {
    auto* gx = g->grad_buffer(x);
    if (!gx) return;
    const auto& xv = x.value();
    for (std::size_t i = 0; i < xv.numel(); ++i) (*gx)[i] += gy[i] * df(xv[i]);
  });
}

}  // namespace detail

// ------------------------------------------------------------------ elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_shape("add", a, b);
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  Graph<T>* g = a.graph;
  return g->record(std::move(y), {a, b}, [g, a, b](const Tensor<T>& gy) {
    detail::add_into(g->grad_buffer(a), gy);
    detail::add_into(g->grad_buffer(b), gy);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::same_shape("sub", a, b);
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  Graph<T>* g = a.graph;
  return g->record(std::move(y), {a, b}, [g, a, b](const Tensor<T>& gy) {
    detail::add_into(g->grad_buffer(a), gy);
    if (auto* gb = g->grad_buffer(b))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gb)[i] -= gy[i];
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_shape("mul", a, b);
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  Graph<T>* g = a.graph;
  return g->record(std::move(y), {a, b}, [g, a, b](const Tensor<T>& gy) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (auto* ga = g->grad_buffer(a))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * bv[i];
    if (auto* gb = g->grad_buffer(b))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gb)[i] += gy[i] * av[i];
  });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  detail::same_shape("div", a, b);
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] /= b.value()[i];
  Graph<T>* g = a.graph;
  return g->record(std::move(y), {a, b}, [g, a, b](const Tensor<T>& gy) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (auto* ga = g->grad_buffer(a))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] / bv[i];
    if (auto* gb = g->grad_buffer(b))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gb)[i] -= gy[i] * av[i] / (bv[i] * bv[i]);
  });
}

template <typename T>
Var<T> minimum(Var<T> a, Var<T> b) {
  detail::same_shape("minimum", a, b);
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = std::min(a.value()[i], b.value()[i]);
  Graph<T>* g = a.graph;
  return g->record(std::move(y), {a, b}, [g, a, b](const Tensor<T>& gy) {
    auto* ga = g->grad_buffer(a);
    auto* gb = g->grad_buffer(b);
    for (std::size_t i = 0; i < gy.numel(); ++i) {
      const bool take_a = a.value()[i] <= b.value()[i];
      if (take_a && ga) (*ga)[i] += gy[i];
      if (!take_a && gb) (*gb)[i] += gy[i];
    }
  });
}

template <typename T>
Var<T> maximum(Var<T> a, Var<T> b) {
  detail::same_shape("maximum", a, b);
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = std::max(a.value()[i], b.value()[i]);
  Graph<T>* g = a.graph;
  return g->record(std::move(y), {a, b}, [g, a, b](const Tensor<T>& gy) {
    auto* ga = g->grad_buffer(a);
    auto* gb = g->grad_buffer(b);
    for (std::size_t i = 0; i < gy.numel(); ++i) {
      const bool take_a = a.value()[i] >= b.value()[i];
      if (take_a && ga) (*ga)[i] += gy[i];
      if (!take_a && gb) (*gb)[i] += gy[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T) { return s; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T) { return T(1); });
}

template <typename T>
Var<T> neg(Var<T> x) { return scale(x, T(-1)); }

template <typename T>
Var<T> square(Var<T> x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v) { return 2 * v; });
}

template <typename T>
Var<T> abs(Var<T> x) {
  return detail::unary(x, [](T v) { return std::abs(v); }, [](T v) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}

template <typename T>
Var<T> log(Var<T> x) {
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v) { return T(1) / v; });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return detail::unary(x, [](T v) { return kernels::sigmoid(v); },
                       [](T v) { const T s = kernels::sigmoid(v); return s * (1 - s); });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return detail::unary(x, [](T v) { return v > 0 ? v : T(0); }, [](T v) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Var<T> silu(Var<T> x) {
  return detail::unary(x, [](T v) { return kernels::silu(v); }, [](T v) { return kernels::silu_grad(v); });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  return detail::unary(x, [](T v) { return kernels::gelu(v); }, [](T v) { return kernels::gelu_grad(v); });
}

template <typename T>
Var<T> softplus(Var<T> x) {
  return detail::unary(x, [](T v) { return kernels::softplus(v); }, [](T v) { return kernels::softplus_grad(v); });
}

// ------------------------------------------------------------- broadcasting

// x[N,C] + b[C]
template <typename T>
Var<T> add_row(Var<T> x, Var<T> b) {
  if (x.value().rank() != 2 || b.numel() != x.dim(1)) throw dim_error("add_row", x.shape(), b.shape());
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor<T> y = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] += b.value()[j];
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x, b}, [g, x, b, n, c](const Tensor<T>& gy) {
    detail::add_into(g->grad_buffer(x), gy);
    if (auto* gb = g->grad_buffer(b))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gb)[j] += gy[i * c + j];
  });
}

// x[N,C] * w[C], w broadcast over rows
template <typename T>
Var<T> mul_row(Var<T> x, Var<T> w) {
  if (x.value().rank() != 2 || w.numel() != x.dim(1)) throw dim_error("mul_row", x.shape(), w.shape());
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor<T> y = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] *= w.value()[j];
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x, w}, [g, x, w, n, c](const Tensor<T>& gy) {
    if (auto* gx = g->grad_buffer(x))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += gy[i * c + j] * w.value()[j];
    if (auto* gw = g->grad_buffer(w))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gw)[j] += gy[i * c + j] * x.value()[i * c + j];
  });
}

// x[N,M] + b[N], b broadcast over columns
template <typename T>
Var<T> add_col(Var<T> x, Var<T> b) {
  if (x.value().rank() != 2 || b.numel() != x.dim(0)) throw dim_error("add_col", x.shape(), b.shape());
  const std::size_t n = x.dim(0), m = x.dim(1);
  Tensor<T> y = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] += b.value()[i];
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x, b}, [g, x, b, n, m](const Tensor<T>& gy) {
    detail::add_into(g->grad_buffer(x), gy);
    if (auto* gb = g->grad_buffer(b))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*gb)[i] += gy[i * m + j];
  });
}

// x[N,M] * s[N], s broadcast over columns
template <typename T>
Var<T> mul_col(Var<T> x, Var<T> s) {
  if (x.value().rank() != 2 || s.numel() != x.dim(0)) throw dim_error("mul_col", x.shape(), s.shape());
  const std::size_t n = x.dim(0), m = x.dim(1);
  Tensor<T> y = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] *= s.value()[i];
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x, s}, [g, x, s, n, m](const Tensor<T>& gy) {
    if (auto* gx = g->grad_buffer(x))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*gx)[i * m + j] += gy[i * m + j] * s.value()[i];
    if (auto* gs = g->grad_buffer(s))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*gs)[i] += gy[i * m + j] * x.value()[i * m + j];
  });
}

// ------------------------------------------------------------------- linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tensor<T> y = kernels::matmul(a.value(), b.value());
  Graph<T>* g = a.graph;
  return g->record(std::move(y), {a, b}, [g, a, b](const Tensor<T>& gy) {
    if (auto* ga = g->grad_buffer(a)) detail::add_into(ga, kernels::matmul_nt(gy, b.value()));
    if (auto* gb = g->grad_buffer(b)) detail::add_into(gb, kernels::matmul_tn(a.value(), gy));
  });
}

// a[M,K] * b[N,K]^T
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tensor<T> y = kernels::matmul_nt(a.value(), b.value());
  Graph<T>* g = a.graph;
  return g->record(std::move(y), {a, b}, [g, a, b](const Tensor<T>& gy) {
    if (auto* ga = g->grad_buffer(a)) detail::add_into(ga, kernels::matmul(gy, b.value()));
    if (auto* gb = g->grad_buffer(b)) detail::add_into(gb, kernels::matmul_tn(gy, a.value()));
  });
}

template <typename T>
Var<T> transpose(Var<T> x) {
  Graph<T>* g = x.graph;
  return g->record(kernels::transpose(x.value()), {x}, [g, x](const Tensor<T>& gy) {
    detail::add_into(g->grad_buffer(x), kernels::transpose(gy));
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape s) {
  Graph<T>* g = x.graph;
  return g->record(x.value().reshaped(std::move(s)), {x}, [g, x](const Tensor<T>& gy) {
    detail::add_into(g->grad_buffer(x), gy);
  });
}

// ---------------------------------------------------------------- concat/slice

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts[0].dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.dim(1) != c) throw dim_error("concat_rows", parts[0].shape(), p.shape());
    rows += p.dim(0);
  }
  Tensor<T> y({rows, c});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.numel(), y.data() + off);
    off += p.numel();
  }
  Graph<T>* g = parts[0].graph;
  return g->record(std::move(y), parts, [g, parts](const Tensor<T>& gy) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      if (auto* gp = g->grad_buffer(p))
        for (std::size_t i = 0; i < p.numel(); ++i) (*gp)[i] += gy[off + i];
      off += p.numel();
    }
  });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count) {
  if (x.value().rank() != 2 || count == 0 || begin + count > x.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of " +
                         shape_str(x.shape()));
  }
  const std::size_t c = x.dim(1);
  Tensor<T> y({count, c});
  std::copy(x.value().data() + begin * c, x.value().data() + (begin + count) * c, y.data());
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x}, [g, x, begin, c](const Tensor<T>& gy) {
    if (auto* gx = g->grad_buffer(x))
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gx)[begin * c + i] += gy[i];
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.dim(0) != n) throw dim_error("concat_cols", parts[0].shape(), p.shape());
    cols += p.dim(1);
  }
  Tensor<T> y({n, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) y[i * cols + off + j] = p.value()[i * w + j];
    off += w;
  }
  Graph<T>* g = parts[0].graph;
  return g->record(std::move(y), parts, [g, parts, n, cols](const Tensor<T>& gy) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.dim(1);
      if (auto* gp = g->grad_buffer(p))
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) (*gp)[i * w + j] += gy[i * cols + off + j];
      off += w;
    }
  });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count) {
  if (x.value().rank() != 2 || count == 0 || begin + count > x.dim(1)) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of " +
                         shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor<T> y({n, count});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j) y[i * count + j] = x.value()[i * c + begin + j];
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x}, [g, x, begin, count, n, c](const Tensor<T>& gy) {
    if (auto* gx = g->grad_buffer(x))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < count; ++j) (*gx)[i * c + begin + j] += gy[i * count + j];
  });
}

// Gathers flat elements by index into a rank-1 result.
template <typename T>
Var<T> pick(Var<T> x, std::vector<std::size_t> idx) {
  Tensor<T> y({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.numel()) throw DimensionError("pick: index out of range for " + shape_str(x.shape()));
    y[i] = x.value()[idx[i]];
  }
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x}, [g, x, idx](const Tensor<T>& gy) {
    if (auto* gx = g->grad_buffer(x))
      for (std::size_t i = 0; i < idx.size(); ++i) (*gx)[idx[i]] += gy[i];
  });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(Var<T> x) {
  T s = 0;
  for (auto v : x.value().values()) s += v;
  Graph<T>* g = x.graph;
  return g->record(Tensor<T>::scalar(s), {x}, [g, x](const Tensor<T>& gy) {
    if (auto* gx = g->grad_buffer(x))
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += gy[0];
  });
}

template <typename T>
Var<T> mean(Var<T> x) { return scale(sum(x), T(1) / static_cast<T>(x.numel())); }

// x[N,C] -> [C], average over rows
template <typename T>
Var<T> mean_rows(Var<T> x) {
  if (x.value().rank() != 2) throw dim_error("mean_rows", x.shape());
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor<T> y({c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j] += x.value()[i * c + j];
  for (std::size_t j = 0; j < c; ++j) y[j] /= static_cast<T>(n);
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x}, [g, x, n, c](const Tensor<T>& gy) {
    if (auto* gx = g->grad_buffer(x))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += gy[j] / static_cast<T>(n);
  });
}

// x[N,M] -> [N], average over columns
template <typename T>
Var<T> mean_cols(Var<T> x) {
  if (x.value().rank() != 2) throw dim_error("mean_cols", x.shape());
  const std::size_t n = x.dim(0), m = x.dim(1);
  Tensor<T> y({n});
  for (std::size_t i = 0; i < n; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < m; ++j) s += x.value()[i * m + j];
    y[i] = s / static_cast<T>(m);
  }
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x}, [g, x, n, m](const Tensor<T>& gy) {
    if (auto* gx = g->grad_buffer(x))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*gx)[i * m + j] += gy[i] / static_cast<T>(m);
  });
}

// --------------------------------------------------------------- normalization

// Softmax over the last axis of a rank-2 tensor.
template <typename T>
Var<T> softmax_rows(Var<T> x) {
  if (x.value().rank() != 2) throw dim_error("softmax_rows", x.shape());
  Tensor<T> y = kernels::softmax(x.value(), 1);
  const std::size_t n = x.dim(0), m = x.dim(1);
  Graph<T>* g = x.graph;
  const Var<T> out{g, g->size()};  // id this record will receive
  return g->record(std::move(y), {x}, [g, x, n, m, out](const Tensor<T>& gy) {
    auto* gx = g->grad_buffer(x);
    const auto& yv = out.value();
    for (std::size_t i = 0; i < n; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < m; ++j) dot += gy[i * m + j] * yv[i * m + j];
      for (std::size_t j = 0; j < m; ++j) (*gx)[i * m + j] += yv[i * m + j] * (gy[i * m + j] - dot);
    }
  });
}

/// Per-row layer normalization of x[N,C] with affine gain/bias.
/// Constant rows produce exactly the bias (the variance term is epsilon only).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  if (x.value().rank() != 2 || gain.numel() != x.dim(1) || bias.numel() != x.dim(1)) {
    throw dim_error("layer_norm", x.shape(), gain.shape());
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor<T> xhat({n, c});
  Tensor<T> rstd({n});
  Tensor<T> y({n, c});
  const auto& xv = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T d = xv[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(c);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xv[i * c + j] - mu) * rstd[i];
      y[i * c + j] = xhat[i * c + j] * gain.value()[j] + bias.value()[j];
    }
  }
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x, gain, bias},
                   [g, x, gain, bias, n, c, xhat = std::move(xhat), rstd = std::move(rstd)](const Tensor<T>& gy) {
                     if (auto* gg = g->grad_buffer(gain))
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < c; ++j) (*gg)[j] += gy[i * c + j] * xhat[i * c + j];
                     if (auto* gb = g->grad_buffer(bias))
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < c; ++j) (*gb)[j] += gy[i * c + j];
                     auto* gx = g->grad_buffer(x);
                     if (!gx) return;
                     const auto& gv = gain.value();
                     for (std::size_t i = 0; i < n; ++i) {
                       T m1 = 0, m2 = 0;
                       for (std::size_t j = 0; j < c; ++j) {
                         const T d = gy[i * c + j] * gv[j];
                         m1 += d;
                         m2 += d * xhat[i * c + j];
                       }
                       m1 /= static_cast<T>(c);
                       m2 /= static_cast<T>(c);
                       for (std::size_t j = 0; j < c; ++j) {
                         const T d = gy[i * c + j] * gv[j];
                         (*gx)[i * c + j] += rstd[i] * (d - m1 - xhat[i * c + j] * m2);
                       }
                     }
                   });
}

/// Per-channel normalization of x[C, M] over its M positions using the
/// statistics of this input (training-mode batch norm for a single image).
/// Writes the batch mean and biased variance to the out-params.
template <typename T>
Var<T> channel_norm_batch(Var<T> x, Var<T> gamma, Var<T> beta, T eps, Tensor<T>* mean_out, Tensor<T>* var_out) {
  if (x.value().rank() != 2 || gamma.numel() != x.dim(0) || beta.numel() != x.dim(0)) {
    throw dim_error("channel_norm_batch", x.shape(), gamma.shape());
  }
  const std::size_t c = x.dim(0), m = x.dim(1);
  Tensor<T> xhat({c, m}), rstd({c}), y({c, m});
  Tensor<T> mu_t({c}), var_t({c});
  const auto& xv = x.value();
  for (std::size_t i = 0; i < c; ++i) {
    T mu = 0;
    for (std::size_t j = 0; j < m; ++j) mu += xv[i * m + j];
    mu /= static_cast<T>(m);
    T var = 0;
    for (std::size_t j = 0; j < m; ++j) var += (xv[i * m + j] - mu) * (xv[i * m + j] - mu);
    var /= static_cast<T>(m);
    mu_t[i] = mu;
    var_t[i] = var;
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      xhat[i * m + j] = (xv[i * m + j] - mu) * rstd[i];
      y[i * m + j] = xhat[i * m + j] * gamma.value()[i] + beta.value()[i];
    }
  }
  if (mean_out) *mean_out = mu_t;
  if (var_out) *var_out = var_t;
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x, gamma, beta},
                   [g, x, gamma, beta, c, m, xhat = std::move(xhat), rstd = std::move(rstd)](const Tensor<T>& gy) {
                     if (auto* gg = g->grad_buffer(gamma))
                       for (std::size_t i = 0; i < c; ++i)
                         for (std::size_t j = 0; j < m; ++j) (*gg)[i] += gy[i * m + j] * xhat[i * m + j];
                     if (auto* gb = g->grad_buffer(beta))
                       for (std::size_t i = 0; i < c; ++i)
                         for (std::size_t j = 0; j < m; ++j) (*gb)[i] += gy[i * m + j];
                     auto* gx = g->grad_buffer(x);
                     if (!gx) return;
                     for (std::size_t i = 0; i < c; ++i) {
                       const T gm = gamma.value()[i];
                       T m1 = 0, m2 = 0;
                       for (std::size_t j = 0; j < m; ++j) {
                         m1 += gy[i * m + j] * gm;
                         m2 += gy[i * m + j] * gm * xhat[i * m + j];
                       }
                       m1 /= static_cast<T>(m);
                       m2 /= static_cast<T>(m);
                       for (std::size_t j = 0; j < m; ++j)
                         (*gx)[i * m + j] += rstd[i] * (gy[i * m + j] * gm - m1 - xhat[i * m + j] * m2);
                     }
                   });
}

// ---------------------------------------------------------------- convolution

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, kernels::ConvMode mode, std::size_t stride = 1, std::size_t pad = 0) {
  Tensor<T> y = kernels::conv2d(x.value(), kernel.value(), mode, stride, pad);
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x, kernel}, [g, x, kernel, mode, stride, pad](const Tensor<T>& gy) {
    kernels::conv2d_backward(x.value(), kernel.value(), mode, stride, pad, gy, g->grad_buffer(x),
                             g->grad_buffer(kernel));
  });
}

// x[C,H,W] + b[C]
template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> b) {
  if (x.value().rank() != 3) throw dim_error("add_channel_bias", x.shape(), b.shape());
  const Shape s = x.shape();
  return reshape(add_col(reshape(x, {s[0], s[1] * s[2]}), b), s);
}

template <typename T>
Var<T> conv1d_causal(Var<T> x, Var<T> w) {
  Tensor<T> y = kernels::conv1d_causal(x.value(), w.value());
  Graph<T>* g = x.graph;
  return g->record(std::move(y), {x, w}, [g, x, w](const Tensor<T>& gy) {
    const auto& xv = x.value();
    const auto& wv = w.value();
    const std::size_t len = xv.dim(0), d = xv.dim(1), k = wv.dim(1);
    auto* gx = g->grad_buffer(x);
    auto* gw = g->grad_buffer(w);
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < d; ++c)
        for (std::size_t j = 0; j < k; ++j) {
          const long src = static_cast<long>(t + j) - static_cast<long>(k - 1);
          if (src < 0) continue;
          const std::size_t si = static_cast<std::size_t>(src) * d + c;
          if (gx) (*gx)[si] += wv[c * k + j] * gy[t * d + c];
          if (gw) (*gw)[c * k + j] += xv[si] * gy[t * d + c];
        }
  });
}

/// Differentiable bilinear sampling; gradients flow to both the feature grid
/// and the sampling points. Clamped coordinates receive zero gradient.
template <typename T>
Var<T> bilinear_sample(Var<T> f, Var<T> points) {
  Tensor<T> y = kernels::bilinear_sample(f.value(), points.value());
  Graph<T>* g = f.graph;
  return g->record(std::move(y), {f, points}, [g, f, points](const Tensor<T>& gy) {
    const auto& fv = f.value();
    const auto& pv = points.value();
    const std::size_t h = fv.dim(0), w = fv.dim(1), ch = fv.dim(2), n = pv.dim(0);
    auto* gf = g->grad_buffer(f);
    auto* gp = g->grad_buffer(points);
    for (std::size_t p = 0; p < n; ++p) {
      const auto tap = kernels::bilinear_tap(pv[2 * p], pv[2 * p + 1], h, w);
      const T fr = static_cast<T>(tap.fr), fc = static_cast<T>(tap.fc);
      const std::size_t i00 = (tap.r0 * w + tap.c0) * ch, i01 = (tap.r0 * w + tap.c1) * ch;
      const std::size_t i10 = (tap.r1 * w + tap.c0) * ch, i11 = (tap.r1 * w + tap.c1) * ch;
      T dr = 0, dc = 0;
      for (std::size_t c = 0; c < ch; ++c) {
        const T go = gy[p * ch + c];
        if (gf) {
          (*gf)[i00 + c] += go * (1 - fr) * (1 - fc);
          (*gf)[i01 + c] += go * (1 - fr) * fc;
          (*gf)[i10 + c] += go * fr * (1 - fc);
          (*gf)[i11 + c] += go * fr * fc;
        }
        dr += go * ((1 - fc) * (fv[i10 + c] - fv[i00 + c]) + fc * (fv[i11 + c] - fv[i01 + c]));
        dc += go * ((1 - fr) * (fv[i01 + c] - fv[i00 + c]) + fr * (fv[i11 + c] - fv[i10 + c]));
      }
      if (gp) {
        if (!tap.clamped_r) (*gp)[2 * p] += dr;
        if (!tap.clamped_c) (*gp)[2 * p + 1] += dc;
      }
    }
  });
}

}  // namespace cadtrack
