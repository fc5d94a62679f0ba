#pragma once

// Shared layers: affine maps, multi-head attention, feed-forward.
//
// Every parameter bundle exposes `visit(fn, prefix)` which calls
// fn(name, tensor) for each owned tensor in a fixed order. Serialization,
// optimizers and gradient checks are all driven through it.

#include <cmath>
#include <string>

#include "cadtrack/ops.hpp"
#include "cadtrack/rng.hpp"

namespace cadtrack {

template <typename P, typename F>
void for_each_param(const P& params, F&& fn, const std::string& prefix = "") {
  const_cast<P&>(params).visit([&](const std::string& name, Tensor<typename P::value_type>& t) {
    fn(name, static_cast<const Tensor<typename P::value_type>&>(t));
  }, prefix);
}

template <typename P>
std::size_t param_count(const P& params) {
  std::size_t n = 0;
  for_each_param(params, [&](const std::string&, const auto& t) { n += t.numel(); });
  return n;
}

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

/// y = x W + b with W: [in, out].
template <typename T>
struct LinearParams {
  using value_type = T;
  Tensor<T> w, b;

  static LinearParams init(std::size_t in, std::size_t out, Rng& rng, bool zero = false) {
    LinearParams p;
    p.w = zero ? Tensor<T>({in, out}) : rng.normal_tensor<T>({in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    p.b = Tensor<T>({out});
    return p;
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    fn(join(prefix, "w"), w);
    fn(join(prefix, "b"), b);
  }
};

template <typename T>
Var<T> linear(Graph<T>& g, Var<T> x, const LinearParams<T>& p) {
  return add_row(matmul(x, g.param(p.w)), g.param(p.b));
}

template <typename T>
struct AttentionParams {
  using value_type = T;
  LinearParams<T> q, k, v, o;
  std::size_t heads = 1;

  /// zero_output zero-initializes the output projection so the attention
  /// branch contributes nothing until trained.
  static AttentionParams init(std::size_t dim, std::size_t heads, Rng& rng, bool zero_output) {
    if (heads == 0 || dim % heads != 0) {
      throw DimensionError("attention: dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
    }
    AttentionParams p;
    p.heads = heads;
    p.q = LinearParams<T>::init(dim, dim, rng);
    p.k = LinearParams<T>::init(dim, dim, rng);
    p.v = LinearParams<T>::init(dim, dim, rng);
    p.o = LinearParams<T>::init(dim, dim, rng, zero_output);
    return p;
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    q.visit(fn, join(prefix, "q"));
    k.visit(fn, join(prefix, "k"));
    v.visit(fn, join(prefix, "v"));
    o.visit(fn, join(prefix, "o"));
  }
};

/// Scaled dot-product attention of queries q_in[Nq,C] over keys/values
/// kv_in[Nk,C]. Optionally returns the per-head weight matrices [Nq,Nk].
template <typename T>
Var<T> attention(Graph<T>& g, Var<T> q_in, Var<T> kv_in, const AttentionParams<T>& p,
                 std::vector<Tensor<T>>* weights = nullptr) {
  if (q_in.dim(1) != kv_in.dim(1)) throw dim_error("attention", q_in.shape(), kv_in.shape());
  const std::size_t dim = q_in.dim(1), dh = dim / p.heads;
  auto q = linear(g, q_in, p.q);
  auto k = linear(g, kv_in, p.k);
  auto v = linear(g, kv_in, p.v);
  const T s = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Var<T>> outs;
  for (std::size_t h = 0; h < p.heads; ++h) {
    auto qh = p.heads == 1 ? q : slice_cols(q, h * dh, dh);
    auto kh = p.heads == 1 ? k : slice_cols(k, h * dh, dh);
    auto vh = p.heads == 1 ? v : slice_cols(v, h * dh, dh);
    auto a = softmax_rows(scale(matmul_nt(qh, kh), s));
    if (weights) weights->push_back(a.value());
    outs.push_back(matmul(a, vh));
  }
  auto o = p.heads == 1 ? outs[0] : concat_cols(outs);
  return linear(g, o, p.o);
}

template <typename T>
struct FfnParams {
  using value_type = T;
  LinearParams<T> fc1, fc2;

  static FfnParams init(std::size_t dim, std::size_t hidden, Rng& rng, bool zero_output = false) {
    return FfnParams{LinearParams<T>::init(dim, hidden, rng), LinearParams<T>::init(hidden, dim, rng, zero_output)};
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    fc1.visit(fn, join(prefix, "fc1"));
    fc2.visit(fn, join(prefix, "fc2"));
  }
};

template <typename T>
Var<T> ffn(Graph<T>& g, Var<T> x, const FfnParams<T>& p) {
  return linear(g, gelu(linear(g, x, p.fc1)), p.fc2);
}

template <typename T>
struct NormParams {
  using value_type = T;
  Tensor<T> gain, bias;

  static NormParams init(std::size_t dim) { return NormParams{Tensor<T>::ones({dim}), Tensor<T>({dim})}; }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    fn(join(prefix, "gain"), gain);
    fn(join(prefix, "bias"), bias);
  }
};

template <typename T>
Var<T> layer_norm(Graph<T>& g, Var<T> x, const NormParams<T>& p) {
  return layer_norm(x, g.param(p.gain), g.param(p.bias));
}

}  // namespace cadtrack
