#pragma once

// Mamba-based feature interaction: both modalities are compressed into a
// shared latent width, concatenated along the token axis (RGB first), run
// through stacked bidirectional selective-scan blocks, split, expanded back
// and added residually.

#include <cmath>

#include "cadtrack/config.hpp"
#include "cadtrack/nn.hpp"

namespace cadtrack {

enum class ScanDirection { forward, backward };

/// Selective scan over x[L,D] with per-token step delta[L,D] (positive),
/// state matrix a[D,S] (negative), input/readout projections b[L,S], c[L,S]
/// and skip d[D]:
///   h_t = exp(delta_t * a) .* h_{t-1} + (delta_t * b_t) x_t,   h_0 = 0
///   y_t = <c_t, h_t> + d * x_t
/// The backward direction visits tokens in reverse, which equals reversing
/// the input, scanning forward and reversing the output.
/// When `states` is given it receives h_t for every step ([L, D, S]).
template <typename T>
Tensor<T> selective_scan_values(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b,
                                const Tensor<T>& c, const Tensor<T>& d, ScanDirection dir,
                                Tensor<T>* states = nullptr) {
  if (x.rank() != 2) throw dim_error("selective_scan", x.shape());
  const std::size_t len = x.dim(0), ch = x.dim(1);
  if (a.rank() != 2 || a.dim(0) != ch) throw dim_error("selective_scan A", x.shape(), a.shape());
  const std::size_t ns = a.dim(1);
  if (delta.shape() != x.shape()) throw dim_error("selective_scan delta", x.shape(), delta.shape());
  if (b.shape() != Shape{len, ns} || c.shape() != Shape{len, ns}) throw dim_error("selective_scan B/C", b.shape(), c.shape());
  if (d.numel() != ch) throw dim_error("selective_scan D", x.shape(), d.shape());

  Tensor<T> y({len, ch});
  std::vector<T> h(ch * ns, T(0));
  if (states) *states = Tensor<T>({len, ch, ns});
  for (std::size_t step = 0; step < len; ++step) {
    const std::size_t t = dir == ScanDirection::forward ? step : len - 1 - step;
    for (std::size_t k = 0; k < ch; ++k) {
      const T dt = delta[t * ch + k];
      const T xt = x[t * ch + k];
      T acc = 0;
      for (std::size_t s = 0; s < ns; ++s) {
        T& hs = h[k * ns + s];
        hs = std::exp(dt * a[k * ns + s]) * hs + dt * b[t * ns + s] * xt;
        acc += c[t * ns + s] * hs;
      }
      y[t * ch + k] = acc + d[k] * xt;
    }
    if (states) std::copy(h.begin(), h.end(), states->data() + t * ch * ns);
  }
  return y;
}

/// Differentiable selective scan; one linear pass forward, one linear pass
/// for the adjoints (hidden states are kept from the forward pass).
template <typename T>
Var<T> selective_scan(Var<T> x, Var<T> delta, Var<T> a, Var<T> b, Var<T> c, Var<T> d, ScanDirection dir) {
  Graph<T>* g = x.graph;
  Tensor<T> states;
  const bool keep = g->grad_enabled();
  Tensor<T> y = selective_scan_values(x.value(), delta.value(), a.value(), b.value(), c.value(), d.value(), dir,
                                      keep ? &states : nullptr);
  return g->record(std::move(y), {x, delta, a, b, c, d},
                   [g, x, delta, a, b, c, d, dir, states = std::move(states)](const Tensor<T>& gy) {
    const auto& xv = x.value();
    const auto& dv = delta.value();
    const auto& av = a.value();
    const auto& bv = b.value();
    const auto& cv = c.value();
    const auto& skip = d.value();
    const std::size_t len = xv.dim(0), ch = xv.dim(1), ns = av.dim(1);
    auto* gx = g->grad_buffer(x);
    auto* gdelta = g->grad_buffer(delta);
    auto* ga = g->grad_buffer(a);
    auto* gb = g->grad_buffer(b);
    auto* gc = g->grad_buffer(c);
    auto* gd = g->grad_buffer(d);
    // carry[k,s] = dL/dh_t flowing back from step t+1 (already multiplied by its decay)
    std::vector<T> carry(ch * ns, T(0));
    for (std::size_t step = len; step-- > 0;) {
      const std::size_t t = dir == ScanDirection::forward ? step : len - 1 - step;
      const bool has_prev = step > 0;
      const std::size_t tp = dir == ScanDirection::forward ? t - 1 : t + 1;
      for (std::size_t k = 0; k < ch; ++k) {
        const T go = gy[t * ch + k];
        const T dt = dv[t * ch + k];
        const T xt = xv[t * ch + k];
        T dx = go * skip[k];
        T ddt = 0;
        if (gd) (*gd)[k] += go * xt;
        for (std::size_t s = 0; s < ns; ++s) {
          const T ht = states[(t * ch + k) * ns + s];
          const T hprev = has_prev ? states[(tp * ch + k) * ns + s] : T(0);
          const T gh = go * cv[t * ns + s] + carry[k * ns + s];
          if (gc) (*gc)[t * ns + s] += go * ht;
          const T decay = std::exp(dt * av[k * ns + s]);
          const T gdecay = gh * hprev;
          ddt += gdecay * decay * av[k * ns + s] + gh * bv[t * ns + s] * xt;
          if (ga) (*ga)[k * ns + s] += gdecay * decay * dt;
          if (gb) (*gb)[t * ns + s] += gh * dt * xt;
          dx += gh * dt * bv[t * ns + s];
          carry[k * ns + s] = gh * decay;
        }
        if (gx) (*gx)[t * ch + k] += dx;
        if (gdelta) (*gdelta)[t * ch + k] += ddt;
      }
    }
  });
}

// ------------------------------------------------------------------ parameters

/// Input-dependent SSM parameters for one scan direction over latent width D.
template <typename T>
struct SsmParams {
  using value_type = T;
  LinearParams<T> delta;  // D -> D, softplus applied
  Tensor<T> b_proj;       // [D, S]
  Tensor<T> c_proj;       // [D, S]
  Tensor<T> a_log;        // [D, S]; A = -exp(a_log)
  Tensor<T> skip;         // [D]

  static SsmParams init(std::size_t dim, std::size_t state, Rng& rng) {
    SsmParams p;
    p.delta = LinearParams<T>::init(dim, dim, rng);
    for (auto& v : p.delta.w.values()) v *= T(0.1);
    for (auto& v : p.delta.b.values()) {
      // softplus(bias) starts log-uniform in [0.01, 0.1]
      const double dt = std::exp(rng.uniform(std::log(0.01), std::log(0.1)));
      v = static_cast<T>(std::log(std::expm1(dt)));
    }
    const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
    p.b_proj = rng.normal_tensor<T>({dim, state}, sd);
    p.c_proj = rng.normal_tensor<T>({dim, state}, sd);
    p.a_log = Tensor<T>({dim, state});
    for (std::size_t k = 0; k < dim; ++k)
      for (std::size_t s = 0; s < state; ++s) p.a_log[k * state + s] = static_cast<T>(std::log(static_cast<double>(s + 1)));
    p.skip = Tensor<T>::ones({dim});
    return p;
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    delta.visit(fn, join(prefix, "delta"));
    fn(join(prefix, "b_proj"), b_proj);
    fn(join(prefix, "c_proj"), c_proj);
    fn(join(prefix, "a_log"), a_log);
    fn(join(prefix, "skip"), skip);
  }
};

template <typename T>
struct MambaBlockParams {
  using value_type = T;
  NormParams<T> norm;
  LinearParams<T> in_main, in_gate;
  Tensor<T> conv_w;  // [D, K] causal depthwise
  Tensor<T> conv_b;  // [D]
  SsmParams<T> fwd, bwd;
  LinearParams<T> out;

  static MambaBlockParams init(std::size_t dim, std::size_t state, std::size_t conv_width, Rng& rng) {
    MambaBlockParams p;
    p.norm = NormParams<T>::init(dim);
    p.in_main = LinearParams<T>::init(dim, dim, rng);
    p.in_gate = LinearParams<T>::init(dim, dim, rng);
    p.conv_w = rng.normal_tensor<T>({dim, conv_width}, 1.0 / std::sqrt(static_cast<double>(conv_width)));
    p.conv_b = Tensor<T>({dim});
    p.fwd = SsmParams<T>::init(dim, state, rng);
    p.bwd = SsmParams<T>::init(dim, state, rng);
    p.out = LinearParams<T>::init(dim, dim, rng);
    return p;
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    norm.visit(fn, join(prefix, "norm"));
    in_main.visit(fn, join(prefix, "in_main"));
    in_gate.visit(fn, join(prefix, "in_gate"));
    fn(join(prefix, "conv_w"), conv_w);
    fn(join(prefix, "conv_b"), conv_b);
    fwd.visit(fn, join(prefix, "ssm_f"));
    bwd.visit(fn, join(prefix, "ssm_b"));
    out.visit(fn, join(prefix, "out"));
  }
};

template <typename T>
struct MfiParams {
  using value_type = T;
  Tensor<T> down[2];  // per modality [C, C/r]
  Tensor<T> up[2];    // per modality [C/r, C]; zero at init
  std::vector<MambaBlockParams<T>> blocks;

  std::size_t latent() const { return down[0].dim(1); }

  static MfiParams init(std::size_t embed_dim, const MfiConfig& cfg, Rng& rng) {
    cfg.validate(embed_dim);
    const std::size_t d = embed_dim / cfg.ratio;
    MfiParams p;
    for (int m = 0; m < 2; ++m) {
      p.down[m] = rng.normal_tensor<T>({embed_dim, d}, 1.0 / std::sqrt(static_cast<double>(embed_dim)));
      p.up[m] = Tensor<T>({d, embed_dim});
    }
    for (std::size_t i = 0; i < cfg.mamba_layers; ++i)
      p.blocks.push_back(MambaBlockParams<T>::init(d, cfg.state_dim, cfg.conv_width, rng));
    return p;
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    fn(join(prefix, "down_rgb"), down[0]);
    fn(join(prefix, "down_tir"), down[1]);
    fn(join(prefix, "up_rgb"), up[0]);
    fn(join(prefix, "up_tir"), up[1]);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(fn, join(prefix, "mamba" + std::to_string(i)));
  }
};

// ------------------------------------------------------------------- forward

template <typename T>
Var<T> ssm(Graph<T>& g, Var<T> u, const SsmParams<T>& p, ScanDirection dir) {
  auto delta = softplus(linear(g, u, p.delta));
  auto b = matmul(u, g.param(p.b_proj));
  auto c = matmul(u, g.param(p.c_proj));
  auto a = neg(exp(g.param(p.a_log)));
  return selective_scan(u, delta, a, b, c, g.param(p.skip), dir);
}

/// out_proj((SSM_f(u) + SSM_b(u)) .* silu(gate(n))) with
/// u = silu(causal_conv(main(n))) and n = LN(x).
template <typename T>
Var<T> mamba_block(Graph<T>& g, Var<T> x_in, const MambaBlockParams<T>& p) {
  auto x = layer_norm(g, x_in, p.norm);
  auto gate = silu(linear(g, x, p.in_gate));
  auto u = silu(add_row(conv1d_causal(linear(g, x, p.in_main), g.param(p.conv_w)), g.param(p.conv_b)));
  auto main = add(ssm(g, u, p.fwd, ScanDirection::forward), ssm(g, u, p.bwd, ScanDirection::backward));
  return linear(g, mul(main, gate), p.out);
}

template <typename T>
struct MfiOutput {
  Var<T> rgb, tir;
};

template <typename T>
MfiOutput<T> mfi_forward(Graph<T>& g, Var<T> f_rgb, Var<T> f_tir, const MfiParams<T>& p) {
  if (f_rgb.shape() != f_tir.shape() || f_rgb.value().rank() != 2) throw dim_error("mfi_forward", f_rgb.shape(), f_tir.shape());
  if (f_rgb.dim(1) != p.down[0].dim(0)) throw dim_error("mfi_forward width", f_rgb.shape(), p.down[0].shape());
  const std::size_t n = f_rgb.dim(0);
  auto x = concat_rows<T>({matmul(f_rgb, g.param(p.down[0])), matmul(f_tir, g.param(p.down[1]))});
  for (const auto& blk : p.blocks) x = add(x, mamba_block(g, x, blk));
  auto back_rgb = slice_rows(x, 0, n);
  auto back_tir = slice_rows(x, n, n);
  return {add(f_rgb, matmul(back_rgb, g.param(p.up[0]))), add(f_tir, matmul(back_tir, g.param(p.up[1])))};
}

// ---------------------------------------------------------------- cost model

/// Multiply-add count of one mfi_forward on N tokens per modality, width C,
/// latent d = C/r, state S, conv width K, B stacked blocks. With L = 2N:
///   projections   2 * 2 * N * C * d          (down + up, both modalities)
///   per block     L*d*d * 2                  (main + gate input maps)
///               + L*d*K                      (causal conv)
///               + 2 * (L*d*d + 2*L*d*S)      (delta, B, C maps per direction)
///               + 2 * (2*L*d*S)              (state update + readout per direction)
///               + L*d                        (gating product)
///               + L*d*d                      (output map)
/// Every term is linear in N.
inline double mfi_flops(std::size_t tokens, std::size_t embed_dim, const MfiConfig& cfg) {
  const double n = static_cast<double>(tokens), c = static_cast<double>(embed_dim);
  const double d = c / static_cast<double>(cfg.ratio), s = static_cast<double>(cfg.state_dim);
  const double k = static_cast<double>(cfg.conv_width), len = 2.0 * n;
  const double projections = 2.0 * 2.0 * n * c * d;
  const double block = 2.0 * len * d * d + len * d * k + 2.0 * (len * d * d + 2.0 * len * d * s) +
                       2.0 * (2.0 * len * d * s) + len * d + len * d * d;
  return projections + static_cast<double>(cfg.mamba_layers) * block;
}

/// Multiply-add count of a dense bidirectional cross-attention interaction
/// (each modality queries the other with full-width Q/K/V/O projections).
inline double dense_cross_attention_flops(std::size_t tokens, std::size_t embed_dim) {
  const double n = static_cast<double>(tokens), c = static_cast<double>(embed_dim);
  return 2.0 * (4.0 * n * c * c + 2.0 * n * n * c);
}

}  // namespace cadtrack
