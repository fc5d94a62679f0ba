#pragma once

// Self-check suites shared by the `check` subcommand, the acceptance binary
// and the unit tests. Every check returns one line with a verdict and the
// measured figure of merit.

#include <chrono>
#include <functional>
#include <map>
#include <sstream>

#include "cadtrack/check/gradcheck.hpp"
#include "cadtrack/check/oracles.hpp"
#include "cadtrack/model.hpp"

namespace cadtrack::check {

struct CheckLine {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

using Report = std::vector<CheckLine>;

inline bool all_pass(const Report& r) {
  return std::all_of(r.begin(), r.end(), [](const CheckLine& l) { return l.pass; });
}

inline void print_report(std::ostream& out, const Report& r) {
  for (const auto& l : r) out << (l.pass ? "PASS " : "FAIL ") << l.name << ": " << l.detail << "\n";
}

namespace detail {

template <typename F>
CheckLine timed(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckLine line;
  line.name = name;
  try {
    body(line);
  } catch (const std::exception& e) {
    line.pass = false;
    line.detail = std::string("exception: ") + e.what();
  }
  line.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return line;
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

/// max_i |a_i - b_i| / max_i |b_i|
template <typename T>
double scaled_error(const Tensor<T>& got, const Tensor<T>& want) {
  if (got.shape() != want.shape()) throw dim_error("scaled_error", got.shape(), want.shape());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < got.numel(); ++i) {
    num = std::max(num, std::abs(static_cast<double>(got[i]) - static_cast<double>(want[i])));
    den = std::max(den, std::abs(static_cast<double>(want[i])));
  }
  return num / std::max(den, 1e-300);
}

inline std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

}  // namespace detail

// =================================================================== oracles

struct ScanInstance {
  Tensor<double> x, delta, a, b, c, d;
};

inline ScanInstance random_scan_instance(Rng& rng, std::size_t max_len = 64, std::size_t max_ch = 8,
                                         std::size_t max_state = 16) {
  const std::size_t len = detail::between(rng, 1, max_len), ch = detail::between(rng, 1, max_ch);
  const std::size_t ns = detail::between(rng, 1, max_state);
  ScanInstance s;
  s.x = rng.normal_tensor<double>({len, ch}, 1.0);
  s.delta = Tensor<double>({len, ch});
  for (auto& v : s.delta.values()) v = kernels::softplus(rng.normal(0, 1.5));
  s.a = Tensor<double>({ch, ns});
  for (auto& v : s.a.values()) v = -std::exp(rng.normal(0, 1.0));
  s.b = rng.normal_tensor<double>({len, ns}, 1.0);
  s.c = rng.normal_tensor<double>({len, ns}, 1.0);
  s.d = rng.normal_tensor<double>({ch}, 1.0);
  return s;
}

/// Linear-pass scan against the per-step recurrence, both directions.
inline CheckLine scan_oracle_check(std::size_t instances = 100, std::uint64_t seed = 101) {
  return detail::timed("selective scan vs per-step recurrence", [&](CheckLine& line) {
    Rng rng(seed);
    double worst = 0;
    for (std::size_t i = 0; i < instances; ++i) {
      const auto s = random_scan_instance(rng);
      for (bool backward : {false, true}) {
        const auto got = selective_scan_values(s.x, s.delta, s.a, s.b, s.c, s.d,
                                               backward ? ScanDirection::backward : ScanDirection::forward);
        worst = std::max(worst, detail::scaled_error(got, oracle::selective_scan(s.x, s.delta, s.a, s.b, s.c, s.d, backward)));
      }
    }
    line.pass = worst <= 1e-10;
    line.detail = std::to_string(instances) + " instances x 2 directions, max rel err " + detail::fmt(worst);
  });
}

inline Report oracle_suite(std::uint64_t seed = 7) {
  using kernels::ConvMode;
  Report r;
  constexpr double tol32 = 1e-5;
  constexpr std::size_t shapes = 100;

  r.push_back(detail::timed("matmul vs triple loop (f32)", [&](CheckLine& line) {
    Rng rng(seed);
    double worst = 0;
    for (std::size_t i = 0; i < shapes; ++i) {
      const std::size_t m = detail::between(rng, 1, 24), k = detail::between(rng, 1, 48), n = detail::between(rng, 1, 24);
      const auto a = rng.normal_tensor<float>({m, k}, 1.0), b = rng.normal_tensor<float>({k, n}, 1.0);
      worst = std::max(worst, detail::scaled_error(kernels::matmul(a, b), oracle::matmul(a, b)));
    }
    line.pass = worst <= tol32;
    line.detail = "max rel err " + detail::fmt(worst);
  }));

  r.push_back(detail::timed("conv2d vs nested loops (f32)", [&](CheckLine& line) {
    Rng rng(seed + 1);
    double worst = 0;
    for (std::size_t i = 0; i < shapes; ++i) {
      const auto mode = static_cast<ConvMode>(i % 3);
      const std::size_t ci = detail::between(rng, 1, 6), h = detail::between(rng, 3, 9), w = detail::between(rng, 3, 9);
      const std::size_t k = mode == ConvMode::pointwise ? 1 : 2 * detail::between(rng, 0, 1) + 1;
      const std::size_t stride = detail::between(rng, 1, 2), pad = mode == ConvMode::pointwise ? 0 : detail::between(rng, 0, 1);
      const std::size_t co = mode == ConvMode::depthwise ? ci : detail::between(rng, 1, 6);
      Tensor<float> kernel;
      if (mode == ConvMode::pointwise) kernel = rng.normal_tensor<float>({co, ci}, 1.0);
      if (mode == ConvMode::depthwise) kernel = rng.normal_tensor<float>({ci, k, k}, 1.0);
      if (mode == ConvMode::dense) kernel = rng.normal_tensor<float>({co, ci, k, k}, 1.0);
      const auto x = rng.normal_tensor<float>({ci, h, w}, 1.0);
      worst = std::max(worst, detail::scaled_error(kernels::conv2d(x, kernel, mode, stride, pad),
                                                   oracle::conv2d(x, kernel, mode, stride, pad)));
    }
    line.pass = worst <= tol32;
    line.detail = "3 modes, max rel err " + detail::fmt(worst);
  }));

  r.push_back(detail::timed("causal conv1d vs loop (f32)", [&](CheckLine& line) {
    Rng rng(seed + 2);
    double worst = 0;
    for (std::size_t i = 0; i < shapes; ++i) {
      const std::size_t len = detail::between(rng, 1, 40), d = detail::between(rng, 1, 8), k = detail::between(rng, 1, 5);
      const auto x = rng.normal_tensor<float>({len, d}, 1.0), w = rng.normal_tensor<float>({d, k}, 1.0);
      worst = std::max(worst, detail::scaled_error(kernels::conv1d_causal(x, w), oracle::conv1d_causal(x, w)));
    }
    line.pass = worst <= tol32;
    line.detail = "max rel err " + detail::fmt(worst);
  }));

  r.push_back(detail::timed("bilinear sampling vs clamp-then-interpolate (f32)", [&](CheckLine& line) {
    Rng rng(seed + 3);
    double worst = 0;
    for (std::size_t i = 0; i < shapes; ++i) {
      const std::size_t h = detail::between(rng, 1, 8), w = detail::between(rng, 1, 8), c = detail::between(rng, 1, 5);
      const std::size_t n = detail::between(rng, 1, 30);
      const auto f = rng.normal_tensor<float>({h, w, c}, 1.0);
      auto pts = Tensor<float>({n, 2});
      for (std::size_t p = 0; p < n; ++p) {
        pts[2 * p] = static_cast<float>(rng.uniform(-3.0, static_cast<double>(h) + 2.0));
        pts[2 * p + 1] = static_cast<float>(rng.uniform(-3.0, static_cast<double>(w) + 2.0));
      }
      worst = std::max(worst, detail::scaled_error(kernels::bilinear_sample(f, pts), oracle::bilinear_sample(f, pts)));
    }
    line.pass = worst <= tol32;
    line.detail = "max rel err " + detail::fmt(worst);
  }));

  r.push_back(scan_oracle_check(shapes, seed + 4));

  r.push_back(detail::timed("softmax rows: sums and shift invariance", [&](CheckLine& line) {
    Rng rng(seed + 5);
    double worst_sum = 0, worst_shift = 0, worst_oracle = 0;
    for (std::size_t i = 0; i < shapes; ++i) {
      const std::size_t n = detail::between(rng, 1, 8), m = detail::between(rng, 1, 16);
      const auto x = rng.normal_tensor<float>({n, m}, 3.0);
      auto shifted = x;
      const float c = static_cast<float>(rng.uniform(-5, 5));
      for (auto& v : shifted.values()) v += c;
      const auto y = kernels::softmax(x, 1), ys = kernels::softmax(shifted, 1);
      for (std::size_t row = 0; row < n; ++row) {
        double s = 0;
        for (std::size_t j = 0; j < m; ++j) s += y[row * m + j];
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
      worst_shift = std::max(worst_shift, static_cast<double>(max_abs_diff(y, ys)));
      worst_oracle = std::max(worst_oracle, static_cast<double>(max_abs_diff(y, oracle::softmax_rows(x))));
    }
    line.pass = worst_sum <= 1e-6 && worst_shift <= 1e-6 && worst_oracle <= 1e-6;
    line.detail = "sum err " + detail::fmt(worst_sum) + ", shift err " + detail::fmt(worst_shift) + ", oracle err " +
                  detail::fmt(worst_oracle);
  }));

  r.push_back(detail::timed("layer norm vs two-pass statistics (f32)", [&](CheckLine& line) {
    Rng rng(seed + 6);
    double worst = 0;
    for (std::size_t i = 0; i < shapes; ++i) {
      const std::size_t n = detail::between(rng, 1, 8), c = detail::between(rng, 1, 32);
      const auto x = rng.normal_tensor<float>({n, c}, 2.0);
      const auto gain = rng.normal_tensor<float>({c}, 1.0), bias = rng.normal_tensor<float>({c}, 1.0);
      Graph<float> g(false);
      const auto y = layer_norm(g.constant(x), g.constant(gain), g.constant(bias)).value();
      worst = std::max(worst, detail::scaled_error(y, oracle::layer_norm(x, gain, bias)));
    }
    line.pass = worst <= tol32;
    line.detail = "max rel err " + detail::fmt(worst);
  }));

  r.push_back(detail::timed("tanh GELU vs erf GELU", [&](CheckLine& line) {
    double worst = 0;
    for (int i = -800; i <= 800; ++i) {
      const double x = i / 100.0;
      worst = std::max(worst, std::abs(kernels::gelu(x) - oracle::gelu_exact(x)));
    }
    line.pass = worst <= 1e-3;
    line.detail = "grid [-8, 8], max abs err " + detail::fmt(worst);
  }));

  r.push_back(detail::timed("single-head attention vs dense oracle (f64)", [&](CheckLine& line) {
    Rng rng(seed + 7);
    double worst = 0;
    for (std::size_t i = 0; i < shapes; ++i) {
      const std::size_t c = detail::between(rng, 1, 8), nq = detail::between(rng, 1, 5), nk = detail::between(rng, 1, 9);
      auto p = AttentionParams<double>::init(c, 1, rng, false);
      for (auto* lin : {&p.q, &p.k, &p.v, &p.o}) lin->b = rng.normal_tensor<double>({c}, 0.5);
      const auto xq = rng.normal_tensor<double>({nq, c}, 1.0), xkv = rng.normal_tensor<double>({nk, c}, 1.0);
      Graph<double> g(false);
      const auto got = attention(g, g.constant(xq), g.constant(xkv), p).value();
      auto proj = [](const Tensor<double>& x, const LinearParams<double>& l) {
        auto y = oracle::matmul(x, l.w);
        for (std::size_t r = 0; r < y.dim(0); ++r)
          for (std::size_t j = 0; j < y.dim(1); ++j) y.at(r, j) += l.b[j];
        return y;
      };
      const auto want = proj(oracle::dense_attention(proj(xq, p.q), proj(xkv, p.k), proj(xkv, p.v)), p.o);
      worst = std::max(worst, detail::scaled_error(got, want));
    }
    line.pass = worst <= 1e-12;
    line.detail = "max rel err " + detail::fmt(worst);
  }));
  return r;
}

// ==================================================================== grads

namespace detail {

inline Tensor<double>& leaf(std::vector<std::unique_ptr<Tensor<double>>>& store, Tensor<double> t) {
  store.push_back(std::make_unique<Tensor<double>>(std::move(t)));
  return *store.back();
}

/// Values bounded away from zero, for kinked primitives.
inline Tensor<double> away_from_zero(Rng& rng, Shape s, double margin = 0.05) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) {
    do v = rng.normal(0, 1); while (std::abs(v) < margin);
  }
  return t;
}

inline void accumulate(GradCheckResult& worst, const GradCheckResult& r) {
  worst.rel_error = std::max(worst.rel_error, r.rel_error);
  worst.max_abs_error = std::max(worst.max_abs_error, r.max_abs_error);
  worst.coords += r.coords;
}

inline CheckLine grad_line(const std::string& name, std::size_t draws, double tol,
                           const std::function<GradCheckResult(Rng&)>& draw, std::uint64_t seed) {
  return timed(name, [&](CheckLine& line) {
    GradCheckResult worst;
    for (std::size_t d = 0; d < draws; ++d) {
      Rng rng(seed * 1000 + d);
      accumulate(worst, draw(rng));
    }
    line.pass = worst.rel_error <= tol;
    line.detail = std::to_string(draws) + " draws, " + std::to_string(worst.coords) + " coords, max rel err " +
                  fmt(worst.rel_error);
  });
}

using Prim = std::function<Var<double>(Graph<double>&, const std::vector<Tensor<double>*>&)>;

struct PrimitiveCase {
  std::string name;
  std::function<std::vector<Tensor<double>>(Rng&)> inputs;
  Prim op;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  using kernels::ConvMode;
  auto n = [](Shape s) { return [s](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(s, 1.0)}; }; };
  auto n2 = [](Shape a, Shape b) {
    return [a, b](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(a, 1.0), r.normal_tensor<double>(b, 1.0)}; };
  };
  auto P = [](Graph<double>& g, const std::vector<Tensor<double>*>& l, std::size_t i) { return g.param(*l[i]); };
  std::vector<PrimitiveCase> cs;
  cs.push_back({"matmul", n2({3, 4}, {4, 5}), [=](auto& g, auto& l) { return matmul(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"matmul_nt", n2({3, 4}, {5, 4}), [=](auto& g, auto& l) { return matmul_nt(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"transpose", n({3, 4}), [=](auto& g, auto& l) { return transpose(P(g, l, 0)); }});
  cs.push_back({"add", n2({3, 4}, {3, 4}), [=](auto& g, auto& l) { return add(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"sub", n2({3, 4}, {3, 4}), [=](auto& g, auto& l) { return sub(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"mul", n2({3, 4}, {3, 4}), [=](auto& g, auto& l) { return mul(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"div", [](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>({3, 4}, 1.0), away_from_zero(r, {3, 4}, 0.5)}; },
                [=](auto& g, auto& l) { return div(P(g, l, 0), P(g, l, 1)); }});
  auto separated = [](Rng& r) {
    auto a = r.normal_tensor<double>({3, 4}, 1.0), b = a;
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] = a[i] + (r.uniform() < 0.5 ? -1 : 1) * r.uniform(0.05, 1.0);
    return std::vector<Tensor<double>>{a, b};
  };
  cs.push_back({"minimum", separated, [=](auto& g, auto& l) { return minimum(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"maximum", separated, [=](auto& g, auto& l) { return maximum(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"exp", n({3, 4}), [=](auto& g, auto& l) { return exp(P(g, l, 0)); }});
  cs.push_back({"log", [](Rng& r) { return std::vector<Tensor<double>>{r.uniform_tensor<double>({3, 4}, 0.2, 3.0)}; },
                [=](auto& g, auto& l) { return log(P(g, l, 0)); }});
  cs.push_back({"square", n({3, 4}), [=](auto& g, auto& l) { return square(P(g, l, 0)); }});
  cs.push_back({"abs", [](Rng& r) { return std::vector<Tensor<double>>{away_from_zero(r, {3, 4})}; },
                [=](auto& g, auto& l) { return abs(P(g, l, 0)); }});
  cs.push_back({"relu", [](Rng& r) { return std::vector<Tensor<double>>{away_from_zero(r, {3, 4})}; },
                [=](auto& g, auto& l) { return relu(P(g, l, 0)); }});
  cs.push_back({"sigmoid", n({3, 4}), [=](auto& g, auto& l) { return sigmoid(P(g, l, 0)); }});
  cs.push_back({"silu", n({3, 4}), [=](auto& g, auto& l) { return silu(P(g, l, 0)); }});
  cs.push_back({"gelu", n({3, 4}), [=](auto& g, auto& l) { return gelu(P(g, l, 0)); }});
  cs.push_back({"softplus", n({3, 4}), [=](auto& g, auto& l) { return softplus(P(g, l, 0)); }});
  cs.push_back({"scale+add_scalar", n({3, 4}), [=](auto& g, auto& l) { return add_scalar(scale(P(g, l, 0), 1.7), -0.3); }});
  cs.push_back({"add_row", n2({3, 4}, {4}), [=](auto& g, auto& l) { return add_row(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"mul_row", n2({3, 4}, {4}), [=](auto& g, auto& l) { return mul_row(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"add_col", n2({3, 4}, {3}), [=](auto& g, auto& l) { return add_col(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"mul_col", n2({3, 4}, {3}), [=](auto& g, auto& l) { return mul_col(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"reshape", n({3, 4}), [=](auto& g, auto& l) { return reshape(P(g, l, 0), {2, 6}); }});
  cs.push_back({"concat_rows", n2({2, 4}, {3, 4}), [=](auto& g, auto& l) { return concat_rows<double>({P(g, l, 0), P(g, l, 1)}); }});
  cs.push_back({"concat_cols", n2({3, 2}, {3, 4}), [=](auto& g, auto& l) { return concat_cols<double>({P(g, l, 0), P(g, l, 1)}); }});
  cs.push_back({"slice_rows", n({5, 4}), [=](auto& g, auto& l) { return slice_rows(P(g, l, 0), 1, 3); }});
  cs.push_back({"slice_cols", n({3, 5}), [=](auto& g, auto& l) { return slice_cols(P(g, l, 0), 2, 2); }});
  cs.push_back({"pick", n({3, 4}), [=](auto& g, auto& l) { return pick(P(g, l, 0), {0, 5, 5, 11}); }});
  cs.push_back({"sum", n({3, 4}), [=](auto& g, auto& l) { return sum(P(g, l, 0)); }});
  cs.push_back({"mean_rows", n({3, 4}), [=](auto& g, auto& l) { return mean_rows(P(g, l, 0)); }});
  cs.push_back({"mean_cols", n({3, 4}), [=](auto& g, auto& l) { return mean_cols(P(g, l, 0)); }});
  cs.push_back({"softmax_rows", n({3, 5}), [=](auto& g, auto& l) { return softmax_rows(P(g, l, 0)); }});
  cs.push_back({"layer_norm", [](Rng& r) {
                  return std::vector<Tensor<double>>{r.normal_tensor<double>({3, 6}, 1.0), r.normal_tensor<double>({6}, 1.0),
                                                     r.normal_tensor<double>({6}, 1.0)};
                },
                [=](auto& g, auto& l) { return layer_norm(P(g, l, 0), P(g, l, 1), P(g, l, 2)); }});
  cs.push_back({"channel_norm_batch", [](Rng& r) {
                  return std::vector<Tensor<double>>{r.normal_tensor<double>({3, 7}, 1.0), r.normal_tensor<double>({3}, 1.0),
                                                     r.normal_tensor<double>({3}, 1.0)};
                },
                [=](auto& g, auto& l) { return channel_norm_batch(P(g, l, 0), P(g, l, 1), P(g, l, 2), 1e-5, static_cast<Tensor<double>*>(nullptr), static_cast<Tensor<double>*>(nullptr)); }});
  cs.push_back({"conv2d pointwise", n2({3, 4, 5}, {2, 3}),
                [=](auto& g, auto& l) { return conv2d(P(g, l, 0), P(g, l, 1), ConvMode::pointwise); }});
  cs.push_back({"conv2d depthwise pad 1", n2({3, 4, 5}, {3, 3, 3}),
                [=](auto& g, auto& l) { return conv2d(P(g, l, 0), P(g, l, 1), ConvMode::depthwise, 1, 1); }});
  cs.push_back({"conv2d dense stride 2", n2({2, 5, 5}, {3, 2, 3, 3}),
                [=](auto& g, auto& l) { return conv2d(P(g, l, 0), P(g, l, 1), ConvMode::dense, 2, 1); }});
  cs.push_back({"add_channel_bias", n2({3, 2, 2}, {3}), [=](auto& g, auto& l) { return add_channel_bias(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"conv1d_causal", n2({6, 3}, {3, 4}), [=](auto& g, auto& l) { return conv1d_causal(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"bilinear_sample", [](Rng& r) {
                  Tensor<double> pts({8, 2});
                  for (std::size_t p = 0; p < 8; ++p)
                    for (std::size_t k = 0; k < 2; ++k) {
                      // interior fractional points, plus a few clamped far outside
                      pts[2 * p + k] = p < 6 ? std::floor(r.uniform(0, 3)) + r.uniform(0.05, 0.95) : r.uniform(4.5, 6.0);
                    }
                  return std::vector<Tensor<double>>{r.normal_tensor<double>({4, 4, 3}, 1.0), pts};
                },
                [=](auto& g, auto& l) { return bilinear_sample(P(g, l, 0), P(g, l, 1)); }});
  cs.push_back({"selective_scan", [](Rng& r) {
                  auto s = random_scan_instance(r, 12, 4, 5);
                  return std::vector<Tensor<double>>{s.x, s.delta, s.a, s.b, s.c, s.d};
                },
                [=](auto& g, auto& l) {
                  auto f = selective_scan(P(g, l, 0), P(g, l, 1), P(g, l, 2), P(g, l, 3), P(g, l, 4), P(g, l, 5),
                                          ScanDirection::forward);
                  auto b = selective_scan(P(g, l, 0), P(g, l, 1), P(g, l, 2), P(g, l, 3), P(g, l, 4), P(g, l, 5),
                                          ScanDirection::backward);
                  return concat_rows<double>({f, b});
                }});
  return cs;
}

// Sizes used by the module-level gradient checks.
inline ModelConfig grad_model_config() {
  ModelConfig c;
  c.backbone.patch_size = 4;
  c.backbone.embed_dim = 8;
  c.backbone.depth = 3;
  c.backbone.heads = 2;
  c.backbone.template_side = 12;  // 3x3 template grid
  c.backbone.search_side = 12;
  c.backbone.mfi_layers = {2};
  c.backbone.cue_count = 1;
  c.backbone.mlp_ratio = 2;
  c.mfi.ratio = 2;
  c.mfi.mamba_layers = 2;
  c.mfi.state_dim = 4;
  c.mfi.conv_width = 3;
  c.cam.experts = 2;
  c.dam.ffn_ratio = 2;
  c.head.depth = 3;
  c.head.width = 4;
  return c;
}

template <typename P>
void jitter_all(P& params, Rng& rng, double sd) {
  params.visit([&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.values()) v += rng.normal(0, sd);
  }, "");
}

/// Distance of every sampling coordinate from the bilinear kinks (integer
/// lines and the clamp borders).
inline double kink_margin(const Tensor<double>& offsets) {
  const std::size_t h = offsets.dim(0), w = offsets.dim(1);
  double m = 1.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double r = static_cast<double>(i) + offsets.at(i, j, 1);
      const double c = static_cast<double>(j) + offsets.at(i, j, 0);
      for (auto [p, hi] : {std::pair{r, static_cast<double>(h - 1)}, std::pair{c, static_cast<double>(w - 1)}}) {
        if (p < 0) m = std::min(m, -p);
        else if (p > hi) m = std::min(m, p - hi);
        else m = std::min(m, std::min(p - std::floor(p), std::ceil(p) - p + (p == std::floor(p) ? 0.0 : 0.0)));
      }
    }
  return m;
}

/// Smallest |pre-activation| over every ReLU of the head towers (batch mode).
inline double head_relu_margin(const HeadParams<double>& p, const Tensor<double>& fused) {
  double m = INFINITY;
  Graph<double> g(false);
  for (const auto& tw : p.towers) {
    auto x = g.constant(fused);
    for (const auto& layer : tw.hidden) {
      auto y = conv2d(x, g.param(layer.kernel), kernels::ConvMode::dense, 1, 1);
      const Shape s = y.shape();
      auto nrm = channel_norm_batch(reshape(y, {s[0], s[1] * s[2]}), g.param(layer.gamma), g.param(layer.beta), 1e-5,
                                    static_cast<Tensor<double>*>(nullptr), static_cast<Tensor<double>*>(nullptr));
      for (double v : nrm.value().values()) m = std::min(m, std::abs(v));
      x = relu(reshape(nrm, s));
    }
  }
  return m;
}

}  // namespace detail

inline Report grad_suite(std::size_t draws = 20, std::uint64_t seed = 3) {
  constexpr double tol = 1e-4;
  Report r;
  const auto cfg = detail::grad_model_config();
  const auto& bc = cfg.backbone;
  const std::size_t c = bc.embed_dim;

  // tensor-core primitives
  {
    const auto t0 = std::chrono::steady_clock::now();
    CheckLine line{"tensor-core primitives", true, "", 0};
    GradCheckResult worst;
    std::string failing;
    std::uint64_t k = 0;
    for (const auto& pc : detail::primitive_cases()) {
      ++k;
      GradCheckResult case_worst;
      for (std::size_t d = 0; d < draws; ++d) {
        Rng rng(seed * 7919 + k * 1000 + d);
        auto values = pc.inputs(rng);
        std::vector<Tensor<double>*> leaves;
        for (auto& v : values) leaves.push_back(&v);
        Graph<double> probe_graph(false);
        const auto out_shape = pc.op(probe_graph, leaves).shape();
        const auto probe = rng.normal_tensor<double>(out_shape, 1.0);
        detail::accumulate(case_worst, gradcheck(leaves, [&](Graph<double>& g) { return probe_loss(g, pc.op(g, leaves), probe); },
                                                 rng, {1e-4, 4}));
      }
      if (case_worst.rel_error > tol) failing += (failing.empty() ? "" : ", ") + pc.name;
      detail::accumulate(worst, case_worst);
    }
    line.pass = failing.empty();
    line.detail = std::to_string(k) + " primitives x " + std::to_string(draws) + " draws, max rel err " +
                  detail::fmt(worst.rel_error) + (failing.empty() ? "" : " (failing: " + failing + ")");
    line.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.push_back(line);
  }

  r.push_back(detail::grad_line("backbone (blocks + MFI hooks)", draws, tol, [&](Rng& rng) {
    auto p = BackboneParams<double>::init(bc, cfg.mfi, rng);
    for (auto& m : p.mfi)
      for (auto& u : m.up) u = rng.normal_tensor<double>(u.shape(), 0.3);
    const std::size_t n = bc.total_tokens();
    Tensor<double> tr = rng.normal_tensor<double>({n, c}, 1.0), tt = rng.normal_tensor<double>({n, c}, 1.0);
    std::vector<Tensor<double>> probes;
    for (std::size_t i = 0; i < 2 * bc.depth; ++i) probes.push_back(rng.normal_tensor<double>({n, c}, 1.0));
    auto leaves = param_leaves(p);
    leaves.push_back(&tr);
    leaves.push_back(&tt);
    return gradcheck(leaves, [&](Graph<double>& g) {
      auto out = forward_backbone(g, g.param(tr), g.param(tt), p, bc);
      std::vector<Var<double>> terms;
      for (std::size_t l = 0; l < bc.depth; ++l) {
        terms.push_back(probe_loss(g, out.rgb[l], probes[2 * l]));
        terms.push_back(probe_loss(g, out.tir[l], probes[2 * l + 1]));
      }
      auto total = terms[0];
      for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
      return total;
    }, rng, {1e-4, 2});
  }, seed + 1));

  r.push_back(detail::grad_line("mfi forward", draws, tol, [&](Rng& rng) {
    auto p = MfiParams<double>::init(c, cfg.mfi, rng);
    for (auto& u : p.up) u = rng.normal_tensor<double>(u.shape(), 0.3);
    detail::jitter_all(p, rng, 0.05);
    const std::size_t n = 6;
    Tensor<double> fr = rng.normal_tensor<double>({n, c}, 1.0), ft = rng.normal_tensor<double>({n, c}, 1.0);
    const auto pr = rng.normal_tensor<double>({n, c}, 1.0), pt = rng.normal_tensor<double>({n, c}, 1.0);
    auto leaves = param_leaves(p);
    leaves.push_back(&fr);
    leaves.push_back(&ft);
    return gradcheck(leaves, [&](Graph<double>& g) {
      auto out = mfi_forward(g, g.param(fr), g.param(ft), p);
      return add(probe_loss(g, out.rgb, pr), probe_loss(g, out.tir, pt));
    }, rng, {1e-4, 3});
  }, seed + 2));

  r.push_back(detail::grad_line("cam route + aggregate", draws, tol, [&](Rng& rng) {
    const std::size_t depth = 4, n = 5, k = 3;
    auto p = CamParams<double>::init(depth, c, k, rng);
    for (auto& w : p.weights) w = rng.normal_tensor<double>(w.shape(), 0.5);
    detail::jitter_all(p, rng, 0.05);
    std::vector<Tensor<double>> feats;
    for (std::size_t l = 0; l < depth; ++l) feats.push_back(rng.normal_tensor<double>({n, c}, 1.0));
    std::vector<std::size_t> experts;
    {
      Graph<double> g(false);
      std::vector<Var<double>> fv;
      for (auto& f : feats) fv.push_back(g.constant(f));
      const auto s = route(g, fv, p.router).value();
      experts = select_experts(std::span<const double>(s.data(), s.numel()), k);
    }
    const auto pa = rng.normal_tensor<double>({n, c}, 1.0), ps = rng.normal_tensor<double>({depth}, 1.0);
    auto leaves = param_leaves(p);
    for (auto& f : feats) leaves.push_back(&f);
    return gradcheck(leaves, [&](Graph<double>& g) {
      std::vector<Var<double>> fv;
      for (auto& f : feats) fv.push_back(g.param(f));
      auto scores = route(g, fv, p.router);
      return add(probe_loss(g, aggregate(g, fv, experts, p), pa), probe_loss(g, scores, ps));
    }, rng, {1e-4, 3});
  }, seed + 3));

  r.push_back(detail::grad_line("dam forward", draws, tol, [&](Rng& rng) {
    DamConfig dc = cfg.dam;
    const std::size_t cue_count = 1 + rng.index(2);
    const TokenLayout layout{cue_count, bc.template_tokens(), bc.search_tokens()};
    for (int attempt = 0;; ++attempt) {
      if (attempt > 500) throw std::runtime_error("dam gradcheck: no kink-free draw");
      auto p = DamParams<double>::init(c, bc.heads, cue_count, dc.ffn_ratio, rng);
      for (auto& per : p.offset_heads)
        for (auto& h : per) {
          h.w = rng.normal_tensor<double>(h.w.shape(), 0.15);
          h.b = rng.normal_tensor<double>(h.b.shape(), 0.15);
        }
      for (auto* lin : {&p.cross_attn.o, &p.intra_attn.o, &p.cue_ffn.fc2}) lin->w = rng.normal_tensor<double>(lin->w.shape(), 0.3);
      Tensor<double> tokens = rng.normal_tensor<double>({layout.total(), c}, 1.0);
      Tensor<double> cue = rng.normal_tensor<double>({cue_count, c}, 1.0);
      const auto m = static_cast<Modality>(rng.index(2));
      {
        Graph<double> g(false);
        auto seg = split_tokens(g.constant(tokens), layout);
        auto s = sample_templates(g, seg.z0, seg.zt, m, p, dc);
        if (std::min(detail::kink_margin(s.offsets[0]), detail::kink_margin(s.offsets[1])) < 1e-2) continue;
      }
      const auto pf = rng.normal_tensor<double>({layout.search_tokens, c}, 1.0);
      const auto pc = rng.normal_tensor<double>({cue_count, c}, 1.0);
      auto leaves = param_leaves(p);
      leaves.push_back(&tokens);
      leaves.push_back(&cue);
      return gradcheck(leaves, [&](Graph<double>& g) {
        auto out = dam_forward(g, g.param(tokens), layout, g.param(cue), m, p, dc);
        return add(probe_loss(g, out.response.features, pf), probe_loss(g, out.cue_next, pc));
      }, rng, {1e-4, 3});
    }
  }, seed + 4));

  r.push_back(detail::grad_line("head fuse + towers (batch statistics)", draws, tol, [&](Rng& rng) {
    const std::size_t n = bc.search_tokens();
    for (int attempt = 0;; ++attempt) {
      if (attempt > 500) throw std::runtime_error("head gradcheck: no kink-free draw");
      auto p = HeadParams<double>::init(c, cfg.head_width(), cfg.head.depth, rng);
      for (auto& tw : p.towers) tw.out_kernel = rng.normal_tensor<double>(tw.out_kernel.shape(), 0.3);
      detail::jitter_all(p, rng, 0.05);
      Tensor<double> hr = rng.normal_tensor<double>({n, c}, 1.0), ht = rng.normal_tensor<double>({n, c}, 1.0);
      {
        Graph<double> g(false);
        if (detail::head_relu_margin(p, fuse(g, g.constant(hr), g.constant(ht), p).value()) < 5e-3) continue;
      }
      const std::size_t side = bc.search_grid();
      const auto p1 = rng.normal_tensor<double>({side, side}, 1.0), p2 = rng.normal_tensor<double>({2, side, side}, 1.0),
                 p3 = rng.normal_tensor<double>({2, side, side}, 1.0);
      std::vector<Tensor<double>*> leaves;
      p.visit([&](const std::string& name, Tensor<double>& t) {
        if (name.find("running_") == std::string::npos) leaves.push_back(&t);
      }, "");
      leaves.push_back(&hr);
      leaves.push_back(&ht);
      return gradcheck(leaves, [&](Graph<double>& g) {
        auto maps = predict_maps(g, fuse(g, g.param(hr), g.param(ht), p), p, NormMode::batch);
        return add(add(probe_loss(g, maps.score_logit, p1), probe_loss(g, maps.offset, p2)), probe_loss(g, maps.size, p3));
      }, rng, {1e-4, 3});
    }
  }, seed + 5));

  r.push_back(detail::grad_line("head training loss (focal + L1 + GIoU)", draws, tol, [&](Rng& rng) {
    const std::size_t side = 4;
    Tensor<double> logit = rng.normal_tensor<double>({side, side}, 1.0);
    Tensor<double> off_raw = rng.normal_tensor<double>({2, side, side}, 1.0), size_raw = rng.normal_tensor<double>({2, side, side}, 1.0);
    const double search = 64;
    const BBox target{rng.uniform(5, 30), rng.uniform(5, 30), rng.uniform(8, 25), rng.uniform(8, 25), 1};
    return gradcheck({&logit, &off_raw, &size_raw}, [&](Graph<double>& g) {
      HeadMaps<double> maps;
      maps.score_logit = g.param(logit);
      maps.score = sigmoid(maps.score_logit);
      maps.offset = sigmoid(g.param(off_raw));
      maps.size = sigmoid(g.param(size_raw));
      return head_loss(g, maps, target, search).total;
    }, rng, {1e-4, 16});
  }, seed + 6));
  return r;
}

// =============================================================== invariants

/// Selection policy properties, one vector at a time; returns the first
/// violation or an empty string.
inline std::string cam_policy_violation(const std::vector<double>& s, std::size_t k) {
  const std::size_t depth = s.size();
  const auto e = select_experts(s, k);
  if (e.size() != k) return "cardinality";
  if (!std::is_sorted(e.begin(), e.end()) || std::adjacent_find(e.begin(), e.end()) != e.end()) return "order";
  if (e.front() != 1 || e.back() != depth) return "forced layers";
  // lower index wins ties: every chosen middle layer beats every unchosen one
  for (std::size_t i = 2; i < depth; ++i) {
    const bool in_i = std::find(e.begin(), e.end(), i) != e.end();
    for (std::size_t j = 2; j < depth; ++j) {
      const bool in_j = std::find(e.begin(), e.end(), j) != e.end();
      if (in_i && !in_j && (s[i - 1] < s[j - 1] || (s[i - 1] == s[j - 1] && i > j))) return "ranking/tie-break";
    }
  }
  return {};
}

/// Brute force: among all (k-2)-subsets of the middle layers, the unique one
/// whose members all precede non-members under (score desc, index asc).
inline std::vector<std::size_t> brute_force_experts(const std::vector<double>& s, std::size_t k) {
  const std::size_t depth = s.size(), mid = depth - 2;
  auto before = [&](std::size_t i, std::size_t j) { return s[i - 1] > s[j - 1] || (s[i - 1] == s[j - 1] && i < j); };
  std::vector<std::size_t> found;
  std::size_t count = 0;
  for (std::uint32_t mask = 0; mask < (1u << mid); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != k - 2) continue;
    bool ok = true;
    for (std::size_t a = 0; a < mid && ok; ++a)
      for (std::size_t b = 0; b < mid && ok; ++b)
        if ((mask >> a & 1u) && !(mask >> b & 1u) && !before(a + 2, b + 2)) ok = false;
    if (!ok) continue;
    ++count;
    found = {1};
    for (std::size_t a = 0; a < mid; ++a)
      if (mask >> a & 1u) found.push_back(a + 2);
    found.push_back(depth);
  }
  if (count != 1) return {};
  return found;
}

inline Report cam_policy_suite(std::size_t vectors = 1000, std::uint64_t seed = 5) {
  Report r;
  r.push_back(detail::timed("cam policy fuzz (forced ends, cardinality, shift/monotone invariance, ties)", [&](CheckLine& line) {
    Rng rng(seed);
    std::size_t cases = 0;
    std::string bad;
    const std::vector<std::function<double(double)>> transforms{
        [](double x) { return x + 3.25; }, [](double x) { return x - 100.0; }, [](double x) { return 2.0 * x + 1.0; },
        [](double x) { return std::exp(x); }, [](double x) { return x * x * x; }, [](double x) { return std::atan(x / 4); }};
    for (std::size_t v = 0; v < vectors && bad.empty(); ++v) {
      const std::size_t depth = detail::between(rng, 3, 16);
      std::vector<double> s(depth);
      // half the vectors are drawn from a tiny alphabet so ties are common
      const bool tie_heavy = v % 2 == 0;
      for (auto& x : s) x = tie_heavy ? static_cast<double>(rng.index(3)) : std::round(rng.normal(0, 1.5) * 64) / 64;
      for (std::size_t k = 3; k <= depth && bad.empty(); ++k) {
        ++cases;
        if (auto why = cam_policy_violation(s, k); !why.empty()) bad = why;
        const auto base = select_experts(s, k);
        for (std::size_t t = 0; t < transforms.size() && bad.empty(); ++t) {
          std::vector<double> st(depth);
          for (std::size_t i = 0; i < depth; ++i) st[i] = transforms[t](s[i]);
          if (select_experts(st, k) != base) bad = "transform " + std::to_string(t) + " changed the selection";
        }
      }
    }
    line.pass = bad.empty();
    line.detail = std::to_string(vectors) + " vectors, " + std::to_string(cases) + " (vector, k) cases" +
                  (bad.empty() ? "" : ", violation: " + bad);
  }));
  r.push_back(detail::timed("cam policy vs brute force, L = 6 exhaustive", [&](CheckLine& line) {
    const std::size_t depth = 6, alphabet = 4;
    std::size_t cases = 0, mismatches = 0;
    std::vector<double> s(depth);
    std::size_t total = 1;
    for (std::size_t i = 0; i < depth; ++i) total *= alphabet;
    for (std::size_t code = 0; code < total; ++code) {
      std::size_t rest = code;
      for (auto& x : s) {
        x = static_cast<double>(rest % alphabet);
        rest /= alphabet;
      }
      for (std::size_t k = 2; k <= depth; ++k) {
        ++cases;
        if (select_experts(s, k) != brute_force_experts(s, k)) ++mismatches;
      }
    }
    line.pass = mismatches == 0;
    line.detail = std::to_string(cases) + " cases over all 4^6 score patterns, " + std::to_string(mismatches) + " mismatches";
  }));
  return r;
}

inline Report dam_sampling_suite(std::size_t fields = 1000, std::uint64_t seed = 9) {
  Report r;
  struct Tally {
    std::size_t zero = 0, shift = 0, hull = 0, clamp = 0, oracle = 0;
  } bad;
  double worst_oracle = 0;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  auto sample = [](const Tensor<double>& grid, const Tensor<double>& off) {
    Graph<double> g(false);
    const auto refs = reference_grid<double>(grid.dim(0), grid.dim(1));
    return deform_sample(g, g.constant(grid), refs, g.constant(off)).value();
  };
  for (std::size_t f = 0; f < fields; ++f) {
    const std::size_t h = detail::between(rng, 1, 8), w = detail::between(rng, 1, 8), c = detail::between(rng, 1, 6);
    const auto grid = rng.normal_tensor<double>({h, w, c}, 1.0);
    const auto flat = grid.reshaped({h * w, c});
    if (!(sample(grid, Tensor<double>({h, w, 2})) == flat)) ++bad.zero;

    // one integer shift for the whole field
    const long dx = static_cast<long>(rng.index(5)) - 2, dy = static_cast<long>(rng.index(5)) - 2;
    Tensor<double> shift({h, w, 2});
    for (std::size_t i = 0; i < h * w; ++i) {
      shift[2 * i] = static_cast<double>(dx);
      shift[2 * i + 1] = static_cast<double>(dy);
    }
    const auto shifted = sample(grid, shift);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const auto si = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(i) + dy, 0, static_cast<long>(h) - 1));
        const auto sj = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(j) + dx, 0, static_cast<long>(w) - 1));
        for (std::size_t k = 0; k < c; ++k)
          if (shifted[(i * w + j) * c + k] != grid.at(si, sj, k)) ++bad.shift;
      }

    // random real offsets, some reaching well past the border
    Tensor<double> off({h, w, 2});
    const double reach = rng.uniform() < 0.3 ? 12.0 : 3.0;
    for (auto& v : off.values()) v = rng.uniform(-reach, reach);
    const auto got = sample(grid, off);
    Tensor<double> pts({h * w, 2});
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        pts[2 * (i * w + j)] = static_cast<double>(i) + off.at(i, j, 1);
        pts[2 * (i * w + j) + 1] = static_cast<double>(j) + off.at(i, j, 0);
      }
    const auto want = oracle::bilinear_sample(grid, pts);
    worst_oracle = std::max(worst_oracle, static_cast<double>(max_abs_diff(got, want)));
    if (max_abs_diff(got, want) > 1e-12) ++bad.oracle;
    for (std::size_t p = 0; p < h * w; ++p) {
      const double rr = std::clamp(pts[2 * p], 0.0, static_cast<double>(h - 1));
      const double cc = std::clamp(pts[2 * p + 1], 0.0, static_cast<double>(w - 1));
      const auto r0 = static_cast<std::size_t>(std::floor(rr)), c0 = static_cast<std::size_t>(std::floor(cc));
      const std::size_t r1 = std::min(r0 + 1, h - 1), c1 = std::min(c0 + 1, w - 1);
      const bool outside_r = pts[2 * p] < 0 || pts[2 * p] > static_cast<double>(h - 1);
      const bool outside_c = pts[2 * p + 1] < 0 || pts[2 * p + 1] > static_cast<double>(w - 1);
      for (std::size_t k = 0; k < c; ++k) {
        const double corners[4] = {grid.at(r0, c0, k), grid.at(r0, c1, k), grid.at(r1, c0, k), grid.at(r1, c1, k)};
        const double lo = *std::min_element(corners, corners + 4), hi = *std::max_element(corners, corners + 4);
        const double v = got[p * c + k];
        const double slack = 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
        if (v < lo - slack || v > hi + slack) ++bad.hull;
        // fully outside on both axes: exactly the nearest corner cell
        if (outside_r && outside_c && v != grid.at(r0, c0, k)) ++bad.clamp;
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string n = std::to_string(fields) + " random fields";
  r.push_back({"dam zero-offset identity (bit-exact)", bad.zero == 0, n + ", " + std::to_string(bad.zero) + " failures", secs});
  r.push_back({"dam integer shift", bad.shift == 0, n + ", " + std::to_string(bad.shift) + " mismatching values", 0});
  r.push_back({"dam convex-hull locality", bad.hull == 0, n + ", " + std::to_string(bad.hull) + " values outside their cell hull", 0});
  r.push_back({"dam clamp to nearest cell", bad.clamp == 0, n + ", " + std::to_string(bad.clamp) + " failures", 0});
  r.push_back({"dam sampling vs per-point oracle", bad.oracle == 0, n + ", max abs err " + detail::fmt(worst_oracle), 0});
  return r;
}

/// Zero up-projections make MFI an exact no-op; zero offset heads and zero
/// attention output projections leave templates and cue untouched.
template <typename T>
Report identity_suite_typed(std::size_t seeds, std::uint64_t seed, const char* tag) {
  Report r;
  const std::string suffix = std::string(" (") + tag + ")";
  r.push_back(detail::timed("backbone: zero MFI up-projection == MFI disabled" + suffix, [&](CheckLine& line) {
    std::size_t mismatches = 0;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(seed + s);
      auto cfg = ModelConfig::toy().backbone;
      const auto mfi_cfg = ModelConfig::toy().mfi;
      const auto p = BackboneParams<T>::init(cfg, mfi_cfg, rng);
      const auto tr = rng.normal_tensor<T>({cfg.total_tokens(), cfg.embed_dim}, 1.0);
      const auto tt = rng.normal_tensor<T>({cfg.total_tokens(), cfg.embed_dim}, 1.0);
      Graph<T> g1(false), g2(false);
      const auto with = forward_backbone(g1, g1.constant(tr), g1.constant(tt), p, cfg);
      auto off = cfg;
      off.mfi_layers.clear();
      const auto without = forward_backbone(g2, g2.constant(tr), g2.constant(tt), p, off);
      for (std::size_t l = 0; l < cfg.depth; ++l)
        if (!(with.rgb[l].value() == without.rgb[l].value()) || !(with.tir[l].value() == without.tir[l].value())) ++mismatches;
    }
    line.pass = mismatches == 0;
    line.detail = std::to_string(seeds) + " seeds, " + std::to_string(mismatches) + " layer mismatches";
  }));
  r.push_back(detail::timed("dam: zero offset heads and zero attention outputs pass through" + suffix, [&](CheckLine& line) {
    std::size_t bad_templates = 0, bad_cue = 0;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(seed + 100 + s);
      const auto mc = ModelConfig::toy();
      const std::size_t c = mc.backbone.embed_dim, nk = 1 + s % 3;
      const auto p = DamParams<T>::init(c, mc.backbone.heads, nk, mc.dam.ffn_ratio, rng);
      const TokenLayout layout{nk, mc.backbone.template_tokens(), mc.backbone.search_tokens()};
      const auto tokens = rng.normal_tensor<T>({layout.total(), c}, 1.0);
      const auto cue = rng.normal_tensor<T>({nk, c}, 1.0);
      for (int m = 0; m < 2; ++m) {
        Graph<T> g(false);
        auto seg = split_tokens(g.constant(tokens), layout);
        auto samples = sample_templates(g, seg.z0, seg.zt, static_cast<Modality>(m), p, mc.dam);
        const auto expect = concat_rows<T>({seg.z0, seg.zt}).value();
        if (!(samples.sampled.value() == expect)) ++bad_templates;
        auto next = propagate_cue(g, g.constant(cue), samples.sampled, p);
        if (!(next.value() == cue)) ++bad_cue;
      }
    }
    line.pass = bad_templates == 0 && bad_cue == 0;
    line.detail = std::to_string(2 * seeds) + " modality passes, " + std::to_string(bad_templates) +
                  " template mismatches, " + std::to_string(bad_cue) + " cue mismatches";
  }));
  return r;
}

inline Report identity_suite(std::size_t seeds = 5, std::uint64_t seed = 21) {
  auto r = identity_suite_typed<float>(seeds, seed, "f32");
  auto d = identity_suite_typed<double>(seeds, seed, "f64");
  r.insert(r.end(), d.begin(), d.end());
  return r;
}

/// Remaining structural properties of the modules.
inline Report property_suite(std::uint64_t seed = 33) {
  Report r;
  r.push_back(detail::timed("mfi: backward scan == reverse(forward(reverse(x)))", [&](CheckLine& line) {
    Rng rng(seed);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
      const auto s = random_scan_instance(rng);
      auto rev = [](const Tensor<double>& t) {
        Tensor<double> o(t.shape());
        const std::size_t len = t.dim(0), w = t.numel() / len;
        for (std::size_t a = 0; a < len; ++a)
          for (std::size_t j = 0; j < w; ++j) o[a * w + j] = t[(len - 1 - a) * w + j];
        return o;
      };
      const auto bwd = selective_scan_values(s.x, s.delta, s.a, s.b, s.c, s.d, ScanDirection::backward);
      const auto fwd = rev(selective_scan_values(rev(s.x), rev(s.delta), s.a, rev(s.b), rev(s.c), s.d, ScanDirection::forward));
      worst = std::max(worst, static_cast<double>(max_abs_diff(bwd, fwd)));
    }
    line.pass = worst == 0;
    line.detail = "100 instances, max abs diff " + detail::fmt(worst);
  }));
  r.push_back(detail::timed("mfi: cost model is linear in tokens and below dense cross-attention (paper profile)", [&](CheckLine& line) {
    const auto mc = ModelConfig::paper();
    const std::size_t c = mc.backbone.embed_dim, n = mc.backbone.total_tokens();
    const double f1 = mfi_flops(n, c, mc.mfi), f2 = mfi_flops(2 * n, c, mc.mfi), f3 = mfi_flops(3 * n, c, mc.mfi);
    const double attn = dense_cross_attention_flops(n, c);
    line.pass = (f2 - f1) == (f3 - f2) && f1 < attn;
    line.detail = "N=" + std::to_string(n) + ", C=" + std::to_string(c) + ": mfi " + detail::fmt(f1) + " vs dense " + detail::fmt(attn);
  }));
  r.push_back(detail::timed("backbone: streams independent when MFI is disabled", [&](CheckLine& line) {
    Rng rng(seed + 1);
    auto cfg = ModelConfig::toy().backbone;
    cfg.mfi_layers.clear();
    const auto p = BackboneParams<float>::init(cfg, ModelConfig::toy().mfi, rng);
    const auto tr = rng.normal_tensor<float>({cfg.total_tokens(), cfg.embed_dim}, 1.0);
    auto tt = rng.normal_tensor<float>({cfg.total_tokens(), cfg.embed_dim}, 1.0);
    Graph<float> g1(false), g2(false);
    const auto a = forward_backbone(g1, g1.constant(tr), g1.constant(tt), p, cfg);
    for (auto& v : tt.values()) v += 0.5f;
    const auto b = forward_backbone(g2, g2.constant(tr), g2.constant(tt), p, cfg);
    bool same = true;
    for (std::size_t l = 0; l < cfg.depth; ++l) same = same && a.rgb[l].value() == b.rgb[l].value();
    line.pass = same;
    line.detail = same ? "RGB features bit-unchanged under TIR perturbation" : "RGB features moved";
  }));
  r.push_back(detail::timed("cam: aggregation is linear in the features", [&](CheckLine& line) {
    Rng rng(seed + 2);
    double worst = 0;
    for (int t = 0; t < 20; ++t) {
      const std::size_t depth = 5, c = 6, n = 4;
      const auto p = CamParams<double>::init(depth, c, 3, rng);
      std::vector<Tensor<double>> f, h;
      for (std::size_t l = 0; l < depth; ++l) {
        f.push_back(rng.normal_tensor<double>({n, c}, 1.0));
        h.push_back(rng.normal_tensor<double>({n, c}, 1.0));
      }
      const double al = rng.normal(), be = rng.normal();
      const std::vector<std::size_t> e{1, 3, 5};
      Graph<double> g(false);
      std::vector<Var<double>> fv, hv, mix;
      for (std::size_t l = 0; l < depth; ++l) {
        fv.push_back(g.constant(f[l]));
        hv.push_back(g.constant(h[l]));
        mix.push_back(add(scale(fv.back(), al), scale(hv.back(), be)));
      }
      const auto lhs = aggregate(g, mix, e, p).value();
      const auto rhs = add(scale(aggregate(g, fv, e, p), al), scale(aggregate(g, hv, e, p), be)).value();
      worst = std::max(worst, detail::scaled_error(lhs, rhs));
    }
    line.pass = worst <= 1e-12;
    line.detail = "20 draws, max rel err " + detail::fmt(worst);
  }));
  r.push_back(detail::timed("dam: gate scales by a and response by a^2 for fixed refined cue", [&](CheckLine& line) {
    Rng rng(seed + 3);
    double worst = 0;
    for (int t = 0; t < 20; ++t) {
      const std::size_t n = 9, c = 8, nk = 1 + rng.index(3);
      const auto f = rng.normal_tensor<double>({n, c}, 1.0), cue = rng.normal_tensor<double>({nk, c}, 1.0);
      const double a = rng.uniform(0.2, 3.0);
      auto fa = f;
      for (auto& v : fa.values()) v *= a;
      Graph<double> g(false);
      const auto r1 = respond(g.constant(f), g.constant(cue)), r2 = respond(g.constant(fa), g.constant(cue));
      worst = std::max(worst, detail::scaled_error(r2.gate.value(), scale(r1.gate, a).value()));
      worst = std::max(worst, detail::scaled_error(r2.features.value(), scale(r1.features, a * a).value()));
    }
    line.pass = worst <= 1e-12;
    line.detail = "20 draws, max rel err " + detail::fmt(worst);
  }));
  r.push_back(detail::timed("dam: cue stays finite and grows boundedly over 1000 propagation steps", [&](CheckLine& line) {
    Rng rng(seed + 4);
    const std::size_t c = 16;
    auto p = DamParams<double>::init(c, 2, 1, 4, rng);
    // spectral-norm clip of the output projection keeps each step a bounded increment
    p.cross_attn.o.w = rng.normal_tensor<double>({c, c}, 0.5 / std::sqrt(static_cast<double>(c)));
    auto cue = rng.normal_tensor<double>({1, c}, 1.0);
    double worst_ratio = 0;
    bool finite = true;
    for (int t = 0; t < 1000 && finite; ++t) {
      const auto keys = rng.normal_tensor<double>({18, c}, 1.0);
      Graph<double> g(false);
      const auto next = propagate_cue(g, g.constant(cue), g.constant(keys), p).value();
      double n0 = 0, n1 = 0;
      for (std::size_t i = 0; i < c; ++i) {
        n0 += cue[i] * cue[i];
        n1 += next[i] * next[i];
      }
      worst_ratio = std::max(worst_ratio, std::sqrt(n1) / std::max(std::sqrt(n0), 1.0));
      finite = next.all_finite();
      cue = next;
    }
    line.pass = finite && worst_ratio < 10.0;
    line.detail = std::string(finite ? "finite" : "non-finite") + ", max per-step norm ratio " + detail::fmt(worst_ratio);
  }));
  r.push_back(detail::timed("head: decoded boxes stay inside the search region and follow transposition", [&](CheckLine& line) {
    Rng rng(seed + 5);
    std::size_t bad = 0;
    for (int t = 0; t < 1000; ++t) {
      const std::size_t hs = detail::between(rng, 1, 8);
      const double side = rng.uniform(16, 256);
      const auto score = rng.normal_tensor<double>({hs, hs}, 1.0);
      const auto off = rng.uniform_tensor<double>({2, hs, hs}, 0, 1), size = rng.uniform_tensor<double>({2, hs, hs}, 0, 1);
      const auto b = decode(score, off, size, side);
      if (!(b.x >= 0 && b.y >= 0 && b.w > 0 && b.h > 0 && b.x + b.w <= side + 1e-9 && b.y + b.h <= side + 1e-9)) ++bad;
      Tensor<double> st({hs, hs}), ot({2, hs, hs}), zt({2, hs, hs});
      for (std::size_t i = 0; i < hs; ++i)
        for (std::size_t j = 0; j < hs; ++j) {
          st.at(j, i) = score.at(i, j);
          for (std::size_t k = 0; k < 2; ++k) {
            ot.at(1 - k, j, i) = off.at(k, i, j);
            zt.at(1 - k, j, i) = size.at(k, i, j);
          }
        }
      const auto bt = decode(st, ot, zt, side);
      // unique maxima only; ties resolve by raster order, which transposition changes
      std::vector<double> sv(score.values().begin(), score.values().end());
      std::sort(sv.begin(), sv.end());
      if (sv.size() > 1 && sv[sv.size() - 1] == sv[sv.size() - 2]) continue;
      if (std::abs(bt.x - b.y) > 1e-9 || std::abs(bt.y - b.x) > 1e-9 || std::abs(bt.w - b.h) > 1e-9 || std::abs(bt.h - b.w) > 1e-9) ++bad;
    }
    line.pass = bad == 0;
    line.detail = "1000 random map sets, " + std::to_string(bad) + " violations";
  }));
  return r;
}

inline Report invariant_suite() {
  Report r = identity_suite();
  for (auto* part : {+[] { return cam_policy_suite(); }, +[] { return dam_sampling_suite(); }, +[] { return property_suite(); }}) {
    auto more = part();
    r.insert(r.end(), more.begin(), more.end());
  }
  return r;
}

}  // namespace cadtrack::check
