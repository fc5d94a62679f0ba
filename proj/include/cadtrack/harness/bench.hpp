#pragma once

// Wall-time scaling of the interaction kernels against token count, with a
// least-squares power-law fit on log-log axes.

#include <algorithm>
#include <chrono>
#include <functional>
#include <ostream>

#include "cadtrack/mfi.hpp"

namespace cadtrack {

enum class BenchKernel { mfi, dense_attention, planted_linear, planted_quadratic };

inline BenchKernel parse_bench_kernel(const std::string& s) {
  if (s == "mfi") return BenchKernel::mfi;
  if (s == "attn" || s == "dense_attention") return BenchKernel::dense_attention;
  if (s == "linear") return BenchKernel::planted_linear;
  if (s == "quadratic") return BenchKernel::planted_quadratic;
  throw std::invalid_argument("unknown bench kernel '" + s + "' (mfi, attn, linear, quadratic)");
}

inline const char* bench_kernel_name(BenchKernel k) {
  switch (k) {
    case BenchKernel::mfi: return "mfi";
    case BenchKernel::dense_attention: return "attn";
    case BenchKernel::planted_linear: return "linear";
    case BenchKernel::planted_quadratic: return "quadratic";
  }
  return "?";
}

/// Slope of the least-squares line through (log x, log y).
inline double fit_power_law(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_power_law: need >= 2 paired points");
  double mx = 0, my = 0;
  const auto n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= 0 || y[i] <= 0) throw std::invalid_argument("fit_power_law: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

/// Bidirectional dense cross-attention between two [N, C] token sets: each
/// modality queries the other through full-width Q/K/V/O maps and adds the
/// result residually. Score rows are produced one query at a time so memory
/// stays O(N C).
struct CrossAttentionWeights {
  std::array<Tensor<float>, 2> q, k, v, o;  // [C, C], per querying modality

  static CrossAttentionWeights init(std::size_t dim, Rng& rng) {
    CrossAttentionWeights w;
    const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int m = 0; m < 2; ++m) {
      w.q[m] = rng.normal_tensor<float>({dim, dim}, sd);
      w.k[m] = rng.normal_tensor<float>({dim, dim}, sd);
      w.v[m] = rng.normal_tensor<float>({dim, dim}, sd);
      w.o[m] = rng.normal_tensor<float>({dim, dim}, sd);
    }
    return w;
  }
};

inline std::pair<Tensor<float>, Tensor<float>> dense_cross_attention(const Tensor<float>& f_rgb,
                                                                     const Tensor<float>& f_tir,
                                                                     const CrossAttentionWeights& w) {
  const std::size_t n = f_rgb.dim(0), c = f_rgb.dim(1);
  const float inv = 1.0f / std::sqrt(static_cast<float>(c));
  std::array<const Tensor<float>*, 2> feats{&f_rgb, &f_tir};
  std::array<Tensor<float>, 2> outs{f_rgb, f_tir};
  std::vector<float> scores(n), acc(c);
  for (int m = 0; m < 2; ++m) {
    const auto& self = *feats[m];
    const auto& other = *feats[1 - m];
    const auto q = kernels::matmul(self, w.q[m]);
    const auto kt = kernels::transpose(kernels::matmul(other, w.k[m]));  // [C, N]
    const auto v = kernels::matmul(other, w.v[m]);
    Tensor<float> ctx({n, c});
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(scores.begin(), scores.end(), 0.0f);
      for (std::size_t d = 0; d < c; ++d) {
        const float qd = q[i * c + d] * inv;
        const float* kr = kt.data() + d * n;
        for (std::size_t j = 0; j < n; ++j) scores[j] += qd * kr[j];
      }
      const float mx = *std::max_element(scores.begin(), scores.end());
      float z = 0;
      for (auto& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      std::fill(acc.begin(), acc.end(), 0.0f);
      for (std::size_t j = 0; j < n; ++j) {
        const float p = scores[j] / z;
        const float* vr = v.data() + j * c;
        for (std::size_t d = 0; d < c; ++d) acc[d] += p * vr[d];
      }
      std::copy(acc.begin(), acc.end(), ctx.data() + i * c);
    }
    const auto proj = kernels::matmul(ctx, w.o[m]);
    for (std::size_t i = 0; i < n * c; ++i) outs[m][i] += proj[i];
  }
  return {std::move(outs[0]), std::move(outs[1])};
}

struct BenchPoint {
  std::size_t tokens = 0;
  double median_seconds = 0;
  std::vector<double> samples;
};

struct BenchResult {
  BenchKernel kernel = BenchKernel::mfi;
  std::size_t embed_dim = 0;
  std::vector<BenchPoint> points;
  double exponent = 0;
};

struct BenchOptions {
  std::size_t embed_dim = 64;
  MfiConfig mfi{8, 2, 16, 4};  // r = 8, 2 blocks, D_s = 16
  std::size_t repeats = 3;
  std::uint64_t seed = 11;
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline volatile double bench_sink = 0;

template <typename F>
double time_once(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Median wall time per token count, single-threaded, plus the fitted exponent.
inline BenchResult bench_scaling(BenchKernel kernel, const std::vector<std::size_t>& token_counts,
                                 const BenchOptions& opt = {}) {
  if (token_counts.size() < 4) throw std::invalid_argument("bench_scaling: need at least 4 token counts");
  if (!std::is_sorted(token_counts.begin(), token_counts.end()) ||
      std::adjacent_find(token_counts.begin(), token_counts.end()) != token_counts.end()) {
    throw std::invalid_argument("bench_scaling: token counts must be strictly ascending");
  }
  if (opt.repeats == 0) throw std::invalid_argument("bench_scaling: repeats must be positive");
  Rng rng(opt.seed);
  const std::size_t c = opt.embed_dim;
  const auto mfi_params = MfiParams<float>::init(c, opt.mfi, rng);
  const auto attn = CrossAttentionWeights::init(c, rng);

  BenchResult res;
  res.kernel = kernel;
  res.embed_dim = c;
  for (std::size_t n : token_counts) {
    const auto a = rng.normal_tensor<float>({n, c}, 1.0), b = rng.normal_tensor<float>({n, c}, 1.0);
    std::function<void()> run;
    switch (kernel) {
      case BenchKernel::mfi:
        run = [&] {
          Graph<float> g(false);
          auto out = mfi_forward(g, g.constant(a), g.constant(b), mfi_params);
          detail::bench_sink = out.rgb.value()[0];
        };
        break;
      case BenchKernel::dense_attention:
        run = [&] { detail::bench_sink = dense_cross_attention(a, b, attn).first[0]; };
        break;
      case BenchKernel::planted_linear:
        run = [&] {
          double s = 0;
          for (std::size_t rep = 0; rep < 64; ++rep)
            for (std::size_t i = 0; i < n * c; ++i) s += a[i] * static_cast<float>(rep);
          detail::bench_sink = s;
        };
        break;
      case BenchKernel::planted_quadratic:
        run = [&] {
          double s = 0;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) s += a[i * c] * b[j * c];
          detail::bench_sink = s;
        };
        break;
    }
    BenchPoint pt;
    pt.tokens = n;
    for (std::size_t r = 0; r < opt.repeats; ++r) pt.samples.push_back(detail::time_once(run));
    pt.median_seconds = detail::median(pt.samples);
    res.points.push_back(std::move(pt));
  }
  std::vector<double> xs, ys;
  for (const auto& p : res.points) {
    xs.push_back(static_cast<double>(p.tokens));
    ys.push_back(std::max(p.median_seconds, 1e-9));
  }
  res.exponent = fit_power_law(xs, ys);
  return res;
}

/// Exponent of the analytic MFI cost over the same token counts.
inline double mfi_flops_exponent(const std::vector<std::size_t>& token_counts, std::size_t embed_dim,
                                 const MfiConfig& cfg) {
  std::vector<double> xs, ys;
  for (auto n : token_counts) {
    xs.push_back(static_cast<double>(n));
    ys.push_back(mfi_flops(n, embed_dim, cfg));
  }
  return fit_power_law(xs, ys);
}

inline void write_bench_csv(std::ostream& out, const BenchResult& r) {
  out << "kernel,tokens,embed_dim,median_seconds,samples\n";
  for (const auto& p : r.points) {
    out << bench_kernel_name(r.kernel) << "," << p.tokens << "," << r.embed_dim << "," << p.median_seconds << ",";
    for (std::size_t i = 0; i < p.samples.size(); ++i) out << (i ? ";" : "") << p.samples[i];
    out << "\n";
  }
}

}  // namespace cadtrack
