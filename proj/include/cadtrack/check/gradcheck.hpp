#pragma once

// Central finite differences against reverse-mode gradients, in double.

#include <functional>

#include "cadtrack/ops.hpp"
#include "cadtrack/rng.hpp"

namespace cadtrack {

struct GradCheckResult {
  double rel_error = 0;     // ||analytic - numeric|| / max(||analytic||, ||numeric||, tiny)
  double max_abs_error = 0;
  std::size_t coords = 0;
};

/// The loss builds a scalar from `leaves` through Graph::param so that the
/// tape can report their gradients. Up to `per_leaf` random coordinates are
/// probed in each leaf.
struct GradCheckOptions {
  double step = 1e-4;
  std::size_t per_leaf = 3;
};

using LossBuilder = std::function<Var<double>(Graph<double>&)>;

inline GradCheckResult gradcheck(const std::vector<Tensor<double>*>& leaves, const LossBuilder& loss, Rng& rng,
                                 const GradCheckOptions& opt = {}) {
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    auto l = loss(g);
    g.backward(l);
    for (auto* t : leaves) analytic.push_back(g.param_grad(*t));
  }
  auto eval = [&] {
    Graph<double> g(false);
    return loss(g).value().item();
  };
  double diff2 = 0, a2 = 0, n2 = 0;
  GradCheckResult res;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& t = *leaves[li];
    const std::size_t probes = std::min(opt.per_leaf, t.numel());
    for (std::size_t p = 0; p < probes; ++p) {
      const std::size_t i = probes == t.numel() ? p : rng.index(t.numel());
      const double orig = t[i];
      t[i] = orig + opt.step;
      const double up = eval();
      t[i] = orig - opt.step;
      const double down = eval();
      t[i] = orig;
      const double numeric = (up - down) / (2 * opt.step);
      const double a = analytic[li][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      res.max_abs_error = std::max(res.max_abs_error, std::abs(a - numeric));
      ++res.coords;
    }
  }
  res.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return res;
}

/// Collects every tensor of a parameter bundle as a leaf list.
template <typename P>
std::vector<Tensor<double>*> param_leaves(P& params) {
  std::vector<Tensor<double>*> out;
  params.visit([&](const std::string&, Tensor<double>& t) { out.push_back(&t); }, "");
  return out;
}

/// sum(x .* probe): a generic scalar read-out with a fixed random probe.
inline Var<double> probe_loss(Graph<double>& g, Var<double> x, const Tensor<double>& probe) {
  return sum(mul(x, g.constant(probe.reshaped(x.shape()))));
}

}  // namespace cadtrack
