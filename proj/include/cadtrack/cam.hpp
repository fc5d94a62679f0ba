#pragma once

// Contextual aggregation: a router scores every backbone layer per
// modality, a sparse policy picks the expert layers, and the picked layers
// are projected and summed with per-channel weights.

#include <numeric>
#include <optional>
#include <span>

#include "cadtrack/backbone.hpp"

namespace cadtrack {

/// Average-pool -> MLP (GELU) -> FC producing one logit per layer.
/// Shared by both modalities.
template <typename T>
struct RouterParams {
  using value_type = T;
  LinearParams<T> mlp;  // [L*C, C]
  LinearParams<T> fc;   // [C, L]

  static RouterParams init(std::size_t depth, std::size_t dim, Rng& rng) {
    return RouterParams{LinearParams<T>::init(depth * dim, dim, rng), LinearParams<T>::init(dim, depth, rng)};
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    mlp.visit(fn, join(prefix, "mlp"));
    fc.visit(fn, join(prefix, "fc"));
  }
};

template <typename T>
struct CamParams {
  using value_type = T;
  RouterParams<T> router;
  std::vector<Tensor<T>> experts;  // W^l, [C, C]
  std::vector<Tensor<T>> weights;  // w^l, [C]

  static CamParams init(std::size_t depth, std::size_t dim, std::size_t k, Rng& rng) {
    CamParams p;
    p.router = RouterParams<T>::init(depth, dim, rng);
    for (std::size_t l = 0; l < depth; ++l) {
      auto w = rng.normal_tensor<T>({dim, dim}, 0.01);
      for (std::size_t i = 0; i < dim; ++i) w[i * dim + i] += T(1);
      p.experts.push_back(std::move(w));
      p.weights.push_back(Tensor<T>({dim}, T(1) / static_cast<T>(std::max<std::size_t>(k, 1))));
    }
    return p;
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    router.visit(fn, join(prefix, "router"));
    for (std::size_t l = 0; l < experts.size(); ++l) {
      fn(join(prefix, "expert" + std::to_string(l + 1)), experts[l]);
      fn(join(prefix, "weight" + std::to_string(l + 1)), weights[l]);
    }
  }
};

/// Router logits s_m[L] for one modality's per-layer features.
template <typename T>
Var<T> route(Graph<T>& g, const std::vector<Var<T>>& features, const RouterParams<T>& p) {
  const std::size_t depth = p.fc.w.dim(1);
  if (features.size() != depth) {
    throw DimensionError("route: expected " + std::to_string(depth) + " layers, got " + std::to_string(features.size()));
  }
  std::vector<Var<T>> pooled;
  for (const auto& f : features) pooled.push_back(reshape(mean_rows(f), {1, f.dim(1)}));
  auto hidden = gelu(linear(g, concat_cols(pooled), p.mlp));
  return reshape(linear(g, hidden, p.fc), {depth});
}

/// Expert policy: layer 1 and layer L are always active; the remaining k-2
/// slots go to the highest-scoring middle layers, ties to the lower index.
/// Returns 1-based layer indices in ascending order.
template <typename S>
std::vector<std::size_t> select_experts(std::span<const S> scores, std::size_t k) {
  const std::size_t depth = scores.size();
  if (k < 2 || k > depth) {
    throw std::out_of_range("select_experts: k=" + std::to_string(k) + " outside [2, " + std::to_string(depth) + "]");
  }
  std::vector<std::size_t> middle;
  for (std::size_t l = 2; l < depth; ++l) middle.push_back(l);
  std::stable_sort(middle.begin(), middle.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a - 1] > scores[b - 1]; });
  std::vector<std::size_t> chosen{1, depth};
  chosen.insert(chosen.end(), middle.begin(), middle.begin() + static_cast<long>(k - 2));
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

template <typename S>
std::vector<std::size_t> select_experts(const std::vector<S>& scores, std::size_t k) {
  return select_experts(std::span<const S>(scores), k);
}

/// Static baselines: every second layer starting at layer 1.
inline std::vector<std::size_t> fixed_interval_experts(std::size_t depth) {
  std::vector<std::size_t> e;
  for (std::size_t l = 1; l <= depth; l += 2) e.push_back(l);
  return e;
}

/// F = sum_{l in E} w^l .* (F^l W^l)
template <typename T>
Var<T> aggregate(Graph<T>& g, const std::vector<Var<T>>& features, const std::vector<std::size_t>& experts,
                 const CamParams<T>& p) {
  if (experts.empty()) throw std::invalid_argument("aggregate: empty expert set");
  std::optional<Var<T>> acc;
  for (auto l : experts) {
    if (l < 1 || l > features.size() || l > p.experts.size()) {
      throw std::out_of_range("aggregate: expert layer " + std::to_string(l) + " out of range");
    }
    auto term = mul_row(matmul(features[l - 1], g.param(p.experts[l - 1])), g.param(p.weights[l - 1]));
    acc = acc ? add(*acc, term) : term;
  }
  return *acc;
}

template <typename T>
std::vector<std::size_t> experts_for(const CamConfig& cfg, std::span<const T> scores) {
  switch (cfg.strategy) {
    case ExpertStrategy::top_k: return select_experts(scores, cfg.experts);
    case ExpertStrategy::fixed_interval: return fixed_interval_experts(scores.size());
    case ExpertStrategy::manual: return cfg.manual_layers;
  }
  return {};
}

}  // namespace cadtrack
