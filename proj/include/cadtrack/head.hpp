#pragma once

// Prediction head: fuse the two modality responses into a feature grid, run
// three conv towers (score, sub-cell offset, normalized size), and decode the
// peak into a box. Also hosts the training losses for this head family.

#include <array>

#include "cadtrack/dam.hpp"

namespace cadtrack {

enum class NormMode { batch, running };

template <typename T>
struct ConvBnLayer {
  using value_type = T;
  Tensor<T> kernel;                     // [out, in, 3, 3]
  Tensor<T> gamma, beta;                // [out]
  Tensor<T> running_mean, running_var;  // [out], not trained

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    fn(join(prefix, "kernel"), kernel);
    fn(join(prefix, "gamma"), gamma);
    fn(join(prefix, "beta"), beta);
    fn(join(prefix, "running_mean"), running_mean);
    fn(join(prefix, "running_var"), running_var);
  }
};

template <typename T>
struct TowerParams {
  using value_type = T;
  std::vector<ConvBnLayer<T>> hidden;
  Tensor<T> out_kernel, out_bias;  // [k, width, 3, 3], [k]

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i].visit(fn, join(prefix, "layer" + std::to_string(i)));
    fn(join(prefix, "out_kernel"), out_kernel);
    fn(join(prefix, "out_bias"), out_bias);
  }
};

enum Branch : std::size_t { score_branch = 0, offset_branch = 1, size_branch = 2 };
inline constexpr std::array<std::size_t, 3> branch_channels{1, 2, 2};

template <typename T>
struct HeadParams {
  using value_type = T;
  Tensor<T> fuse_kernel, fuse_bias;  // [C, 2C], [C]
  std::array<TowerParams<T>, 3> towers;

  static HeadParams init(std::size_t dim, std::size_t width, std::size_t depth, Rng& rng) {
    HeadParams p;
    p.fuse_kernel = rng.normal_tensor<T>({dim, 2 * dim}, 1.0 / std::sqrt(2.0 * static_cast<double>(dim)));
    p.fuse_bias = Tensor<T>({dim});
    for (std::size_t b = 0; b < 3; ++b) {
      auto& tw = p.towers[b];
      std::size_t in = dim;
      for (std::size_t l = 0; l + 1 < depth; ++l) {
        ConvBnLayer<T> layer;
        layer.kernel = rng.normal_tensor<T>({width, in, 3, 3}, std::sqrt(2.0 / (9.0 * static_cast<double>(in))));
        layer.gamma = Tensor<T>::ones({width});
        layer.beta = Tensor<T>({width});
        layer.running_mean = Tensor<T>({width});
        layer.running_var = Tensor<T>::ones({width});
        tw.hidden.push_back(std::move(layer));
        in = width;
      }
      tw.out_kernel = rng.normal_tensor<T>({branch_channels[b], in, 3, 3}, 0.01);
      // Score logits start low so the focal loss is not dominated by negatives.
      tw.out_bias = Tensor<T>({branch_channels[b]}, b == score_branch ? T(-2.19) : T(0));
    }
    return p;
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    fn(join(prefix, "fuse_kernel"), fuse_kernel);
    fn(join(prefix, "fuse_bias"), fuse_bias);
    const char* names[3] = {"score", "offset", "size"};
    for (std::size_t b = 0; b < 3; ++b) towers[b].visit(fn, join(prefix, names[b]));
  }
};

/// [N_x, C] x 2 -> [C, H_s, W_s]
template <typename T>
Var<T> fuse(Graph<T>& g, Var<T> h_rgb, Var<T> h_tir, const HeadParams<T>& p) {
  if (h_rgb.shape() != h_tir.shape() || h_rgb.value().rank() != 2) throw dim_error("fuse", h_rgb.shape(), h_tir.shape());
  const std::size_t n = h_rgb.dim(0), c = h_rgb.dim(1);
  const std::size_t side = square_side(n, "fuse");
  auto chw = reshape(transpose(concat_cols<T>({h_rgb, h_tir})), {2 * c, side, side});
  return add_channel_bias(conv2d(chw, g.param(p.fuse_kernel), kernels::ConvMode::pointwise), g.param(p.fuse_bias));
}

/// Per-layer batch statistics collected in NormMode::batch.
template <typename T>
struct BatchStats {
  std::vector<std::pair<Tensor<T>, Tensor<T>>> layers;  // (mean, var) in tower order
};

template <typename T>
Var<T> conv_bn_relu(Graph<T>& g, Var<T> x, const ConvBnLayer<T>& layer, NormMode mode, BatchStats<T>* stats) {
  constexpr T eps = T(1e-5);
  auto y = conv2d(x, g.param(layer.kernel), kernels::ConvMode::dense, 1, 1);
  const Shape s = y.shape();
  auto flat = reshape(y, {s[0], s[1] * s[2]});
  Var<T> normed;
  if (mode == NormMode::batch) {
    Tensor<T> mu, var;
    normed = channel_norm_batch(flat, g.param(layer.gamma), g.param(layer.beta), eps, &mu, &var);
    if (stats) stats->layers.emplace_back(std::move(mu), std::move(var));
  } else {
    Tensor<T> neg_mean = layer.running_mean, rstd = layer.running_var;
    for (auto& v : neg_mean.values()) v = -v;
    for (auto& v : rstd.values()) v = T(1) / std::sqrt(v + eps);
    auto centered = add_col(flat, g.constant(neg_mean));
    auto scaled = mul_col(centered, mul(g.param(layer.gamma), g.constant(rstd)));
    normed = add_col(scaled, g.param(layer.beta));
  }
  return relu(reshape(normed, s));
}

template <typename T>
struct HeadMaps {
  Var<T> score_logit;  // [H_s, W_s]
  Var<T> score;        // sigmoid, [H_s, W_s]
  Var<T> offset;       // [2, H_s, W_s], (x, y) sub-cell
  Var<T> size;         // [2, H_s, W_s], (w, h) fraction of search side
};

template <typename T>
HeadMaps<T> predict_maps(Graph<T>& g, Var<T> fused, const HeadParams<T>& p, NormMode mode = NormMode::running,
                         BatchStats<T>* stats = nullptr) {
  if (fused.value().rank() != 3) throw dim_error("predict_maps", fused.shape());
  const std::size_t h = fused.dim(1), w = fused.dim(2);
  std::array<Var<T>, 3> raw;
  for (std::size_t b = 0; b < 3; ++b) {
    auto x = fused;
    for (const auto& layer : p.towers[b].hidden) x = conv_bn_relu(g, x, layer, mode, stats);
    raw[b] = add_channel_bias(conv2d(x, g.param(p.towers[b].out_kernel), kernels::ConvMode::dense, 1, 1),
                              g.param(p.towers[b].out_bias));
  }
  HeadMaps<T> out;
  out.score_logit = reshape(raw[score_branch], {h, w});
  out.score = sigmoid(out.score_logit);
  out.offset = sigmoid(raw[offset_branch]);
  out.size = sigmoid(raw[size_branch]);
  return out;
}

/// Exponential moving update of the running statistics from one batch pass.
template <typename T>
void update_running_stats(HeadParams<T>& p, const BatchStats<T>& stats, T momentum = T(0.1)) {
  std::size_t k = 0;
  for (auto& tw : p.towers)
    for (auto& layer : tw.hidden) {
      if (k >= stats.layers.size()) throw std::invalid_argument("update_running_stats: too few batch statistics");
      const auto& [mu, var] = stats.layers[k++];
      for (std::size_t i = 0; i < mu.numel(); ++i) {
        layer.running_mean[i] = (T(1) - momentum) * layer.running_mean[i] + momentum * mu[i];
        layer.running_var[i] = (T(1) - momentum) * layer.running_var[i] + momentum * var[i];
      }
    }
}

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
  double score = 0;

  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }
};

/// Argmax (first in row-major order) plus sub-cell offset and size.
template <typename T>
BBox decode(const Tensor<T>& score, const Tensor<T>& offset, const Tensor<T>& size, double search_side) {
  if (score.rank() != 2 || offset.shape() != Shape{2, score.dim(0), score.dim(1)} || size.shape() != offset.shape()) {
    throw dim_error("decode", score.shape(), offset.shape());
  }
  const std::size_t hs = score.dim(0), ws = score.dim(1), cells = hs * ws;
  std::size_t best = 0;
  for (std::size_t i = 1; i < cells; ++i)
    if (score[i] > score[best]) best = i;
  const std::size_t bi = best / ws, bj = best % ws;
  const double stride_x = search_side / static_cast<double>(ws), stride_y = search_side / static_cast<double>(hs);
  const double cx = (static_cast<double>(bj) + static_cast<double>(offset[best])) * stride_x;
  const double cy = (static_cast<double>(bi) + static_cast<double>(offset[cells + best])) * stride_y;
  const double min_side = 1e-3;
  const double w = std::max(static_cast<double>(size[best]) * search_side, min_side);
  const double h = std::max(static_cast<double>(size[cells + best]) * search_side, min_side);
  const double x0 = std::clamp(cx - w / 2, 0.0, search_side), x1 = std::clamp(cx + w / 2, 0.0, search_side);
  const double y0 = std::clamp(cy - h / 2, 0.0, search_side), y1 = std::clamp(cy + h / 2, 0.0, search_side);
  BBox b{x0, y0, std::max(x1 - x0, min_side), std::max(y1 - y0, min_side), static_cast<double>(score[best])};
  b.x = std::min(b.x, search_side - b.w);
  b.y = std::min(b.y, search_side - b.h);
  return b;
}

// ----------------------------------------------------------------- losses

/// Gaussian heatmap centered on the target cell; the peak cell is exactly 1.
template <typename T>
Tensor<T> gaussian_target(std::size_t hs, std::size_t ws, double cx_cells, double cy_cells, double sigma) {
  Tensor<T> t({hs, ws});
  const auto pi = static_cast<std::size_t>(std::clamp(std::floor(cy_cells), 0.0, static_cast<double>(hs - 1)));
  const auto pj = static_cast<std::size_t>(std::clamp(std::floor(cx_cells), 0.0, static_cast<double>(ws - 1)));
  for (std::size_t i = 0; i < hs; ++i)
    for (std::size_t j = 0; j < ws; ++j) {
      const double di = static_cast<double>(i) - static_cast<double>(pi);
      const double dj = static_cast<double>(j) - static_cast<double>(pj);
      t.at(i, j) = static_cast<T>(std::exp(-(di * di + dj * dj) / (2 * sigma * sigma)));
    }
  t.at(pi, pj) = T(1);
  return t;
}

/// Penalty-reduced focal loss on logits (alpha 2, beta 4), normalized by the
/// number of positive cells.
template <typename T>
Var<T> focal_loss(Graph<T>& g, Var<T> logits, const Tensor<T>& target) {
  if (logits.shape() != target.shape()) throw dim_error("focal_loss", logits.shape(), target.shape());
  Tensor<T> pos(target.shape()), neg_w(target.shape());
  T n_pos = 0;
  for (std::size_t i = 0; i < target.numel(); ++i) {
    if (target[i] == T(1)) {
      pos[i] = T(1);
      n_pos += 1;
    } else {
      const T q = T(1) - target[i];
      neg_w[i] = q * q * q * q;
    }
  }
  auto p = sigmoid(logits);
  auto one_minus_p = add_scalar(neg(p), T(1));
  // log p = -softplus(-z), log(1-p) = -softplus(z)
  auto pos_term = mul(mul(square(one_minus_p), softplus(neg(logits))), g.constant(pos));
  auto neg_term = mul(mul(square(p), softplus(logits)), g.constant(neg_w));
  return scale(sum(add(pos_term, neg_term)), T(1) / std::max(n_pos, T(1)));
}

/// Box as normalized (cx, cy, w, h), each a [1] Var.
template <typename T>
struct BoxVars {
  Var<T> cx, cy, w, h;
};

template <typename T>
Var<T> giou_loss(Graph<T>& g, const BoxVars<T>& a, const BBox& target_norm) {
  auto c = [&](double v) { return g.constant(Tensor<T>::scalar(static_cast<T>(v))); };
  auto half = [](Var<T> v) { return scale(v, T(0.5)); };
  auto ax0 = sub(a.cx, half(a.w)), ax1 = add(a.cx, half(a.w));
  auto ay0 = sub(a.cy, half(a.h)), ay1 = add(a.cy, half(a.h));
  auto bx0 = c(target_norm.x), bx1 = c(target_norm.x + target_norm.w);
  auto by0 = c(target_norm.y), by1 = c(target_norm.y + target_norm.h);
  auto zero = c(0);
  auto iw = maximum(sub(minimum(ax1, bx1), maximum(ax0, bx0)), zero);
  auto ih = maximum(sub(minimum(ay1, by1), maximum(ay0, by0)), zero);
  auto inter = mul(iw, ih);
  auto area_a = mul(a.w, a.h);
  auto uni = sub(add(area_a, c(target_norm.w * target_norm.h)), inter);
  auto iou = div(inter, add_scalar(uni, T(1e-7)));
  auto hull = mul(sub(maximum(ax1, bx1), minimum(ax0, bx0)), sub(maximum(ay1, by1), minimum(ay0, by0)));
  auto giou = sub(iou, div(sub(hull, uni), add_scalar(hull, T(1e-7))));
  return add_scalar(neg(giou), T(1));
}

struct LossWeights {
  double focal = 1.0, l1 = 5.0, giou = 2.0;
};

template <typename T>
struct LossTerms {
  Var<T> total;
  double focal = 0, l1 = 0, giou = 0;
};

/// Training loss for one search crop; `target` is in crop pixels.
template <typename T>
LossTerms<T> head_loss(Graph<T>& g, const HeadMaps<T>& maps, const BBox& target, double search_side,
                       const LossWeights& wts = {}) {
  const std::size_t hs = maps.score.dim(0), ws = maps.score.dim(1), cells = hs * ws;
  const double stride = search_side / static_cast<double>(ws);
  const double cx_cells = target.cx() / stride, cy_cells = target.cy() / stride;
  const double sigma = std::max(0.5, std::min(target.w, target.h) / stride / 6.0);
  auto heat = gaussian_target<T>(hs, ws, cx_cells, cy_cells, sigma);
  auto focal = focal_loss(g, maps.score_logit, heat);

  const auto pi = static_cast<std::size_t>(std::clamp(std::floor(cy_cells), 0.0, static_cast<double>(hs - 1)));
  const auto pj = static_cast<std::size_t>(std::clamp(std::floor(cx_cells), 0.0, static_cast<double>(ws - 1)));
  const std::size_t cell = pi * ws + pj;
  BoxVars<T> box;
  box.cx = scale(add_scalar(pick(maps.offset, {cell}), static_cast<T>(pj)), T(1) / static_cast<T>(ws));
  box.cy = scale(add_scalar(pick(maps.offset, {cells + cell}), static_cast<T>(pi)), T(1) / static_cast<T>(hs));
  box.w = pick(maps.size, {cell});
  box.h = pick(maps.size, {cells + cell});
  const BBox tn{target.x / search_side, target.y / search_side, target.w / search_side, target.h / search_side};
  auto c = [&](double v) { return g.constant(Tensor<T>::scalar(static_cast<T>(v))); };
  auto l1 = add(add(abs(sub(box.cx, c(tn.cx()))), abs(sub(box.cy, c(tn.cy())))),
                add(abs(sub(box.w, c(tn.w))), abs(sub(box.h, c(tn.h)))));
  auto giou = giou_loss(g, box, tn);
  LossTerms<T> out;
  out.total = add(add(scale(focal, static_cast<T>(wts.focal)), scale(l1, static_cast<T>(wts.l1))),
                  scale(giou, static_cast<T>(wts.giou)));
  out.focal = static_cast<double>(focal.value().item());
  out.l1 = static_cast<double>(l1.value().item());
  out.giou = static_cast<double>(giou.value().item());
  return out;
}

}  // namespace cadtrack
