#pragma once

// Deformable alignment: template features are mixed, offset heads shift a
// reference grid per (modality, template) pair, the shifted points are
// sampled bilinearly, the sampled tokens update the persistent cue through
// cross-attention, and the refined cue gates the search features.
//
// Offsets are in grid-cell units with channel order (dx, dy); sampling
// points and the reference grid use (row, col).

#include "cadtrack/backbone.hpp"

namespace cadtrack {

enum class TemplateSlot : int { initial = 0, dynamic = 1 };

template <typename T>
struct DamParams {
  using value_type = T;
  Tensor<T> mix_dw, mix_dw_b;  // depthwise 3x3 over 2C channels: [2C,3,3], [2C]
  Tensor<T> mix_pw, mix_pw_b;  // pointwise 2C -> C: [C,2C], [C]
  LinearParams<T> offset_heads[2][2];  // [modality][template slot], C -> 2
  Tensor<T> cue_init[2];               // C^0 per modality, [N_K, C]
  AttentionParams<T> cross_attn;       // cue <- sampled templates
  AttentionParams<T> intra_attn;       // cue <- search features
  FfnParams<T> cue_ffn;

  const LinearParams<T>& head(Modality m, TemplateSlot s) const {
    return offset_heads[static_cast<int>(m)][static_cast<int>(s)];
  }

  static DamParams init(std::size_t dim, std::size_t heads, std::size_t cue_count, std::size_t ffn_ratio, Rng& rng) {
    DamParams p;
    p.mix_dw = rng.normal_tensor<T>({2 * dim, 3, 3}, 1.0 / 3.0);
    p.mix_dw_b = Tensor<T>({2 * dim});
    p.mix_pw = rng.normal_tensor<T>({dim, 2 * dim}, 1.0 / std::sqrt(2.0 * static_cast<double>(dim)));
    p.mix_pw_b = Tensor<T>({dim});
    for (auto& per_mod : p.offset_heads)
      for (auto& h : per_mod) h = LinearParams<T>::init(dim, 2, rng, true);
    for (auto& c : p.cue_init) c = rng.normal_tensor<T>({cue_count, dim}, 1.0);
    p.cross_attn = AttentionParams<T>::init(dim, heads, rng, true);
    p.intra_attn = AttentionParams<T>::init(dim, heads, rng, true);
    p.cue_ffn = FfnParams<T>::init(dim, dim * ffn_ratio, rng, true);
    return p;
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    fn(join(prefix, "mix_dw"), mix_dw);
    fn(join(prefix, "mix_dw_b"), mix_dw_b);
    fn(join(prefix, "mix_pw"), mix_pw);
    fn(join(prefix, "mix_pw_b"), mix_pw_b);
    const char* mods[2] = {"rgb", "tir"};
    const char* slots[2] = {"z0", "zt"};
    for (int m = 0; m < 2; ++m)
      for (int s = 0; s < 2; ++s)
        offset_heads[m][s].visit(fn, join(prefix, std::string("offset_") + mods[m] + "_" + slots[s]));
    fn(join(prefix, "cue_init_rgb"), cue_init[0]);
    fn(join(prefix, "cue_init_tir"), cue_init[1]);
    cross_attn.visit(fn, join(prefix, "cross_attn"));
    intra_attn.visit(fn, join(prefix, "intra_attn"));
    cue_ffn.visit(fn, join(prefix, "cue_ffn"));
  }
};

/// Integer cell centers (row, col) of an h x w grid, shape [h, w, 2].
template <typename T>
Tensor<T> reference_grid(std::size_t h, std::size_t w) {
  Tensor<T> r({h, w, 2});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      r.at(i, j, 0) = static_cast<T>(i);
      r.at(i, j, 1) = static_cast<T>(j);
    }
  return r;
}

inline std::size_t square_side(std::size_t tokens, const char* op) {
  std::size_t s = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(tokens))));
  if (s * s != tokens) throw DimensionError(std::string(op) + ": token count " + std::to_string(tokens) + " is not square");
  return s;
}

/// Raster token order -> [H, W, C] grid (token i*W + j lands at (i, j)).
template <typename T>
Var<T> tokens_to_grid(Var<T> tokens) {
  const std::size_t side = square_side(tokens.dim(0), "tokens_to_grid");
  return reshape(tokens, {side, side, tokens.dim(1)});
}

template <typename T>
std::pair<Var<T>, Var<T>> reshape_templates(Var<T> z0_tokens, Var<T> zt_tokens) {
  if (z0_tokens.shape() != zt_tokens.shape()) throw dim_error("reshape_templates", z0_tokens.shape(), zt_tokens.shape());
  return {tokens_to_grid(z0_tokens), tokens_to_grid(zt_tokens)};
}

/// GELU(PW(GELU(DW3x3([z0; zt])))) on [H, W, C] grids, result [H, W, C].
template <typename T>
Var<T> conv_mixer(Graph<T>& g, Var<T> z0_grid, Var<T> zt_grid, const DamParams<T>& p) {
  if (z0_grid.shape() != zt_grid.shape() || z0_grid.value().rank() != 3) {
    throw dim_error("conv_mixer", z0_grid.shape(), zt_grid.shape());
  }
  const std::size_t h = z0_grid.dim(0), w = z0_grid.dim(1), c = z0_grid.dim(2);
  auto stacked = concat_cols<T>({reshape(z0_grid, {h * w, c}), reshape(zt_grid, {h * w, c})});  // [HW, 2C]
  auto chw = reshape(transpose(stacked), {2 * c, h, w});
  auto x = gelu(add_channel_bias(conv2d(chw, g.param(p.mix_dw), kernels::ConvMode::depthwise, 1, 1), g.param(p.mix_dw_b)));
  x = gelu(add_channel_bias(conv2d(x, g.param(p.mix_pw), kernels::ConvMode::pointwise), g.param(p.mix_pw_b)));
  return reshape(transpose(reshape(x, {c, h * w})), {h, w, c});
}

/// offsets = v * G(F_A), shape [H, W, 2] with channels (dx, dy).
template <typename T>
Var<T> predict_offsets(Graph<T>& g, Var<T> f_a, const LinearParams<T>& head, double offset_scale) {
  const std::size_t h = f_a.dim(0), w = f_a.dim(1), c = f_a.dim(2);
  auto o = linear(g, reshape(f_a, {h * w, c}), head);
  return reshape(scale(o, static_cast<T>(offset_scale)), {h, w, 2});
}

/// Samples grid[H,W,C] at refs + offsets; returns [H*W, C] in raster order.
template <typename T>
Var<T> deform_sample(Graph<T>& g, Var<T> grid, const Tensor<T>& refs, Var<T> offsets) {
  const std::size_t h = grid.dim(0), w = grid.dim(1);
  if (refs.shape() != Shape{h, w, 2} || offsets.shape() != refs.shape()) {
    throw dim_error("deform_sample", refs.shape(), offsets.shape());
  }
  auto off = reshape(offsets, {h * w, 2});
  auto row_col = concat_cols<T>({slice_cols(off, 1, 1), slice_cols(off, 0, 1)});  // (dy, dx)
  auto points = add(g.constant(refs.reshaped({h * w, 2})), row_col);
  return bilinear_sample(grid, points);
}

/// C^{t+1} = C^t + Phi(C^t, F_S)
template <typename T>
Var<T> propagate_cue(Graph<T>& g, Var<T> cue, Var<T> sampled, const DamParams<T>& p,
                     std::vector<Tensor<T>>* attn_weights = nullptr) {
  return add(cue, attention(g, cue, sampled, p.cross_attn, attn_weights));
}

template <typename T>
struct Response {
  Var<T> features;  // H_m, [N_x, C]
  Var<T> gate;      // g, [N_x]
};

/// g = mean_k (F C~^T)[:, k] / sqrt(C);  H = g .* F  (g broadcast over channels).
template <typename T>
Response<T> respond(Var<T> search, Var<T> cue_refined) {
  const std::size_t c = search.dim(1), nk = cue_refined.dim(0);
  auto scores = scale(matmul_nt(search, cue_refined), T(1) / std::sqrt(static_cast<T>(c)));  // [N_x, N_K]
  auto gate = nk == 1 ? reshape(scores, {search.dim(0)}) : mean_cols(scores);
  return {mul_col(search, gate), gate};
}

/// Spatial guidance, feature enhancement, response generation.
template <typename T>
Response<T> refine_and_respond(Graph<T>& g, Var<T> cue_next, Var<T> search, const DamParams<T>& p) {
  auto guided = add(cue_next, attention(g, cue_next, search, p.intra_attn));
  auto refined = add(guided, ffn(g, guided, p.cue_ffn));
  return respond(search, refined);
}

template <typename T>
struct TemplateSamples {
  Var<T> sampled;            // F_S = [F^{Z0}; F^{Zt}], [2 N_z, C]
  Tensor<T> offsets[2];      // per template slot, [H, W, 2]
};

/// Mixer, offset heads and deformable sampling for one modality.
template <typename T>
TemplateSamples<T> sample_templates(Graph<T>& g, Var<T> z0_tokens, Var<T> zt_tokens, Modality m, const DamParams<T>& p,
                                    const DamConfig& cfg) {
  auto [z0, zt] = reshape_templates(z0_tokens, zt_tokens);
  auto f_a = conv_mixer(g, z0, zt, p);
  const auto refs = reference_grid<T>(z0.dim(0), z0.dim(1));
  TemplateSamples<T> out;
  auto off0 = predict_offsets(g, f_a, p.head(m, TemplateSlot::initial), cfg.offset_scale);
  auto off1 = predict_offsets(g, f_a, p.head(m, TemplateSlot::dynamic), cfg.offset_scale);
  out.offsets[0] = off0.value();
  out.offsets[1] = off1.value();
  out.sampled = concat_rows<T>({deform_sample(g, z0, refs, off0), deform_sample(g, zt, refs, off1)});
  return out;
}

template <typename T>
struct DamOutput {
  Var<T> cue_next;   // C^{t+1}
  Response<T> response;
  TemplateSamples<T> samples;
};

/// Full single-modality pass with same-modality keys for the cue update.
template <typename T>
DamOutput<T> dam_forward(Graph<T>& g, Var<T> aggregated, const TokenLayout& layout, Var<T> cue, Modality m,
                         const DamParams<T>& p, const DamConfig& cfg) {
  auto seg = split_tokens(aggregated, layout);
  auto samples = sample_templates(g, seg.z0, seg.zt, m, p, cfg);
  auto next = propagate_cue(g, cue, samples.sampled, p);
  return {next, refine_and_respond(g, next, seg.search, p), samples};
}

}  // namespace cadtrack
