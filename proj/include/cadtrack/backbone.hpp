#pragma once

#include "cadtrack/mfi.hpp"

namespace cadtrack {

enum class Modality : int { rgb = 0, tir = 1 };

inline const char* modality_name(Modality m) { return m == Modality::rgb ? "rgb" : "tir"; }

enum class SegmentKind { template_image, search_image };

/// Segment boundaries of one assembled token matrix, in concatenation order
/// [cue; initial template; dynamic template; search].
struct TokenLayout {
  std::size_t cue_count = 0, template_tokens = 0, search_tokens = 0;

  std::size_t cue_offset() const { return 0; }
  std::size_t z0_offset() const { return cue_count; }
  std::size_t zt_offset() const { return cue_count + template_tokens; }
  std::size_t search_offset() const { return cue_count + 2 * template_tokens; }
  std::size_t total() const { return cue_count + 2 * template_tokens + search_tokens; }

  friend bool operator==(const TokenLayout&, const TokenLayout&) = default;
};

template <typename T>
struct VitBlockParams {
  using value_type = T;
  NormParams<T> norm1, norm2;
  AttentionParams<T> attn;
  FfnParams<T> mlp;

  static VitBlockParams init(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng) {
    VitBlockParams p;
    p.norm1 = NormParams<T>::init(dim);
    p.norm2 = NormParams<T>::init(dim);
    p.attn = AttentionParams<T>::init(dim, heads, rng, false);
    p.mlp = FfnParams<T>::init(dim, dim * mlp_ratio, rng);
    return p;
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    norm1.visit(fn, join(prefix, "norm1"));
    attn.visit(fn, join(prefix, "attn"));
    norm2.visit(fn, join(prefix, "norm2"));
    mlp.visit(fn, join(prefix, "mlp"));
  }
};

template <typename T>
struct BackboneParams {
  using value_type = T;
  LinearParams<T> patch;     // [3 P^2, C]
  Tensor<T> pos_template;    // [N_z, C]
  Tensor<T> pos_search;      // [N_x, C]
  Tensor<T> pos_cue;         // [N_K, C]
  // trunks[0] serves both modalities when the trunk is shared.
  std::vector<std::vector<VitBlockParams<T>>> trunks;
  std::vector<MfiParams<T>> mfi;  // one per entry of mfi_layers

  const std::vector<VitBlockParams<T>>& trunk(Modality m) const {
    return trunks.size() == 1 ? trunks[0] : trunks[static_cast<int>(m)];
  }

  static BackboneParams init(const BackboneConfig& cfg, const MfiConfig& mfi_cfg, Rng& rng) {
    cfg.validate();
    const std::size_t c = cfg.embed_dim, pp = cfg.patch_size;
    BackboneParams p;
    p.patch = LinearParams<T>::init(3 * pp * pp, c, rng);
    p.pos_template = rng.normal_tensor<T>({cfg.template_tokens(), c}, 0.02);
    p.pos_search = rng.normal_tensor<T>({cfg.search_tokens(), c}, 0.02);
    p.pos_cue = rng.normal_tensor<T>({cfg.cue_count, c}, 0.02);
    const std::size_t n_trunks = cfg.shared_trunk ? 1 : 2;
    p.trunks.resize(n_trunks);
    for (auto& tr : p.trunks)
      for (std::size_t l = 0; l < cfg.depth; ++l) tr.push_back(VitBlockParams<T>::init(c, cfg.heads, cfg.mlp_ratio, rng));
    for (std::size_t i = 0; i < cfg.mfi_layers.size(); ++i) p.mfi.push_back(MfiParams<T>::init(c, mfi_cfg, rng));
    return p;
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    patch.visit(fn, join(prefix, "patch"));
    fn(join(prefix, "pos_template"), pos_template);
    fn(join(prefix, "pos_search"), pos_search);
    fn(join(prefix, "pos_cue"), pos_cue);
    for (std::size_t t = 0; t < trunks.size(); ++t)
      for (std::size_t l = 0; l < trunks[t].size(); ++l)
        trunks[t][l].visit(fn, join(prefix, "trunk" + std::to_string(t) + ".block" + std::to_string(l)));
    for (std::size_t i = 0; i < mfi.size(); ++i) mfi[i].visit(fn, join(prefix, "mfi" + std::to_string(i)));
  }
};

/// Rearranges image[3,H,W] into raster-ordered patches [(H/P)(W/P), 3 P^2];
/// each row flattens one patch in (channel, row, col) order.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t p) {
  if (image.rank() != 3 || image.dim(0) != 3) throw dim_error("patchify: expected [3,H,W]", image.shape());
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (p == 0 || h % p || w % p) {
    throw DimensionError("patchify: image " + shape_str(image.shape()) + " not divisible by patch " + std::to_string(p));
  }
  const std::size_t gh = h / p, gw = w / p, len = 3 * p * p;
  Tensor<T> out({gh * gw, len});
  for (std::size_t pi = 0; pi < gh; ++pi)
    for (std::size_t pj = 0; pj < gw; ++pj) {
      T* row = out.data() + (pi * gw + pj) * len;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x) *row++ = image.at(c, pi * p + y, pj * p + x);
    }
  return out;
}

/// Linear patch projection plus the position table of the segment kind.
template <typename T>
Var<T> patch_embed(Graph<T>& g, const Tensor<T>& image, const BackboneParams<T>& p, const BackboneConfig& cfg,
                   SegmentKind kind) {
  const std::size_t side = kind == SegmentKind::template_image ? cfg.template_side : cfg.search_side;
  if (image.rank() != 3 || image.dim(1) != side || image.dim(2) != side) {
    throw dim_error("patch_embed: image must be [3," + std::to_string(side) + "," + std::to_string(side) + "]",
                    image.shape());
  }
  auto tokens = linear(g, g.constant(patchify(image, cfg.patch_size)), p.patch);
  const auto& pos = kind == SegmentKind::template_image ? p.pos_template : p.pos_search;
  return add(tokens, g.param(pos));
}

template <typename T>
std::pair<Var<T>, TokenLayout> assemble_tokens(Var<T> cue, Var<T> z0, Var<T> zt, Var<T> search) {
  const std::size_t c = cue.dim(1);
  for (auto v : {z0, zt, search})
    if (v.value().rank() != 2 || v.dim(1) != c) throw dim_error("assemble_tokens: width mismatch", cue.shape(), v.shape());
  if (z0.shape() != zt.shape()) throw dim_error("assemble_tokens: template mismatch", z0.shape(), zt.shape());
  TokenLayout layout{cue.dim(0), z0.dim(0), search.dim(0)};
  return {concat_rows<T>({cue, z0, zt, search}), layout};
}

template <typename T>
struct SegmentViews {
  Var<T> cue, z0, zt, search;
};

template <typename T>
SegmentViews<T> split_tokens(Var<T> tokens, const TokenLayout& layout) {
  if (tokens.dim(0) != layout.total()) throw DimensionError("split_tokens: token count does not match layout");
  return {slice_rows(tokens, layout.cue_offset(), layout.cue_count),
          slice_rows(tokens, layout.z0_offset(), layout.template_tokens),
          slice_rows(tokens, layout.zt_offset(), layout.template_tokens),
          slice_rows(tokens, layout.search_offset(), layout.search_tokens)};
}

/// Pre-norm transformer block: x += MHSA(LN(x)); x += FFN(LN(x)).
template <typename T>
Var<T> vit_block(Graph<T>& g, Var<T> x, const VitBlockParams<T>& p, std::vector<Tensor<T>>* attn_weights = nullptr) {
  auto h = layer_norm(g, x, p.norm1);
  x = add(x, attention(g, h, h, p.attn, attn_weights));
  return add(x, ffn(g, layer_norm(g, x, p.norm2), p.mlp));
}

template <typename T>
struct BackboneOutput {
  std::vector<Var<T>> rgb, tir;  // post-layer features, index l-1 for layer l

  const std::vector<Var<T>>& of(Modality m) const { return m == Modality::rgb ? rgb : tir; }
};

/// Runs both modality streams through the trunk. Right after every layer in
/// cfg.mfi_layers the two streams exchange information through MFI.
template <typename T>
BackboneOutput<T> forward_backbone(Graph<T>& g, Var<T> tokens_rgb, Var<T> tokens_tir, const BackboneParams<T>& p,
                                   const BackboneConfig& cfg) {
  if (tokens_rgb.shape() != tokens_tir.shape()) throw dim_error("forward_backbone", tokens_rgb.shape(), tokens_tir.shape());
  if (!cfg.mfi_layers.empty() && p.mfi.size() != cfg.mfi_layers.size()) throw ConfigError("forward_backbone: one MFI parameter set per mfi layer");
  BackboneOutput<T> out;
  auto xr = tokens_rgb, xt = tokens_tir;
  std::size_t next_mfi = 0;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    xr = vit_block(g, xr, p.trunk(Modality::rgb)[l]);
    xt = vit_block(g, xt, p.trunk(Modality::tir)[l]);
    if (next_mfi < cfg.mfi_layers.size() && cfg.mfi_layers[next_mfi] == l + 1) {
      auto fused = mfi_forward(g, xr, xt, p.mfi[next_mfi]);
      xr = fused.rgb;
      xt = fused.tir;
      ++next_mfi;
    }
    out.rgb.push_back(xr);
    out.tir.push_back(xt);
  }
  return out;
}

}  // namespace cadtrack
