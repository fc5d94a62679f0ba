#pragma once

// Full tracker network for one frame pair: tokenize both modalities, run the
// trunk with MFI, aggregate layers with CAM, align and gate with DAM, and
// predict the maps with the head.

#include "cadtrack/cam.hpp"
#include "cadtrack/head.hpp"

namespace cadtrack {

template <typename T>
struct ModelParams {
  using value_type = T;
  BackboneParams<T> backbone;
  CamParams<T> cam;
  DamParams<T> dam;
  HeadParams<T> head;

  static ModelParams init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto& b = cfg.backbone;
    ModelParams p;
    p.backbone = BackboneParams<T>::init(b, cfg.mfi, rng);
    p.cam = CamParams<T>::init(b.depth, b.embed_dim, cfg.cam.experts, rng);
    p.dam = DamParams<T>::init(b.embed_dim, b.heads, b.cue_count, cfg.dam.ffn_ratio, rng);
    p.head = HeadParams<T>::init(b.embed_dim, cfg.head_width(), cfg.head.depth, rng);
    return p;
  }

  template <typename F>
  void visit(F&& fn, const std::string& prefix) {
    backbone.visit(fn, join(prefix, "backbone"));
    cam.visit(fn, join(prefix, "cam"));
    dam.visit(fn, join(prefix, "dam"));
    head.visit(fn, join(prefix, "head"));
  }
};

/// Images of one frame pair, each [3, side, side], indexed by Modality.
template <typename T>
struct FrameImages {
  std::array<Tensor<T>, 2> z0, zt, search;
};

template <typename T>
struct FrameDiagnostics {
  std::array<Tensor<T>, 2> router_scores;              // [L] per modality (empty when CAM is off)
  std::array<std::vector<std::size_t>, 2> experts;     // 1-based layer indices
  std::array<Tensor<T>, 2> gate;                        // [N_x] per modality (empty when DAM is off)
  std::array<std::array<Tensor<T>, 2>, 2> offsets;     // [modality][template slot], [H_t, W_t, 2]
};

template <typename T>
struct FrameOutput {
  HeadMaps<T> maps;
  std::array<Var<T>, 2> cue_next;
  std::array<Var<T>, 2> response;  // H_m
  FrameDiagnostics<T> diag;
};

/// Runs the network on one frame pair. `cue` holds C_m^t per modality; pass
/// ModelParams::dam.cue_init through g.param for the first frame.
template <typename T>
FrameOutput<T> forward_frame(Graph<T>& g, const FrameImages<T>& img, const std::array<Var<T>, 2>& cue,
                             const ModelParams<T>& p, const ModelConfig& cfg, NormMode norm = NormMode::running,
                             BatchStats<T>* stats = nullptr) {
  const auto& bc = cfg.backbone;
  std::array<Var<T>, 2> tokens;
  TokenLayout layout;
  for (int m = 0; m < 2; ++m) {
    auto z0 = patch_embed(g, img.z0[m], p.backbone, bc, SegmentKind::template_image);
    auto zt = patch_embed(g, img.zt[m], p.backbone, bc, SegmentKind::template_image);
    auto s = patch_embed(g, img.search[m], p.backbone, bc, SegmentKind::search_image);
    auto cue_tokens = add(cue[m], g.param(p.backbone.pos_cue));
    std::tie(tokens[m], layout) = assemble_tokens(cue_tokens, z0, zt, s);
  }
  auto feats = forward_backbone(g, tokens[0], tokens[1], p.backbone, bc);

  FrameOutput<T> out;
  std::array<Var<T>, 2> aggregated;
  for (int m = 0; m < 2; ++m) {
    const auto& fm = feats.of(static_cast<Modality>(m));
    if (!cfg.cam.enabled) {
      aggregated[m] = fm.back();
      continue;
    }
    auto scores = route(g, fm, p.cam.router);
    out.diag.router_scores[m] = scores.value();
    const auto& sv = scores.value();
    out.diag.experts[m] = experts_for<T>(cfg.cam, std::span<const T>(sv.data(), sv.numel()));
    aggregated[m] = aggregate(g, fm, out.diag.experts[m], p.cam);
  }

  std::array<SegmentViews<T>, 2> seg{split_tokens(aggregated[0], layout), split_tokens(aggregated[1], layout)};
  if (!cfg.dam.enabled) {
    for (int m = 0; m < 2; ++m) {
      out.response[m] = seg[m].search;
      out.cue_next[m] = cue[m];
    }
  } else {
    std::array<TemplateSamples<T>, 2> samples;
    for (int m = 0; m < 2; ++m) {
      samples[m] = sample_templates(g, seg[m].z0, seg[m].zt, static_cast<Modality>(m), p.dam, cfg.dam);
      out.diag.offsets[m][0] = samples[m].offsets[0];
      out.diag.offsets[m][1] = samples[m].offsets[1];
    }
    for (int m = 0; m < 2; ++m) {
      auto keys = cfg.dam.cue_keys == CueKeys::same_modality
                      ? samples[m].sampled
                      : concat_rows<T>({samples[0].sampled, samples[1].sampled});
      out.cue_next[m] = propagate_cue(g, cue[m], keys, p.dam);
      auto r = refine_and_respond(g, out.cue_next[m], seg[m].search, p.dam);
      out.response[m] = r.features;
      out.diag.gate[m] = r.gate.value();
    }
  }

  auto fused = fuse(g, out.response[0], out.response[1], p.head);
  out.maps = predict_maps(g, fused, p.head, norm, stats);
  return out;
}

template <typename T>
std::array<Var<T>, 2> initial_cue(Graph<T>& g, const ModelParams<T>& p) {
  return {g.param(p.dam.cue_init[0]), g.param(p.dam.cue_init[1])};
}

template <typename T>
std::array<Var<T>, 2> constant_cue(Graph<T>& g, const std::array<Tensor<T>, 2>& cue) {
  return {g.constant(cue[0]), g.constant(cue[1])};
}

}  // namespace cadtrack
