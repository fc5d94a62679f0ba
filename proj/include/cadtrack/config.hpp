#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cadtrack {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct BackboneConfig {
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 2;
  std::size_t template_side = 32;
  std::size_t search_side = 64;
  std::vector<std::size_t> mfi_layers{2, 3};  // 1-based, ascending
  std::size_t cue_count = 1;
  std::size_t mlp_ratio = 4;
  bool shared_trunk = true;

  std::size_t template_grid() const { return template_side / patch_size; }
  std::size_t search_grid() const { return search_side / patch_size; }
  std::size_t template_tokens() const { return template_grid() * template_grid(); }
  std::size_t search_tokens() const { return search_grid() * search_grid(); }
  std::size_t total_tokens() const { return cue_count + 2 * template_tokens() + search_tokens(); }

  void validate() const {
    if (patch_size == 0 || embed_dim == 0 || depth == 0 || heads == 0 || cue_count == 0) {
      throw ConfigError("backbone: extents must be positive");
    }
    if (template_side % patch_size || search_side % patch_size || template_side == 0 || search_side == 0) {
      throw ConfigError("backbone: template_side and search_side must be positive multiples of patch_size");
    }
    if (embed_dim % heads) throw ConfigError("backbone: embed_dim must be divisible by heads");
    if (!std::is_sorted(mfi_layers.begin(), mfi_layers.end()) ||
        std::adjacent_find(mfi_layers.begin(), mfi_layers.end()) != mfi_layers.end()) {
      throw ConfigError("backbone: mfi_layers must be strictly ascending");
    }
    for (auto l : mfi_layers) {
      if (l < 1 || l > depth) throw ConfigError("backbone: mfi layer " + std::to_string(l) + " outside 1..depth");
    }
  }
};

struct MfiConfig {
  std::size_t ratio = 8;         // channel compression r
  std::size_t mamba_layers = 2;  // stacked bidirectional blocks
  std::size_t state_dim = 8;     // D_s
  std::size_t conv_width = 4;

  void validate(std::size_t embed_dim) const {
    if (ratio == 0 || embed_dim % ratio) throw ConfigError("mfi: ratio must divide embed_dim");
    if (mamba_layers == 0 || state_dim == 0 || conv_width == 0) throw ConfigError("mfi: extents must be positive");
  }
};

enum class ExpertStrategy { top_k, fixed_interval, manual };

struct CamConfig {
  bool enabled = true;  // disabled: the last layer alone feeds DAM/head
  std::size_t experts = 3;
  ExpertStrategy strategy = ExpertStrategy::top_k;
  std::vector<std::size_t> manual_layers;  // 1-based, used by ExpertStrategy::manual

  void validate(std::size_t depth) const {
    if (!enabled) return;
    if (strategy == ExpertStrategy::top_k && (experts < 2 || experts > depth)) {
      throw ConfigError("cam: experts must lie in [2, depth]");
    }
    if (strategy == ExpertStrategy::manual) {
      if (manual_layers.empty()) throw ConfigError("cam: manual strategy needs manual_layers");
      for (auto l : manual_layers)
        if (l < 1 || l > depth) throw ConfigError("cam: manual layer outside 1..depth");
    }
  }
};

enum class CueKeys { same_modality, both_modalities };

struct DamConfig {
  bool enabled = true;  // disabled: search features pass to the head ungated
  double offset_scale = 5.0;  // v, in grid cells
  CueKeys cue_keys = CueKeys::same_modality;
  std::size_t ffn_ratio = 4;
};

struct HeadConfig {
  std::size_t depth = 3;  // conv layers per branch, including the output conv
  std::size_t width = 0;  // 0 = embed_dim

  void validate() const {
    if (depth == 0) throw ConfigError("head: depth must be positive");
  }
};

struct ModelConfig {
  BackboneConfig backbone;
  MfiConfig mfi;
  CamConfig cam;
  DamConfig dam;
  HeadConfig head;

  std::size_t head_width() const { return head.width ? head.width : backbone.embed_dim; }

  void validate() const {
    backbone.validate();
    mfi.validate(backbone.embed_dim);
    cam.validate(backbone.depth);
    head.validate();
  }

  /// Desk-scale defaults used by tests and the overfit harness.
  static ModelConfig toy() {
    ModelConfig c;
    c.mfi.state_dim = 8;
    c.cam.experts = 3;
    return c;
  }

  /// ViT-B sized profile with the published module settings.
  static ModelConfig paper() {
    ModelConfig c;
    c.backbone.patch_size = 16;
    c.backbone.embed_dim = 768;
    c.backbone.depth = 12;
    c.backbone.heads = 12;
    c.backbone.template_side = 128;
    c.backbone.search_side = 256;
    c.backbone.mfi_layers = {4, 7, 10};
    c.backbone.cue_count = 1;
    c.mfi.ratio = 8;
    c.mfi.mamba_layers = 2;
    c.mfi.state_dim = 16;
    c.cam.experts = 6;
    c.dam.offset_scale = 5.0;
    return c;
  }
};

}  // namespace cadtrack
