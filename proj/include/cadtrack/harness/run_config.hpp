#pragma once

// Run configuration: model hyperparameters plus tracker, training and data
// settings. Serialized as a flat JSON object whose keys are the field names
// below; unknown keys are rejected.

#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "cadtrack/config.hpp"

namespace cadtrack {

enum class ElementType { f32, f64 };

struct RunConfig {
  std::string profile = "toy";
  ModelConfig model = ModelConfig::toy();

  std::uint64_t seed = 7;
  std::size_t update_interval = 25;  // U; 0 disables template updates
  double update_threshold = 0.7;     // theta
  double search_factor = 4.0;        // search crop side / sqrt(w h)
  double template_factor = 2.0;      // template crop side / sqrt(w h)
  ElementType element_type = ElementType::f32;
  std::string output_dir = "out";

  // training
  std::size_t steps = 500;
  double learning_rate = 5e-4;
  std::string optimizer = "adam";  // adam | sgd
  double grad_clip = 1.0;  // global gradient norm, 0 disables
  double bn_freeze_fraction = 0.8;
  double jitter_shift = 0.2;  // fraction of search side
  double jitter_scale = 0.3;

  // data
  std::string sequence;  // empty: generate from the fields below
  std::size_t frames = 20;
  std::size_t frame_side = 128;
  double misalignment_px = 2.0;
  std::string motion_model = "drift";

  static RunConfig for_profile(const std::string& profile) {
    RunConfig c;
    c.profile = profile;
    if (profile == "toy") {
      c.model = ModelConfig::toy();
    } else if (profile == "paper") {
      c.model = ModelConfig::paper();
    } else {
      throw ConfigError("unknown profile '" + profile + "' (expected toy or paper)");
    }
    return c;
  }

  void validate() const {
    model.validate();
    if (search_factor <= 0 || template_factor <= 0) throw ConfigError("crop factors must be positive");
    if (optimizer != "adam" && optimizer != "sgd") throw ConfigError("optimizer must be adam or sgd");
    if (bn_freeze_fraction < 0 || bn_freeze_fraction > 1) throw ConfigError("bn_freeze_fraction must lie in [0, 1]");
    if (frames < 2) throw ConfigError("frames must be at least 2");
    if (motion_model != "drift" && motion_model != "random_walk") {
      throw ConfigError("motion_model must be drift or random_walk");
    }
  }
};

namespace detail {

inline const char* strategy_name(ExpertStrategy s) {
  switch (s) {
    case ExpertStrategy::top_k: return "top_k";
    case ExpertStrategy::fixed_interval: return "fixed_interval";
    case ExpertStrategy::manual: return "manual";
  }
  return "top_k";
}

inline ExpertStrategy parse_strategy(const std::string& s) {
  if (s == "top_k") return ExpertStrategy::top_k;
  if (s == "fixed_interval") return ExpertStrategy::fixed_interval;
  if (s == "manual") return ExpertStrategy::manual;
  throw ConfigError("expert_strategy must be top_k, fixed_interval or manual");
}

inline CueKeys parse_cue_keys(const std::string& s) {
  if (s == "same_modality") return CueKeys::same_modality;
  if (s == "both_modalities") return CueKeys::both_modalities;
  throw ConfigError("cue_keys must be same_modality or both_modalities");
}

inline ElementType parse_element_type(const std::string& s) {
  if (s == "f32") return ElementType::f32;
  if (s == "f64") return ElementType::f64;
  throw ConfigError("element_type must be f32 or f64");
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  const auto& m = c.model;
  nlohmann::ordered_json j;
  j["profile"] = c.profile;
  j["patch_size"] = m.backbone.patch_size;
  j["embed_dim"] = m.backbone.embed_dim;
  j["depth"] = m.backbone.depth;
  j["heads"] = m.backbone.heads;
  j["template_side"] = m.backbone.template_side;
  j["search_side"] = m.backbone.search_side;
  j["mfi_layers"] = m.backbone.mfi_layers;
  j["cue_count"] = m.backbone.cue_count;
  j["mlp_ratio"] = m.backbone.mlp_ratio;
  j["shared_trunk"] = m.backbone.shared_trunk;
  j["mfi_ratio"] = m.mfi.ratio;
  j["mamba_layers"] = m.mfi.mamba_layers;
  j["state_dim"] = m.mfi.state_dim;
  j["conv_width"] = m.mfi.conv_width;
  j["cam_enabled"] = m.cam.enabled;
  j["experts"] = m.cam.experts;
  j["expert_strategy"] = detail::strategy_name(m.cam.strategy);
  j["manual_layers"] = m.cam.manual_layers;
  j["dam_enabled"] = m.dam.enabled;
  j["offset_scale"] = m.dam.offset_scale;
  j["cue_keys"] = m.dam.cue_keys == CueKeys::same_modality ? "same_modality" : "both_modalities";
  j["dam_ffn_ratio"] = m.dam.ffn_ratio;
  j["head_depth"] = m.head.depth;
  j["head_width"] = m.head.width;
  j["seed"] = c.seed;
  j["update_interval"] = c.update_interval;
  j["update_threshold"] = c.update_threshold;
  j["search_factor"] = c.search_factor;
  j["template_factor"] = c.template_factor;
  j["element_type"] = c.element_type == ElementType::f32 ? "f32" : "f64";
  j["output_dir"] = c.output_dir;
  j["steps"] = c.steps;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = c.optimizer;
  j["grad_clip"] = c.grad_clip;
  j["bn_freeze_fraction"] = c.bn_freeze_fraction;
  j["jitter_shift"] = c.jitter_shift;
  j["jitter_scale"] = c.jitter_scale;
  j["sequence"] = c.sequence;
  j["frames"] = c.frames;
  j["frame_side"] = c.frame_side;
  j["misalignment_px"] = c.misalignment_px;
  j["motion_model"] = c.motion_model;
  return j;
}

/// Starts from the named profile (default toy) and applies every key.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c = RunConfig::for_profile(j.contains("profile") ? j.at("profile").get<std::string>() : "toy");
  auto& m = c.model;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "profile") continue;
      else if (key == "patch_size") m.backbone.patch_size = v.get<std::size_t>();
      else if (key == "embed_dim") m.backbone.embed_dim = v.get<std::size_t>();
      else if (key == "depth") m.backbone.depth = v.get<std::size_t>();
      else if (key == "heads") m.backbone.heads = v.get<std::size_t>();
      else if (key == "template_side") m.backbone.template_side = v.get<std::size_t>();
      else if (key == "search_side") m.backbone.search_side = v.get<std::size_t>();
      else if (key == "mfi_layers") m.backbone.mfi_layers = v.get<std::vector<std::size_t>>();
      else if (key == "cue_count") m.backbone.cue_count = v.get<std::size_t>();
      else if (key == "mlp_ratio") m.backbone.mlp_ratio = v.get<std::size_t>();
      else if (key == "shared_trunk") m.backbone.shared_trunk = v.get<bool>();
      else if (key == "mfi_ratio") m.mfi.ratio = v.get<std::size_t>();
      else if (key == "mamba_layers") m.mfi.mamba_layers = v.get<std::size_t>();
      else if (key == "state_dim") m.mfi.state_dim = v.get<std::size_t>();
      else if (key == "conv_width") m.mfi.conv_width = v.get<std::size_t>();
      else if (key == "cam_enabled") m.cam.enabled = v.get<bool>();
      else if (key == "experts") m.cam.experts = v.get<std::size_t>();
      else if (key == "expert_strategy") m.cam.strategy = detail::parse_strategy(v.get<std::string>());
      else if (key == "manual_layers") m.cam.manual_layers = v.get<std::vector<std::size_t>>();
      else if (key == "dam_enabled") m.dam.enabled = v.get<bool>();
      else if (key == "offset_scale") m.dam.offset_scale = v.get<double>();
      else if (key == "cue_keys") m.dam.cue_keys = detail::parse_cue_keys(v.get<std::string>());
      else if (key == "dam_ffn_ratio") m.dam.ffn_ratio = v.get<std::size_t>();
      else if (key == "head_depth") m.head.depth = v.get<std::size_t>();
      else if (key == "head_width") m.head.width = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "update_interval") c.update_interval = v.get<std::size_t>();
      else if (key == "update_threshold") c.update_threshold = v.get<double>();
      else if (key == "search_factor") c.search_factor = v.get<double>();
      else if (key == "template_factor") c.template_factor = v.get<double>();
      else if (key == "element_type") c.element_type = detail::parse_element_type(v.get<std::string>());
      else if (key == "output_dir") c.output_dir = v.get<std::string>();
      else if (key == "steps") c.steps = v.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "optimizer") c.optimizer = v.get<std::string>();
      else if (key == "grad_clip") c.grad_clip = v.get<double>();
      else if (key == "bn_freeze_fraction") c.bn_freeze_fraction = v.get<double>();
      else if (key == "jitter_shift") c.jitter_shift = v.get<double>();
      else if (key == "jitter_scale") c.jitter_scale = v.get<double>();
      else if (key == "sequence") c.sequence = v.get<std::string>();
      else if (key == "frames") c.frames = v.get<std::size_t>();
      else if (key == "frame_side") c.frame_side = v.get<std::size_t>();
      else if (key == "misalignment_px") c.misalignment_px = v.get<double>();
      else if (key == "motion_model") c.motion_model = v.get<std::string>();
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace cadtrack
