#pragma once

#include <limits>

#include "cadtrack/harness/crop.hpp"
#include "cadtrack/harness/run_config.hpp"
#include "cadtrack/harness/sequence.hpp"
#include "cadtrack/model.hpp"

namespace cadtrack {

template <typename T>
std::array<Tensor<T>, 2> crop_pair(const Image& rgb, const Image& tir, const CropWindow& win) {
  return {crop_image<T>(rgb, win), crop_image<T>(tir, win)};
}

inline CropWindow template_window(const BBox& b, const RunConfig& cfg) {
  return CropWindow::around(b.cx(), b.cy(), cfg.template_factor * box_extent(b), cfg.model.backbone.template_side);
}

inline CropWindow search_window(const BBox& b, const RunConfig& cfg) {
  return CropWindow::around(b.cx(), b.cy(), cfg.search_factor * box_extent(b), cfg.model.backbone.search_side);
}

template <typename T>
struct TrackerState {
  std::array<Tensor<T>, 2> z0, zt;  // template crops per modality
  std::array<Tensor<T>, 2> cue;     // C_m^t
  BBox last;
  std::size_t frame = 0;          // frames processed so far
  std::size_t zt_frame = 1;       // frame the dynamic template was cropped from
  BBox zt_box;                    // prediction the dynamic template is centered on
};

template <typename T>
struct FrameRecord {
  BBox box;  // frame coordinates
  CropWindow search;
  Tensor<T> score_map;  // [H_s, W_s]
  FrameDiagnostics<T> diag;
  bool template_updated = false;
};

template <typename T>
class Tracker {
 public:
  Tracker(const ModelParams<T>& params, const RunConfig& cfg) : params_(params), cfg_(cfg) {}

  /// Frame 1: the annotation is the output.
  FrameRecord<T> init(const Image& rgb, const Image& tir, const BBox& gt) {
    check_pair(rgb, tir);
    state_ = TrackerState<T>{};
    state_.z0 = crop_pair<T>(rgb, tir, template_window(gt, cfg_));
    state_.zt = state_.z0;
    state_.cue = {params_.dam.cue_init[0], params_.dam.cue_init[1]};
    state_.last = gt;
    state_.last.score = 1.0;
    state_.frame = 1;
    state_.zt_frame = 1;
    state_.zt_box = gt;
    FrameRecord<T> rec;
    rec.box = state_.last;
    return rec;
  }

  FrameRecord<T> step(const Image& rgb, const Image& tir) {
    if (state_.frame == 0) throw std::logic_error("Tracker::step before init");
    check_pair(rgb, tir);
    const auto& bc = cfg_.model.backbone;
    FrameRecord<T> rec;
    rec.search = search_window(state_.last, cfg_);
    FrameImages<T> img{state_.z0, state_.zt, crop_pair<T>(rgb, tir, rec.search)};
    Graph<T> g(false);
    auto out = forward_frame(g, img, constant_cue(g, state_.cue), params_, cfg_.model, NormMode::running);
    const auto crop_box = decode(out.maps.score.value(), out.maps.offset.value(), out.maps.size.value(),
                                 static_cast<double>(bc.search_side));
    rec.box = clip_box(box_from_crop(crop_box, rec.search), static_cast<double>(rgb.width),
                       static_cast<double>(rgb.height));
    rec.score_map = out.maps.score.value();
    rec.diag = std::move(out.diag);
    for (int m = 0; m < 2; ++m) state_.cue[m] = out.cue_next[m].value();
    state_.last = rec.box;
    state_.frame += 1;
    if (cfg_.update_interval > 0 && state_.frame % cfg_.update_interval == 0 && rec.box.score > cfg_.update_threshold) {
      state_.zt = crop_pair<T>(rgb, tir, template_window(rec.box, cfg_));
      state_.zt_frame = state_.frame;
      state_.zt_box = rec.box;
      rec.template_updated = true;
    }
    return rec;
  }

  const TrackerState<T>& state() const { return state_; }

 private:
  static void check_pair(const Image& rgb, const Image& tir) {
    if (rgb.width != tir.width || rgb.height != tir.height) throw FormatError("tracker: RGB/TIR frame sizes differ");
    if (rgb.channels != 3 || tir.channels != 1) throw FormatError("tracker: expected 3-channel RGB and 1-channel TIR");
  }

  const ModelParams<T>& params_;
  RunConfig cfg_;
  TrackerState<T> state_;
};

template <typename T>
std::vector<BBox> run_tracker(const ModelParams<T>& params, const RunConfig& cfg, const SequenceRecord& seq,
                              std::vector<FrameRecord<T>>* records = nullptr) {
  if (seq.size() == 0) throw FormatError("run_tracker: empty sequence");
  Tracker<T> tracker(params, cfg);
  std::vector<BBox> boxes;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    auto rec = i == 0 ? tracker.init(seq.rgb[0], seq.tir[0], seq.gt[0]) : tracker.step(seq.rgb[i], seq.tir[i]);
    boxes.push_back(rec.box);
    if (records) records->push_back(std::move(rec));
  }
  return boxes;
}

}  // namespace cadtrack
