#pragma once

// Glue shared by the CLI and the acceptance runner: sequence acquisition and
// the files written by a tracking run.

#include "cadtrack/harness/diagnostics.hpp"
#include "cadtrack/harness/metrics.hpp"
#include "cadtrack/harness/train.hpp"

namespace cadtrack {

inline GenOptions gen_options_for(const RunConfig& cfg) {
  GenOptions o;
  o.seed = cfg.seed;
  o.frames = cfg.frames;
  o.frame_side = cfg.frame_side;
  o.motion = parse_motion_model(cfg.motion_model);
  o.misalignment_px = cfg.misalignment_px;
  return o;
}

/// The sequence named in the config, or a generated one.
inline SequenceRecord acquire_sequence(const RunConfig& cfg) {
  return cfg.sequence.empty() ? gen_sequence(gen_options_for(cfg)) : load_sequence(cfg.sequence);
}

inline void write_metrics_json(const std::filesystem::path& path, const TrackMetrics& m) {
  nlohmann::ordered_json j;
  j["frames"] = m.frames;
  j["mean_iou"] = m.mean_iou;
  j["precision_20px"] = m.precision_20px;
  j["success_auc"] = m.success_auc;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

/// pred.txt ("frame x y w h score"), router_trace.csv, and metrics.json when
/// ground truth is available.
template <typename T>
TrackMetrics write_track_outputs(const std::filesystem::path& dir, const std::vector<BBox>& boxes,
                                 const std::vector<FrameRecord<T>>& records, const std::vector<BBox>& gt) {
  std::filesystem::create_directories(dir);
  write_boxes((dir / "pred.txt").string(), boxes, true);
  write_router_trace(dir / "router_trace.csv", records);
  TrackMetrics m;
  if (gt.size() == boxes.size()) {
    m = eval_metrics(boxes, gt);
    write_metrics_json(dir / "metrics.json", m);
  }
  return m;
}

}  // namespace cadtrack
