#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cadtrack/head.hpp"

namespace cadtrack {

inline double iou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double ih = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline double center_distance(const BBox& a, const BBox& b) { return std::hypot(a.cx() - b.cx(), a.cy() - b.cy()); }

struct TrackMetrics {
  double mean_iou = 0;
  double precision_20px = 0;  // PR@20px
  double success_auc = 0;     // SR-AUC
  std::size_t frames = 0;
};

/// Success is counted with IoU >= threshold at thresholds 0, 0.05, ..., 1.
inline TrackMetrics eval_metrics(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  if (pred.empty() || gt.empty()) throw std::invalid_argument("eval_metrics: empty input");
  if (pred.size() != gt.size()) throw std::invalid_argument("eval_metrics: prediction and ground truth lengths differ");
  const std::size_t n = pred.size();
  std::vector<double> ious(n);
  TrackMetrics m;
  m.frames = n;
  for (std::size_t i = 0; i < n; ++i) {
    ious[i] = iou(pred[i], gt[i]);
    m.mean_iou += ious[i];
    if (center_distance(pred[i], gt[i]) <= 20.0) m.precision_20px += 1;
  }
  m.mean_iou /= static_cast<double>(n);
  m.precision_20px /= static_cast<double>(n);
  constexpr int steps = 20;
  for (int k = 0; k <= steps; ++k) {
    const double thr = static_cast<double>(k) / steps;
    std::size_t ok = 0;
    for (double v : ious) ok += v >= thr - 1e-12 ? 1 : 0;
    m.success_auc += static_cast<double>(ok) / static_cast<double>(n);
  }
  m.success_auc /= steps + 1;
  return m;
}

}  // namespace cadtrack
