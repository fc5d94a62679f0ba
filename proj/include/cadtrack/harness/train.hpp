#pragma once

// Overfit loop: cycles through frames 2..F of one sequence, crops a jittered
// search region around the ground truth, and minimizes the head loss.

#include <chrono>
#include <filesystem>
#include <numbers>
#include <ostream>

#include "cadtrack/harness/tracker.hpp"
#include "cadtrack/harness/weights.hpp"

namespace cadtrack {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam or plain SGD over every tensor reached by ModelParams::visit, with
/// optional global gradient-norm clipping. Tensors that never receive a
/// gradient (running statistics) stay unchanged.
template <typename T>
class Optimizer {
 public:
  Optimizer(std::string kind, double clip_norm = 0) : kind_(std::move(kind)), clip_norm_(clip_norm) {
    if (kind_ != "adam" && kind_ != "sgd") throw ConfigError("optimizer must be adam or sgd");
  }

  /// Returns the gradient norm before clipping. Throws TrainingDiverged
  /// before touching any parameter if that norm is not finite.
  template <typename P>
  double step(P& params, const Graph<T>& g, double lr) {
    std::vector<Tensor<T>*> ps;
    std::vector<Tensor<T>> grads;
    double sq = 0;
    params.visit(
        [&](const std::string&, Tensor<T>& p) {
          ps.push_back(&p);
          grads.push_back(g.param_grad(p));
          for (auto v : grads.back().values()) sq += static_cast<double>(v) * static_cast<double>(v);
        },
        "");
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw TrainingDiverged("optimizer: non-finite gradient norm");
    const double factor = clip_norm_ > 0 && norm > clip_norm_ ? clip_norm_ / norm : 1.0;
    ++t_;
    if (m_.empty()) {
      for (auto* p : ps) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < ps.size(); ++k) {
      auto& p = *ps[k];
      const auto& grad = grads[k];
      if (kind_ == "sgd") {
        for (std::size_t i = 0; i < p.numel(); ++i) p[i] -= static_cast<T>(lr * factor * static_cast<double>(grad[i]));
        continue;
      }
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const T gi = static_cast<T>(factor * static_cast<double>(grad[i]));
        m[i] = static_cast<T>(beta1) * m[i] + static_cast<T>(1 - beta1) * gi;
        v[i] = static_cast<T>(beta2) * v[i] + static_cast<T>(1 - beta2) * gi * gi;
        const double mh = static_cast<double>(m[i]) / c1, vh = static_cast<double>(v[i]) / c2;
        p[i] -= static_cast<T>(lr * mh / (std::sqrt(vh) + eps));
      }
    }
    return norm;
  }

 private:
  static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::string kind_;
  double clip_norm_;
  std::size_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

/// Cosine decay from base to 0.05 * base over `total` steps.
inline double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total <= 1) return base;
  const double t = static_cast<double>(step) / static_cast<double>(total - 1);
  return base * (0.05 + 0.95 * 0.5 * (1 + std::cos(std::numbers::pi * t)));
}

struct StepLog {
  std::size_t step = 0, frame = 0;
  double lr = 0, loss = 0, focal = 0, l1 = 0, giou = 0, grad_norm = 0;
};

struct TrainReport {
  std::vector<StepLog> log;
  double seconds = 0;
};

template <typename T>
std::array<Tensor<T>, 2> detached(const std::array<Var<T>, 2>& v) {
  return {v[0].value(), v[1].value()};
}

/// Runs cfg.steps updates in place. Writes one CSV row per step to loss_csv
/// when given. Throws TrainingDiverged on a non-finite loss.
template <typename T>
TrainReport train_overfit(ModelParams<T>& params, const RunConfig& cfg, const SequenceRecord& seq,
                          std::ostream* loss_csv = nullptr) {
  if (seq.size() < 2) throw std::invalid_argument("train_overfit: need at least 2 frames");
  const auto start = std::chrono::steady_clock::now();
  const auto& bc = cfg.model.backbone;
  const double search_px = static_cast<double>(bc.search_side);
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + 1);
  Optimizer<T> opt(cfg.optimizer, cfg.grad_clip);
  const auto z0 = crop_pair<T>(seq.rgb[0], seq.tir[0], template_window(seq.gt[0], cfg));
  const auto freeze_step = static_cast<std::size_t>(std::llround(cfg.bn_freeze_fraction * static_cast<double>(cfg.steps)));

  TrainReport report;
  if (loss_csv) *loss_csv << "step,frame,lr,loss,focal,l1,giou,grad_norm\n";
  std::array<Tensor<T>, 2> carried;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const std::size_t idx = 1 + s % (seq.size() - 1);
    const BBox& gt = seq.gt[idx];
    const double side = cfg.search_factor * box_extent(gt) * rng.uniform(1 - cfg.jitter_scale, 1 + cfg.jitter_scale);
    const double cx = gt.cx() + rng.uniform(-cfg.jitter_shift, cfg.jitter_shift) * side;
    const double cy = gt.cy() + rng.uniform(-cfg.jitter_shift, cfg.jitter_shift) * side;
    const auto win = CropWindow::around(cx, cy, side, bc.search_side);
    FrameImages<T> img{z0, z0, crop_pair<T>(seq.rgb[idx], seq.tir[idx], win)};

    Graph<T> g;
    auto cue = idx == 1 ? initial_cue(g, params) : constant_cue(g, carried);
    const NormMode mode = s < freeze_step ? NormMode::batch : NormMode::running;
    BatchStats<T> stats;
    auto out = forward_frame(g, img, cue, params, cfg.model, mode, &stats);
    auto loss = head_loss(g, out.maps, box_to_crop(gt, win), search_px);
    const double lv = static_cast<double>(loss.total.value().item());
    if (!std::isfinite(lv)) {
      throw TrainingDiverged("train_overfit: loss became " + std::to_string(lv) + " at step " + std::to_string(s) +
                             " (frame " + std::to_string(idx + 1) + "); lower learning_rate");
    }
    g.backward(loss.total);
    const double lr = cosine_lr(cfg.learning_rate, s, cfg.steps);
    const double grad_norm = opt.step(params, g, lr);
    if (mode == NormMode::batch) update_running_stats(params.head, stats);
    carried = detached(out.cue_next);

    StepLog row{s, idx + 1, lr, lv, loss.focal, loss.l1, loss.giou, grad_norm};
    report.log.push_back(row);
    if (loss_csv) {
      *loss_csv << row.step << "," << row.frame << "," << row.lr << "," << row.loss << "," << row.focal << ","
                << row.l1 << "," << row.giou << "," << row.grad_norm << "\n";
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace cadtrack
