#pragma once

// Square crops around a box center, resized bilinearly and normalized to
// pixel/255 - 0.5. Regions outside the frame take the per-channel frame mean.

#include "cadtrack/harness/image_io.hpp"
#include "cadtrack/head.hpp"

namespace cadtrack {

/// Frame-space square [x0, x0+side) x [y0, y0+side) resampled to out x out.
struct CropWindow {
  double x0 = 0, y0 = 0, side = 1;
  std::size_t out = 1;

  double scale() const { return side / static_cast<double>(out); }

  static CropWindow around(double cx, double cy, double side, std::size_t out) {
    return {cx - side / 2, cy - side / 2, side, out};
  }
};

inline double box_extent(const BBox& b) { return std::sqrt(std::max(b.w * b.h, 1e-6)); }

inline BBox box_to_crop(const BBox& b, const CropWindow& win) {
  const double s = win.scale();
  return {(b.x - win.x0) / s, (b.y - win.y0) / s, b.w / s, b.h / s, b.score};
}

inline BBox box_from_crop(const BBox& b, const CropWindow& win) {
  const double s = win.scale();
  return {win.x0 + b.x * s, win.y0 + b.y * s, b.w * s, b.h * s, b.score};
}

/// Clips to [0,W]x[0,H] while keeping a positive extent.
inline BBox clip_box(BBox b, double width, double height) {
  const double min_side = 1e-3;
  const double x0 = std::clamp(b.x, 0.0, width - min_side), y0 = std::clamp(b.y, 0.0, height - min_side);
  const double x1 = std::clamp(b.x + b.w, x0 + min_side, width), y1 = std::clamp(b.y + b.h, y0 + min_side, height);
  return {x0, y0, x1 - x0, y1 - y0, b.score};
}

template <typename T>
Tensor<T> crop_image(const Image& img, const CropWindow& win) {
  const std::size_t w = img.width, h = img.height, ch = img.channels;
  std::vector<double> mean(ch, 0.0);
  for (std::size_t i = 0; i < w * h; ++i)
    for (std::size_t c = 0; c < ch; ++c) mean[c] += img.pixels[i * ch + c];
  for (auto& m : mean) m /= static_cast<double>(w * h);

  Tensor<T> out({3, win.out, win.out});
  const double s = win.scale();
  std::vector<double> px(ch);
  for (std::size_t v = 0; v < win.out; ++v)
    for (std::size_t u = 0; u < win.out; ++u) {
      const double fx = win.x0 + (static_cast<double>(u) + 0.5) * s;
      const double fy = win.y0 + (static_cast<double>(v) + 0.5) * s;
      if (fx < 0 || fy < 0 || fx > static_cast<double>(w) || fy > static_cast<double>(h)) {
        px = mean;
      } else {
        const double sx = std::clamp(fx - 0.5, 0.0, static_cast<double>(w - 1));
        const double sy = std::clamp(fy - 0.5, 0.0, static_cast<double>(h - 1));
        const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
        const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const double ax = sx - static_cast<double>(x0), ay = sy - static_cast<double>(y0);
        for (std::size_t c = 0; c < ch; ++c) {
          px[c] = (1 - ay) * ((1 - ax) * img.at(y0, x0, c) + ax * img.at(y0, x1, c)) +
                  ay * ((1 - ax) * img.at(y1, x0, c) + ax * img.at(y1, x1, c));
        }
      }
      for (std::size_t c = 0; c < 3; ++c) out.at(c, v, u) = static_cast<T>(px[ch == 1 ? 0 : c] / 255.0 - 0.5);
    }
  return out;
}

}  // namespace cadtrack
