#pragma once

// Synthetic paired RGB/TIR sequences and their on-disk layout:
//   DIR/rgb/000001.ppm, DIR/tir/000001.pgm, DIR/gt.txt ("frame x y w h").

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "cadtrack/harness/image_io.hpp"
#include "cadtrack/head.hpp"
#include "cadtrack/rng.hpp"

namespace cadtrack {

struct SequenceRecord {
  std::vector<Image> rgb, tir;
  std::vector<BBox> gt;                                   // RGB-frame boxes, score unused
  std::vector<std::pair<double, double>> misalignment;    // TIR shift (dx, dy) per frame, if known

  std::size_t size() const { return gt.size(); }
  std::size_t width() const { return rgb.empty() ? 0 : rgb.front().width; }
  std::size_t height() const { return rgb.empty() ? 0 : rgb.front().height; }
};

enum class MotionModel { drift, random_walk };

inline MotionModel parse_motion_model(const std::string& s) {
  if (s == "drift") return MotionModel::drift;
  if (s == "random_walk") return MotionModel::random_walk;
  throw std::invalid_argument("motion model must be drift or random_walk");
}

struct GenOptions {
  std::uint64_t seed = 1;
  std::size_t frames = 20;
  std::size_t frame_side = 128;
  MotionModel motion = MotionModel::drift;
  double misalignment_px = 2.0;
};

namespace detail {

inline double quarter(double v) { return std::round(v * 4.0) / 4.0; }

inline std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

struct Grating {
  double fx, fy, phase, amp;
};

inline double eval_gratings(const std::vector<Grating>& gs, double x, double y) {
  double s = 0;
  for (const auto& g : gs) s += g.amp * std::sin(g.fx * x + g.fy * y + g.phase);
  return s;
}

inline std::vector<Grating> make_gratings(Rng& rng, std::size_t n, double amp) {
  std::vector<Grating> gs;
  for (std::size_t i = 0; i < n; ++i) {
    const double freq = rng.uniform(0.05, 0.35), ang = rng.uniform(0, 2 * std::numbers::pi);
    gs.push_back({freq * std::cos(ang), freq * std::sin(ang), rng.uniform(0, 2 * std::numbers::pi), amp / n});
  }
  return gs;
}

/// Fraction of pixel column [px, px+1) covered by [a, b).
inline double coverage(double px, double a, double b) {
  return std::clamp(std::min(px + 1, b) - std::max(px, a), 0.0, 1.0);
}

}  // namespace detail

/// Textured dark target on structured noise in RGB; bright elliptical blob in
/// TIR, with the whole TIR view shifted by a slowly rotating vector of length
/// misalignment_px. Boxes and shifts are quantized to 1/4 px.
inline SequenceRecord gen_sequence(const GenOptions& opt) {
  if (opt.frames < 2) throw std::invalid_argument("gen_sequence: frames must be at least 2");
  if (opt.frame_side < 32) throw std::invalid_argument("gen_sequence: frame_side must be at least 32");
  Rng rng(opt.seed);
  const double side = static_cast<double>(opt.frame_side);
  const double scale = side / 128.0;

  std::array<std::vector<detail::Grating>, 3> rgb_bg;
  for (auto& g : rgb_bg) g = detail::make_gratings(rng, 3, 70.0);
  std::array<double, 3> rgb_base{rng.uniform(110, 150), rng.uniform(110, 150), rng.uniform(110, 150)};
  auto tir_bg = detail::make_gratings(rng, 2, 30.0);
  const std::array<double, 3> target_color{rng.uniform(20, 50), rng.uniform(20, 50), rng.uniform(60, 100)};

  const double w = detail::quarter(rng.uniform(14, 18) * scale), h = detail::quarter(rng.uniform(12, 16) * scale);
  double x = detail::quarter(rng.uniform(side / 4, 3 * side / 4 - w));
  double y = detail::quarter(rng.uniform(side / 4, 3 * side / 4 - h));
  const double speed = 1.0 * scale, heading = rng.uniform(0, 2 * std::numbers::pi);
  double vx = speed * std::cos(heading), vy = speed * std::sin(heading);
  const double mis_phase = rng.uniform(0, 2 * std::numbers::pi);

  SequenceRecord seq;
  for (std::size_t t = 0; t < opt.frames; ++t) {
    if (t > 0) {
      if (opt.motion == MotionModel::drift) {
        const double turn = rng.normal(0, 0.05);
        const double c = std::cos(turn), s = std::sin(turn);
        std::tie(vx, vy) = std::pair{c * vx - s * vy, s * vx + c * vy};
      } else {
        vx = std::clamp(vx + rng.normal(0, 0.5 * scale), -2 * scale, 2 * scale);
        vy = std::clamp(vy + rng.normal(0, 0.5 * scale), -2 * scale, 2 * scale);
      }
      x += vx;
      y += vy;
      if (x < 0) { x = -x; vx = -vx; }
      if (y < 0) { y = -y; vy = -vy; }
      if (x + w > side) { x = 2 * (side - w) - x; vx = -vx; }
      if (y + h > side) { y = 2 * (side - h) - y; vy = -vy; }
      x = std::clamp(detail::quarter(x), 0.0, side - w);
      y = std::clamp(detail::quarter(y), 0.0, side - h);
    }
    const double ang = mis_phase + 0.05 * static_cast<double>(t);
    const double mx = detail::quarter(opt.misalignment_px * std::cos(ang));
    const double my = detail::quarter(opt.misalignment_px * std::sin(ang));

    Image rgb(opt.frame_side, opt.frame_side, 3), tir(opt.frame_side, opt.frame_side, 1);
    const double cx = x + w / 2, cy = y + h / 2;
    for (std::size_t py = 0; py < opt.frame_side; ++py)
      for (std::size_t px = 0; px < opt.frame_side; ++px) {
        const double fx = static_cast<double>(px), fy = static_cast<double>(py);
        const double alpha = detail::coverage(fx, x, x + w) * detail::coverage(fy, y, y + h);
        // texture moves with the target
        const bool check = (static_cast<long>(std::floor((fx - x) / (3 * scale))) +
                            static_cast<long>(std::floor((fy - y) / (3 * scale)))) % 2 == 0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double bg = rgb_base[c] + detail::eval_gratings(rgb_bg[c], fx, fy) + rng.normal(0, 6);
          const double fg = target_color[c] + (check ? 25.0 : -10.0);
          rgb.at(py, px, c) = detail::to_u8((1 - alpha) * bg + alpha * fg);
        }
        // TIR view translated by (mx, my)
        const double sx = fx + 0.5 - mx, sy = fy + 0.5 - my;
        const double bg = 70 + detail::eval_gratings(tir_bg, sx, sy) + rng.normal(0, 3);
        const double ex = (sx - cx) / (w / 2), ey = (sy - cy) / (h / 2);
        const double d = ex * ex + ey * ey;
        const double blob = std::clamp((1.15 - d) / 0.3, 0.0, 1.0);
        tir.at(py, px) = detail::to_u8((1 - blob) * bg + blob * (215 - 25 * d));
      }
    seq.rgb.push_back(std::move(rgb));
    seq.tir.push_back(std::move(tir));
    seq.gt.push_back(BBox{x, y, w, h, 1.0});
    seq.misalignment.emplace_back(mx, my);
  }
  return seq;
}

inline std::string frame_name(std::size_t index1, const char* ext) {
  std::ostringstream s;
  s << std::setw(6) << std::setfill('0') << index1 << ext;
  return s.str();
}

inline void write_boxes(const std::string& path, const std::vector<BBox>& boxes, bool with_score = false) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << std::setprecision(17);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    out << i + 1 << " " << boxes[i].x << " " << boxes[i].y << " " << boxes[i].w << " " << boxes[i].h;
    if (with_score) out << " " << boxes[i].score;
    out << "\n";
  }
}

inline std::vector<BBox> read_boxes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<BBox> boxes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream s(line);
    std::size_t frame = 0;
    BBox b;
    if (!(s >> frame >> b.x >> b.y >> b.w >> b.h)) throw FormatError(path + ": malformed line '" + line + "'");
    if (frame != boxes.size() + 1) throw FormatError(path + ": frames must be consecutive from 1");
    s >> b.score;
    boxes.push_back(b);
  }
  return boxes;
}

inline void save_sequence(const SequenceRecord& seq, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "rgb");
  fs::create_directories(fs::path(dir) / "tir");
  for (std::size_t i = 0; i < seq.size(); ++i) {
    write_netpbm((fs::path(dir) / "rgb" / frame_name(i + 1, ".ppm")).string(), seq.rgb[i]);
    write_netpbm((fs::path(dir) / "tir" / frame_name(i + 1, ".pgm")).string(), seq.tir[i]);
  }
  write_boxes((fs::path(dir) / "gt.txt").string(), seq.gt);
  if (!seq.misalignment.empty()) {
    std::ofstream out(fs::path(dir) / "misalignment.csv");
    out << "frame,dx,dy\n" << std::setprecision(17);
    for (std::size_t i = 0; i < seq.misalignment.size(); ++i)
      out << i + 1 << "," << seq.misalignment[i].first << "," << seq.misalignment[i].second << "\n";
  }
}

inline SequenceRecord load_sequence(const std::string& dir) {
  namespace fs = std::filesystem;
  SequenceRecord seq;
  seq.gt = read_boxes((fs::path(dir) / "gt.txt").string());
  for (std::size_t i = 0; i < seq.gt.size(); ++i) {
    seq.rgb.push_back(read_netpbm((fs::path(dir) / "rgb" / frame_name(i + 1, ".ppm")).string()));
    seq.tir.push_back(read_netpbm((fs::path(dir) / "tir" / frame_name(i + 1, ".pgm")).string()));
    const auto& r = seq.rgb.back();
    const auto& t = seq.tir.back();
    if (r.channels != 3 || t.channels != 1) throw FormatError(dir + ": frame " + std::to_string(i + 1) + " has wrong channel count");
    if (r.width != t.width || r.height != t.height) {
      throw FormatError(dir + ": RGB/TIR size mismatch at frame " + std::to_string(i + 1));
    }
    if (r.width != seq.rgb.front().width || r.height != seq.rgb.front().height) {
      throw FormatError(dir + ": frame size changes at frame " + std::to_string(i + 1));
    }
  }
  if (seq.gt.size() < 2) throw FormatError(dir + ": need at least 2 frames");
  return seq;
}

}  // namespace cadtrack
