#pragma once

// Per-frame diagnostic dumps: score map and gate maps as 8-bit graymaps
// (min-max scaled) next to CSV files with the raw values, router scores and
// expert selections, and the template sampling offsets.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>

#include "cadtrack/harness/image_io.hpp"
#include "cadtrack/harness/tracker.hpp"

namespace cadtrack {

inline const char* modality_name(std::size_t m) { return m == 0 ? "rgb" : "tir"; }

/// Extrema of a map and its 8-bit rendering: round(255 (v - lo) / (hi - lo)),
/// all zeros for a constant map.
struct Graymap {
  Image image;
  double lo = 0, hi = 0;
};

template <typename T>
Graymap to_graymap(const Tensor<T>& map, std::size_t height, std::size_t width) {
  if (map.numel() != height * width) throw dim_error("to_graymap", map.shape(), Shape{height, width});
  Graymap gm;
  gm.image = Image(width, height, 1);
  gm.lo = std::numeric_limits<double>::infinity();
  gm.hi = -gm.lo;
  for (auto v : map.values()) {
    gm.lo = std::min(gm.lo, static_cast<double>(v));
    gm.hi = std::max(gm.hi, static_cast<double>(v));
  }
  const double span = gm.hi - gm.lo;
  for (std::size_t i = 0; i < map.numel(); ++i) {
    const double u = span > 0 ? (static_cast<double>(map[i]) - gm.lo) / span : 0.0;
    gm.image.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * u));
  }
  return gm;
}

struct DumpSummary {
  std::vector<std::string> files;
  double score_min = 0, score_max = 0;
};

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

template <typename T>
void write_map_csv(const std::filesystem::path& p, const Tensor<T>& map, std::size_t width) {
  auto out = open_csv(p);
  out << "row,col,value\n";
  for (std::size_t i = 0; i < map.numel(); ++i) out << i / width << "," << i % width << "," << static_cast<double>(map[i]) << "\n";
}

}  // namespace detail

/// Writes one frame's maps into out_dir (created if missing). Frame 1 is the
/// initialization frame and carries no maps.
template <typename T>
DumpSummary dump_maps(const FrameRecord<T>& rec, std::size_t frame, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (rec.score_map.numel() == 0) throw std::invalid_argument("dump_maps: frame has no score map (initialization frame?)");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw std::runtime_error("dump_maps: cannot create " + out_dir.string());

  std::ostringstream stem_s;
  stem_s << "frame_" << std::setw(6) << std::setfill('0') << frame;
  const std::string stem = stem_s.str();
  const std::size_t hs = rec.score_map.dim(0), ws = rec.score_map.dim(1);
  DumpSummary sum;
  auto emit = [&](const fs::path& p) { sum.files.push_back(p.string()); };

  const auto score = to_graymap(rec.score_map, hs, ws);
  sum.score_min = score.lo;
  sum.score_max = score.hi;
  write_netpbm((out_dir / (stem + "_score.pgm")).string(), score.image);
  emit(out_dir / (stem + "_score.pgm"));
  detail::write_map_csv(out_dir / (stem + "_score.csv"), rec.score_map, ws);
  emit(out_dir / (stem + "_score.csv"));

  {
    auto ranges = detail::open_csv(out_dir / (stem + "_ranges.csv"));
    ranges << "map,min,max\n" << "score," << score.lo << "," << score.hi << "\n";
    for (std::size_t m = 0; m < 2; ++m) {
      const auto& gate = rec.diag.gate[m];
      if (gate.numel() == 0) continue;
      const auto gm = to_graymap(gate, hs, ws);
      const std::string name = stem + "_gate_" + modality_name(m);
      write_netpbm((out_dir / (name + ".pgm")).string(), gm.image);
      emit(out_dir / (name + ".pgm"));
      detail::write_map_csv(out_dir / (name + ".csv"), gate, ws);
      emit(out_dir / (name + ".csv"));
      ranges << "gate_" << modality_name(m) << "," << gm.lo << "," << gm.hi << "\n";
    }
    emit(out_dir / (stem + "_ranges.csv"));
  }

  {
    auto router = detail::open_csv(out_dir / (stem + "_router.csv"));
    router << "modality,layer,score,selected\n";
    for (std::size_t m = 0; m < 2; ++m) {
      const auto& s = rec.diag.router_scores[m];
      const auto& e = rec.diag.experts[m];
      for (std::size_t l = 0; l < s.numel(); ++l) {
        const bool sel = std::find(e.begin(), e.end(), l + 1) != e.end();
        router << modality_name(m) << "," << l + 1 << "," << static_cast<double>(s[l]) << "," << (sel ? 1 : 0) << "\n";
      }
    }
    emit(out_dir / (stem + "_router.csv"));
  }

  {
    auto off = detail::open_csv(out_dir / (stem + "_offsets.csv"));
    off << "modality,template,row,col,dx,dy\n";
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t k = 0; k < 2; ++k) {
        const auto& o = rec.diag.offsets[m][k];
        if (o.numel() == 0) continue;
        for (std::size_t i = 0; i < o.dim(0); ++i)
          for (std::size_t j = 0; j < o.dim(1); ++j)
            off << modality_name(m) << "," << (k == 0 ? "initial" : "dynamic") << "," << i << "," << j << ","
                << static_cast<double>(o.at(i, j, 0)) << "," << static_cast<double>(o.at(i, j, 1)) << "\n";
      }
    emit(out_dir / (stem + "_offsets.csv"));
  }
  return sum;
}

/// One row per (frame, modality): the selected layers, ';'-separated.
template <typename T>
void write_router_trace(const std::filesystem::path& path, const std::vector<FrameRecord<T>>& records) {
  auto out = detail::open_csv(path);
  out << "frame,modality,selected_layers\n";
  for (std::size_t f = 0; f < records.size(); ++f)
    for (std::size_t m = 0; m < 2; ++m) {
      const auto& e = records[f].diag.experts[m];
      if (e.empty()) continue;
      out << f + 1 << "," << modality_name(m) << ",";
      for (std::size_t i = 0; i < e.size(); ++i) out << (i ? ";" : "") << e[i];
      out << "\n";
    }
}

}  // namespace cadtrack
