#pragma once

// Binary PPM (P6) and PGM (P5) with maxval 255.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cadtrack {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit image, row-major.
struct Image {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

inline std::size_t read_header_int(std::istream& in, const std::string& path) {
  int ch = in.peek();
  while (ch == ' ' || ch == '\n' || ch == '\r' || ch == '\t' || ch == '#') {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    ch = in.peek();
  }
  std::size_t v = 0;
  if (!(in >> v)) throw FormatError(path + ": malformed netpbm header");
  return v;
}

}  // namespace detail

inline Image read_netpbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  std::size_t channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw FormatError(path + ": expected P5 or P6 magic");
  const std::size_t w = detail::read_header_int(in, path);
  const std::size_t h = detail::read_header_int(in, path);
  const std::size_t maxval = detail::read_header_int(in, path);
  if (maxval != 255) throw FormatError(path + ": only maxval 255 is supported");
  if (w == 0 || h == 0) throw FormatError(path + ": empty image");
  in.get();  // single whitespace before the raster
  Image img(w, h, channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw FormatError(path + ": truncated raster");
  return img;
}

inline void write_netpbm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw FormatError("netpbm supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw FormatError("write failed for " + path);
}

}  // namespace cadtrack
