#pragma once

// Minimal binary PPM (P6) reader/writer used for rendered maps and overlays.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mdgcn/errors.hpp"

namespace mdgcn {

struct PpmImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

inline void save_ppm(const PpmImage& img, const std::string& path) {
  if (img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    throw InvalidArgument("PPM pixel buffer does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open image for writing: " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw FormatError("failed writing image: " + path);
}

inline PpmImage load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image: " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w < 1 || h < 1 || maxval != 255) {
    throw FormatError("unsupported PPM header in " + path);
  }
  in.get();  // single whitespace byte after maxval
  PpmImage img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.rgb.size()) {
    throw FormatError("truncated PPM payload in " + path);
  }
  return img;
}

}  // namespace mdgcn
