#pragma once

// Hyperspectral cube and label-map containers, their binary on-disk formats,
// per-band standardization, and labeled-pixel sampling.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mdgcn/errors.hpp"
#include "mdgcn/rng.hpp"

namespace mdgcn {

// Pixel spectra, one pixel per row (row-major pixel order), one band per column.
using SpectraMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DataCube {
  int height = 0;
  int width = 0;
  SpectraMatrix spectra;  // (height*width) x bands

  int bands() const { return static_cast<int>(spectra.cols()); }
  int pixels() const { return height * width; }
  int pixel_index(int row, int col) const { return row * width + col; }

  double at(int row, int col, int band) const {
    return spectra(pixel_index(row, col), band);
  }
  double& at(int row, int col, int band) {
    return spectra(pixel_index(row, col), band);
  }

  void validate() const {
    if (height < 1 || width < 1 || bands() < 1) {
      throw DataError("cube dimensions must all be at least 1");
    }
    if (spectra.rows() != static_cast<Eigen::Index>(pixels())) {
      throw DataError("cube spectra row count does not match height*width");
    }
    if (!spectra.allFinite()) {
      throw DataError("cube contains non-finite values");
    }
  }
};

struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> labels;  // row-major, 0 = unlabeled

  std::uint16_t at(int row, int col) const { return labels[row * width + col]; }

  // Highest class index present; classes are 1..C, 0 marks unlabeled pixels.
  int num_classes() const {
    std::uint16_t c = 0;
    for (std::uint16_t v : labels) c = std::max(c, v);
    return c;
  }

  // Classes must be contiguous from 1: no gaps in 1..C.
  void validate() const {
    if (height < 1 || width < 1) throw DataError("label map dimensions must be at least 1");
    if (labels.size() != static_cast<std::size_t>(height) * width) {
      throw DataError("label count does not match height*width");
    }
    const int c = num_classes();
    std::vector<long> counts(static_cast<std::size_t>(c) + 1, 0);
    for (std::uint16_t v : labels) ++counts[v];
    for (int k = 1; k <= c; ++k) {
      if (counts[k] == 0) {
        throw DataError("class indices are not contiguous: class " + std::to_string(k) +
                        " has no pixels");
      }
    }
  }
};

struct LabeledPixel {
  int row = 0;
  int col = 0;
  int cls = 0;
};

struct SplitSpec {
  std::vector<LabeledPixel> train_pixels;
  std::vector<LabeledPixel> validation_pixels;
  std::uint64_t seed = 0;
};

namespace detail {

inline void write_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* data, std::size_t n, const char* what) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError(std::string("truncated ") + what);
  }
}

inline void write_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  write_bytes(os, b, 2);
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  write_bytes(os, b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  write_bytes(os, b, 8);
}

inline std::uint16_t read_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  read_bytes(is, b, 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_bytes(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  read_bytes(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f32(std::ostream& os, float v) {
  write_u32(os, std::bit_cast<std::uint32_t>(v));
}

inline float read_f32(std::istream& is, const char* what) {
  return std::bit_cast<float>(read_u32(is, what));
}

inline void write_f64(std::ostream& os, double v) {
  write_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline double read_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(read_u64(is, what));
}

inline void expect_eof(std::istream& is, const std::string& path) {
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing data after payload in " + path);
  }
}

}  // namespace detail

// Cube file: "HSIC" | H,W,B u32 LE | H*W*B f32 LE, band-sequential
// (all of band 0 row-major, then band 1, ...).
inline DataCube load_cube(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open cube file: " + path);
  char magic[4];
  detail::read_bytes(in, magic, 4, "cube header");
  if (std::memcmp(magic, "HSIC", 4) != 0) {
    throw FormatError("bad magic in cube file: " + path);
  }
  const std::uint32_t h = detail::read_u32(in, "cube header");
  const std::uint32_t w = detail::read_u32(in, "cube header");
  const std::uint32_t b = detail::read_u32(in, "cube header");
  if (h == 0 || w == 0 || b == 0) {
    throw DataError("cube file declares a zero dimension: " + path);
  }

  DataCube cube;
  cube.height = static_cast<int>(h);
  cube.width = static_cast<int>(w);
  const std::size_t n_pixels = static_cast<std::size_t>(h) * w;
  cube.spectra.resize(static_cast<Eigen::Index>(n_pixels), static_cast<Eigen::Index>(b));

  std::vector<unsigned char> buf(n_pixels * 4);
  for (std::uint32_t band = 0; band < b; ++band) {
    detail::read_bytes(in, buf.data(), buf.size(), "cube payload");
    for (std::size_t p = 0; p < n_pixels; ++p) {
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(buf[4 * p + i]) << (8 * i);
      const float v = std::bit_cast<float>(bits);
      if (!std::isfinite(v)) {
        throw DataError("non-finite value in cube file: " + path);
      }
      cube.spectra(static_cast<Eigen::Index>(p), band) = v;
    }
  }
  detail::expect_eof(in, path);
  return cube;
}

inline void save_cube(const DataCube& cube, const std::string& path) {
  cube.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open cube file for writing: " + path);
  detail::write_bytes(out, "HSIC", 4);
  detail::write_u32(out, static_cast<std::uint32_t>(cube.height));
  detail::write_u32(out, static_cast<std::uint32_t>(cube.width));
  detail::write_u32(out, static_cast<std::uint32_t>(cube.bands()));
  for (int band = 0; band < cube.bands(); ++band) {
    for (int p = 0; p < cube.pixels(); ++p) {
      detail::write_f32(out, static_cast<float>(cube.spectra(p, band)));
    }
  }
  if (!out) throw FormatError("failed writing cube file: " + path);
}

// Label file: "HSIL" | H,W u32 LE | H*W u16 LE, row-major.
inline LabelMap load_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open label file: " + path);
  char magic[4];
  detail::read_bytes(in, magic, 4, "label header");
  if (std::memcmp(magic, "HSIL", 4) != 0) {
    throw FormatError("bad magic in label file: " + path);
  }
  const std::uint32_t h = detail::read_u32(in, "label header");
  const std::uint32_t w = detail::read_u32(in, "label header");
  if (h == 0 || w == 0) throw DataError("label file declares a zero dimension: " + path);

  LabelMap map;
  map.height = static_cast<int>(h);
  map.width = static_cast<int>(w);
  map.labels.resize(static_cast<std::size_t>(h) * w);
  for (auto& v : map.labels) v = detail::read_u16(in, "label payload");
  detail::expect_eof(in, path);
  map.validate();
  return map;
}

inline LabelMap load_labels(const std::string& path, const DataCube& cube) {
  LabelMap map = load_labels(path);
  if (map.height != cube.height || map.width != cube.width) {
    throw DataError("label map dimensions do not match cube: " + path);
  }
  return map;
}

inline void save_labels(const LabelMap& map, const std::string& path) {
  map.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open label file for writing: " + path);
  detail::write_bytes(out, "HSIL", 4);
  detail::write_u32(out, static_cast<std::uint32_t>(map.height));
  detail::write_u32(out, static_cast<std::uint32_t>(map.width));
  for (std::uint16_t v : map.labels) detail::write_u16(out, v);
  if (!out) throw FormatError("failed writing label file: " + path);
}

// Per-band z-score over all pixels (population standard deviation).
// Constant bands map to all-zero.
inline DataCube standardize(const DataCube& cube) {
  cube.validate();
  DataCube out = cube;
  const double n = static_cast<double>(cube.pixels());
  for (int band = 0; band < cube.bands(); ++band) {
    auto col = out.spectra.col(band);
    if (col.maxCoeff() == col.minCoeff()) {
      col.setZero();
      continue;
    }
    const double mean = col.mean();
    col.array() -= mean;
    const double stddev = std::sqrt(col.squaredNorm() / n);
    col /= stddev;
  }
  return out;
}

// Draws per-class training/validation pixels without replacement.
// A class with fewer than per_class labeled pixels contributes
// ceil(per_class/2) draws (capped at its count). The draw is split
// val_fraction into validation, at least one pixel on each side.
inline SplitSpec sample_training_pixels(const LabelMap& labels, int per_class,
                                        double val_fraction, std::uint64_t seed) {
  labels.validate();
  if (per_class < 2) throw InvalidArgument("per_class must be at least 2");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw InvalidArgument("val_fraction must lie in [0, 1)");
  }

  const int num_classes = labels.num_classes();
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(num_classes) + 1);
  for (int p = 0; p < labels.height * labels.width; ++p) {
    const std::uint16_t c = labels.labels[p];
    if (c > 0) by_class[c].push_back(p);
  }
  for (int c = 1; c <= num_classes; ++c) {
    if (by_class[c].size() < 2) {
      throw InvalidArgument("class " + std::to_string(c) +
                            " has fewer than 2 labeled pixels");
    }
  }

  SplitSpec split;
  split.seed = seed;
  Rng rng(seed);
  for (int c = 1; c <= num_classes; ++c) {
    auto& pool = by_class[c];
    const int avail = static_cast<int>(pool.size());
    const int n_draw =
        avail >= per_class ? per_class : std::min(avail, (per_class + 1) / 2);
    shuffle(pool, rng);

    int n_val = static_cast<int>(std::lround(n_draw * val_fraction));
    n_val = std::clamp(n_val, 1, n_draw - 1);
    const int n_train = n_draw - n_val;

    for (int i = 0; i < n_draw; ++i) {
      const LabeledPixel px{pool[i] / labels.width, pool[i] % labels.width, c};
      (i < n_train ? split.train_pixels : split.validation_pixels).push_back(px);
    }
  }
  return split;
}

// Split file: text lines "row,col,class,role" with role in {train, val}.
inline void save_split(const SplitSpec& split, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open split file for writing: " + path);
  for (const auto& px : split.train_pixels) {
    out << px.row << ',' << px.col << ',' << px.cls << ",train\n";
  }
  for (const auto& px : split.validation_pixels) {
    out << px.row << ',' << px.col << ',' << px.cls << ",val\n";
  }
  if (!out) throw FormatError("failed writing split file: " + path);
}

inline SplitSpec load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open split file: " + path);
  SplitSpec split;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    LabeledPixel px;
    char c1 = 0, c2 = 0, c3 = 0;
    std::string role;
    if (!(ss >> px.row >> c1 >> px.col >> c2 >> px.cls >> c3) || c1 != ',' ||
        c2 != ',' || c3 != ',' || !std::getline(ss, role)) {
      throw FormatError("malformed split line " + std::to_string(line_no) + " in " + path);
    }
    if (role == "train") {
      split.train_pixels.push_back(px);
    } else if (role == "val") {
      split.validation_pixels.push_back(px);
    } else {
      throw FormatError("unknown role '" + role + "' in split file " + path);
    }
  }
  return split;
}

// Checks that every split pixel is in-bounds and labeled with its listed class.
inline void check_split(const SplitSpec& split, const LabelMap& labels) {
  auto check = [&](const LabeledPixel& px) {
    if (px.row < 0 || px.row >= labels.height || px.col < 0 || px.col >= labels.width) {
      throw InvalidArgument("split pixel outside the image");
    }
    if (labels.at(px.row, px.col) != px.cls) {
      throw InvalidArgument("split pixel class does not match the label map");
    }
  };
  for (const auto& px : split.train_pixels) check(px);
  for (const auto& px : split.validation_pixels) check(px);
}

}  // namespace mdgcn
