#pragma once

// Pixel-level evaluation: superpixel predictions fan out to their member
// pixels, metrics run over labeled pixels that were never used for training.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "mdgcn/cube.hpp"
#include "mdgcn/errors.hpp"
#include "mdgcn/ppm.hpp"
#include "mdgcn/superpixel.hpp"
#include "mdgcn/train.hpp"

namespace mdgcn {

struct EvalReport {
  // rows = true class - 1, cols = predicted class - 1
  std::vector<std::vector<std::int64_t>> confusion;
  std::vector<double> per_class_acc;  // NaN for classes absent from the test set
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
};

// Each superpixel takes the argmax of its probability row (ties -> smallest
// class index) and every member pixel inherits that class.
inline std::vector<std::uint16_t> predict_pixels(const ForwardTrace& trace,
                                                 const Segmentation& seg) {
  seg.validate();
  if (trace.probabilities.rows() != seg.num_superpixels) {
    throw InvalidArgument("probability rows do not match the superpixel count");
  }
  const std::vector<int> classes = argmax_classes(trace.probabilities);
  std::vector<std::uint16_t> pred(seg.assignment.size(), 0);
  for (std::size_t p = 0; p < seg.assignment.size(); ++p) {
    pred[p] = static_cast<std::uint16_t>(classes[seg.assignment[p]]);
  }
  return pred;
}

inline EvalReport evaluate(const std::vector<std::uint16_t>& pred, const LabelMap& truth,
                           const SplitSpec& exclude) {
  if (pred.size() != truth.labels.size()) {
    throw InvalidArgument("prediction map does not match the label map size");
  }
  const int classes = truth.num_classes();

  std::unordered_set<std::size_t> skip;
  auto mark = [&](const LabeledPixel& px) {
    if (px.row < 0 || px.row >= truth.height || px.col < 0 || px.col >= truth.width) {
      throw InvalidArgument("split pixel outside the image");
    }
    skip.insert(static_cast<std::size_t>(px.row) * truth.width + px.col);
  };
  for (const auto& px : exclude.train_pixels) mark(px);
  for (const auto& px : exclude.validation_pixels) mark(px);

  EvalReport report;
  report.confusion.assign(classes, std::vector<std::int64_t>(classes, 0));
  std::int64_t total = 0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const int truth_class = truth.labels[p];
    if (truth_class == 0 || skip.count(p)) continue;
    const int pred_class = pred[p];
    if (pred_class < 1 || pred_class > classes) {
      throw DataError("predicted class " + std::to_string(pred_class) +
                      " has no row in a " + std::to_string(classes) + "-class confusion matrix");
    }
    ++report.confusion[truth_class - 1][pred_class - 1];
    ++total;
  }
  if (total == 0) throw DataError("no test pixels left after exclusions");

  std::vector<std::int64_t> row_sum(classes, 0), col_sum(classes, 0);
  std::int64_t diag = 0;
  for (int t = 0; t < classes; ++t) {
    for (int y = 0; y < classes; ++y) {
      row_sum[t] += report.confusion[t][y];
      col_sum[y] += report.confusion[t][y];
    }
    diag += report.confusion[t][t];
  }

  report.oa = static_cast<double>(diag) / static_cast<double>(total);
  report.per_class_acc.assign(classes, std::numeric_limits<double>::quiet_NaN());
  double acc_sum = 0.0;
  int present = 0;
  for (int t = 0; t < classes; ++t) {
    if (row_sum[t] == 0) continue;
    const double acc =
        static_cast<double>(report.confusion[t][t]) / static_cast<double>(row_sum[t]);
    report.per_class_acc[t] = acc;
    acc_sum += acc;
    ++present;
  }
  report.aa = acc_sum / present;

  double chance = 0.0;
  for (int t = 0; t < classes; ++t) {
    chance += static_cast<double>(row_sum[t]) * static_cast<double>(col_sum[t]);
  }
  chance /= static_cast<double>(total) * static_cast<double>(total);
  // chance == 1 forces every pixel into one diagonal cell, i.e. perfect agreement
  report.kappa = chance >= 1.0 ? 1.0 : (report.oa - chance) / (1.0 - chance);
  return report;
}

struct Palette {
  std::vector<std::array<std::uint8_t, 3>> colors;  // indexed by class, 0..C
};

namespace detail {

inline std::array<std::uint8_t, 3> hsv_to_rgb(double hue, double sat, double val) {
  const double c = val * sat;
  const double sector = hue / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(sector, 2.0) - 1.0));
  double r = 0.0, g = 0.0, b = 0.0;
  switch (static_cast<int>(sector) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = val - c;
  auto byte = [](double u) { return static_cast<std::uint8_t>(std::lround(255.0 * u)); };
  return {byte(r + m), byte(g + m), byte(b + m)};
}

}  // namespace detail

// Class 0 (unlabeled) stays black, classes 1..C get evenly spaced hues.
inline Palette make_default_palette(int classes) {
  if (classes < 0) throw InvalidArgument("class count must be non-negative");
  Palette palette;
  palette.colors.assign(classes + 1, {0, 0, 0});
  for (int k = 1; k <= classes; ++k) {
    palette.colors[k] = detail::hsv_to_rgb(360.0 * (k - 1) / classes, 0.85, 1.0);
  }
  return palette;
}

inline PpmImage render_map(const std::vector<std::uint16_t>& pred, int height, int width,
                           const Palette& palette) {
  if (height <= 0 || width <= 0 ||
      pred.size() != static_cast<std::size_t>(height) * width) {
    throw InvalidArgument("prediction map does not match the requested dimensions");
  }
  PpmImage img;
  img.width = width;
  img.height = height;
  img.rgb.resize(pred.size() * 3);
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const std::uint16_t cls = pred[p];
    if (cls >= palette.colors.size()) {
      throw InvalidArgument("no palette entry for class " + std::to_string(cls));
    }
    const auto& rgb = palette.colors[cls];
    img.rgb[3 * p] = rgb[0];
    img.rgb[3 * p + 1] = rgb[1];
    img.rgb[3 * p + 2] = rgb[2];
  }
  return img;
}

inline void save_palette(const Palette& palette, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open palette file for writing: " + path);
  for (std::size_t cls = 0; cls < palette.colors.size(); ++cls) {
    const auto& rgb = palette.colors[cls];
    out << cls << ',' << static_cast<int>(rgb[0]) << ',' << static_cast<int>(rgb[1]) << ','
        << static_cast<int>(rgb[2]) << '\n';
  }
  if (!out) throw FormatError("failed writing palette file: " + path);
}

inline Palette load_palette(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open palette file: " + path);
  std::vector<std::array<int, 4>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::array<int, 4> row{};
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(fields >> row[0] >> c1 >> row[1] >> c2 >> row[2] >> c3 >> row[3]) || c1 != ',' ||
        c2 != ',' || c3 != ',') {
      throw FormatError("malformed palette line " + std::to_string(line_no) + ": " + line);
    }
    for (int ch = 1; ch <= 3; ++ch) {
      if (row[ch] < 0 || row[ch] > 255) {
        throw FormatError("palette channel out of range on line " + std::to_string(line_no));
      }
    }
    rows.push_back(row);
  }
  if (rows.empty()) throw FormatError("palette file is empty: " + path);

  Palette palette;
  palette.colors.assign(rows.size(), {0, 0, 0});
  std::vector<bool> seen(rows.size(), false);
  for (const auto& row : rows) {
    if (row[0] < 0 || row[0] >= static_cast<int>(rows.size()) || seen[row[0]]) {
      throw FormatError("palette classes must cover 0..C exactly once");
    }
    seen[row[0]] = true;
    palette.colors[row[0]] = {static_cast<std::uint8_t>(row[1]), static_cast<std::uint8_t>(row[2]),
                              static_cast<std::uint8_t>(row[3])};
  }
  return palette;
}

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["confusion"] = report.confusion;
  j["per_class"] = report.per_class_acc;  // NaN entries serialize as null
  j["oa"] = report.oa;
  j["aa"] = report.aa;
  j["kappa"] = report.kappa;
  return j;
}

inline void save_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open report file for writing: " + path);
  out << report_to_json(report).dump(2) << '\n';
  if (!out) throw FormatError("failed writing report file: " + path);
}

}  // namespace mdgcn
