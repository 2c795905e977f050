#include "mdgcn/eval.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <catch2/catch_amalgamated.hpp>

#include "mdgcn/rng.hpp"
#include "test_util.hpp"

using namespace mdgcn;
using testutil::TmpDir;
using testutil::make_random_cube;

namespace {

Segmentation two_column_segmentation() {
  Segmentation seg;
  seg.height = 2;
  seg.width = 2;
  seg.num_superpixels = 2;
  seg.assignment = {0, 1, 0, 1};
  seg.members = {{0, 2}, {1, 3}};
  return seg;
}

// Straight-line reimplementation of the metric definitions, kept deliberately
// independent of evaluate(): its own exclusion set, its own marginals.
EvalReport scripted_metrics(const std::vector<std::uint16_t>& pred, const LabelMap& truth,
                            const SplitSpec& exclude) {
  std::set<int> banned;
  for (const auto& px : exclude.train_pixels) banned.insert(px.row * truth.width + px.col);
  for (const auto& px : exclude.validation_pixels) banned.insert(px.row * truth.width + px.col);

  const int classes = *std::max_element(truth.labels.begin(), truth.labels.end());
  EvalReport out;
  out.confusion.assign(classes, std::vector<std::int64_t>(classes, 0));
  long long total = 0;
  for (int p = 0; p < truth.height * truth.width; ++p) {
    if (truth.labels[p] == 0 || banned.count(p)) continue;
    ++out.confusion[truth.labels[p] - 1][pred[p] - 1];
    ++total;
  }

  std::vector<long long> row(classes, 0), col(classes, 0);
  long long diag = 0;
  for (int t = 0; t < classes; ++t) {
    diag += out.confusion[t][t];
    for (int y = 0; y < classes; ++y) {
      row[t] += out.confusion[t][y];
      col[y] += out.confusion[t][y];
    }
  }
  out.oa = static_cast<double>(diag) / static_cast<double>(total);
  out.per_class_acc.assign(classes, std::numeric_limits<double>::quiet_NaN());
  double acc_sum = 0.0;
  int present = 0;
  for (int t = 0; t < classes; ++t) {
    if (row[t] == 0) continue;
    out.per_class_acc[t] = static_cast<double>(out.confusion[t][t]) / static_cast<double>(row[t]);
    acc_sum += out.per_class_acc[t];
    ++present;
  }
  out.aa = acc_sum / present;
  double chance = 0.0;
  for (int t = 0; t < classes; ++t) {
    chance += static_cast<double>(row[t]) * static_cast<double>(col[t]);
  }
  chance /= static_cast<double>(total) * static_cast<double>(total);
  out.kappa = chance >= 1.0 ? 1.0 : (out.oa - chance) / (1.0 - chance);
  return out;
}

}  // namespace

TEST_CASE("superpixel argmax fans out to member pixels") {
  const Segmentation seg = two_column_segmentation();
  ForwardTrace trace;
  trace.probabilities.resize(2, 3);
  trace.probabilities << 0.1, 0.7, 0.2,  // class 2
      0.5, 0.5, 0.0;                     // tie -> class 1

  const std::vector<std::uint16_t> pred = predict_pixels(trace, seg);
  CHECK(pred == std::vector<std::uint16_t>{2, 1, 2, 1});
}

TEST_CASE("prediction is constant within each superpixel") {
  const DataCube cube = make_random_cube(12, 9, 4, 31);
  const Segmentation seg = slic_segment(cube, 8, 0.1, 10);

  ForwardTrace trace;
  Rng rng(5);
  trace.probabilities = row_softmax(Eigen::MatrixXd::NullaryExpr(
      seg.num_superpixels, 5, [&rng](Eigen::Index, Eigen::Index) { return uniform_in(rng, -1.0, 1.0); }));
  const std::vector<std::uint16_t> pred = predict_pixels(trace, seg);

  for (int s = 0; s < seg.num_superpixels; ++s) {
    for (int pixel : seg.members[s]) CHECK(pred[pixel] == pred[seg.members[s].front()]);
  }

  ForwardTrace short_trace;
  short_trace.probabilities = trace.probabilities.topRows(seg.num_superpixels - 1);
  CHECK_THROWS_AS(predict_pixels(short_trace, seg), InvalidArgument);
}

TEST_CASE("singleton superpixel labels exactly one pixel") {
  Segmentation seg;
  seg.height = 1;
  seg.width = 3;
  seg.num_superpixels = 2;
  seg.assignment = {0, 0, 1};
  seg.members = {{0, 1}, {2}};

  ForwardTrace trace;
  trace.probabilities.resize(2, 2);
  trace.probabilities << 0.9, 0.1, 0.2, 0.8;
  const std::vector<std::uint16_t> pred = predict_pixels(trace, seg);
  CHECK(pred == std::vector<std::uint16_t>{1, 1, 2});
}

TEST_CASE("perfect agreement scores ones") {
  LabelMap truth;
  truth.height = 2;
  truth.width = 2;
  truth.labels = {1, 1, 2, 2};
  const std::vector<std::uint16_t> pred = {1, 1, 2, 2};

  const EvalReport report = evaluate(pred, truth, SplitSpec{});
  CHECK(report.confusion == std::vector<std::vector<std::int64_t>>{{2, 0}, {0, 2}});
  CHECK(report.oa == 1.0);
  CHECK(report.aa == 1.0);
  CHECK(report.kappa == 1.0);
}

TEST_CASE("coin-flip confusion has zero kappa") {
  LabelMap truth;
  truth.height = 2;
  truth.width = 2;
  truth.labels = {1, 1, 2, 2};
  const std::vector<std::uint16_t> pred = {1, 2, 1, 2};

  const EvalReport report = evaluate(pred, truth, SplitSpec{});
  CHECK(report.confusion == std::vector<std::vector<std::int64_t>>{{1, 1}, {1, 1}});
  CHECK(report.oa == 0.5);
  CHECK(report.kappa == 0.0);
}

TEST_CASE("three-quarters agreement halves kappa") {
  LabelMap truth;
  truth.height = 2;
  truth.width = 4;
  truth.labels = {1, 1, 1, 1, 2, 2, 2, 2};
  const std::vector<std::uint16_t> pred = {1, 1, 1, 2, 2, 2, 2, 1};

  const EvalReport report = evaluate(pred, truth, SplitSpec{});
  CHECK(report.confusion == std::vector<std::vector<std::int64_t>>{{3, 1}, {1, 3}});
  CHECK(report.oa == 0.75);
  CHECK(report.kappa == 0.5);
  CHECK(report.per_class_acc[0] == 0.75);
  CHECK(report.per_class_acc[1] == 0.75);
  CHECK(report.aa == 0.75);
}

TEST_CASE("unlabeled and split pixels never reach the confusion matrix") {
  LabelMap truth;
  truth.height = 2;
  truth.width = 3;
  truth.labels = {1, 0, 2, 1, 2, 0};
  // pixel (0,0) trains, pixel (1,1) validates; both would have been wrong
  SplitSpec split;
  split.train_pixels = {{0, 0, 1}};
  split.validation_pixels = {{1, 1, 2}};
  const std::vector<std::uint16_t> pred = {2, 2, 2, 1, 1, 1};

  const EvalReport report = evaluate(pred, truth, split);
  std::int64_t counted = 0;
  for (const auto& row : report.confusion) {
    for (std::int64_t cell : row) counted += cell;
  }
  CHECK(counted == 2);  // only (0,2) and (1,0) remain, both predicted correctly
  CHECK(report.confusion == std::vector<std::vector<std::int64_t>>{{1, 0}, {0, 1}});
  CHECK(report.oa == 1.0);  // would have been 0.5 had the excluded pixels counted
}

TEST_CASE("evaluation with nothing left to score is an error") {
  LabelMap truth;
  truth.height = 1;
  truth.width = 2;
  truth.labels = {0, 1};
  SplitSpec split;
  split.train_pixels = {{0, 1, 1}};
  const std::vector<std::uint16_t> pred = {1, 1};

  CHECK_THROWS_AS(evaluate(pred, truth, split), DataError);

  LabelMap blank;
  blank.height = 1;
  blank.width = 2;
  blank.labels = {0, 0};
  CHECK_THROWS_AS(evaluate(pred, blank, SplitSpec{}), DataError);
}

TEST_CASE("absent classes drop out of the average accuracy") {
  LabelMap truth;
  truth.height = 1;
  truth.width = 4;
  truth.labels = {1, 1, 3, 3};  // class 2 exists nowhere in the test set
  const std::vector<std::uint16_t> pred = {1, 3, 3, 3};

  const EvalReport report = evaluate(pred, truth, SplitSpec{});
  CHECK(report.per_class_acc[0] == 0.5);
  CHECK(std::isnan(report.per_class_acc[1]));
  CHECK(report.per_class_acc[2] == 1.0);
  CHECK(report.aa == 0.75);
}

TEST_CASE("evaluate rejects malformed inputs") {
  LabelMap truth;
  truth.height = 1;
  truth.width = 2;
  truth.labels = {1, 2};

  CHECK_THROWS_AS(evaluate({1}, truth, SplitSpec{}), InvalidArgument);
  CHECK_THROWS_AS(evaluate({1, 3}, truth, SplitSpec{}), DataError);  // no class-3 row
  CHECK_THROWS_AS(evaluate({1, 0}, truth, SplitSpec{}), DataError);

  SplitSpec outside;
  outside.train_pixels = {{5, 0, 1}};
  CHECK_THROWS_AS(evaluate({1, 2}, truth, outside), InvalidArgument);
}

TEST_CASE("single-class diagonal confusion still has kappa one") {
  LabelMap truth;
  truth.height = 1;
  truth.width = 3;
  truth.labels = {1, 1, 1};
  const EvalReport report = evaluate({1, 1, 1}, truth, SplitSpec{});
  CHECK(report.oa == 1.0);
  CHECK(report.kappa == 1.0);
}

TEST_CASE("metrics match a scripted oracle on random instances") {
  Rng rng(99);
  for (int round = 0; round < 50; ++round) {
    const int height = 3 + static_cast<int>(uniform_index(rng, 6));
    const int width = 3 + static_cast<int>(uniform_index(rng, 6));
    const int classes = 2 + static_cast<int>(uniform_index(rng, 4));

    LabelMap truth;
    truth.height = height;
    truth.width = width;
    truth.labels.resize(static_cast<std::size_t>(height) * width);
    std::vector<std::uint16_t> pred(truth.labels.size());
    for (std::size_t p = 0; p < truth.labels.size(); ++p) {
      truth.labels[p] = static_cast<std::uint16_t>(uniform_index(rng, classes + 1));  // 0 allowed
      pred[p] = static_cast<std::uint16_t>(1 + uniform_index(rng, classes));
    }
    truth.labels[0] = static_cast<std::uint16_t>(classes);  // keep every class id in range

    SplitSpec split;
    for (int k = 0; k < 4; ++k) {
      const int p = 1 + static_cast<int>(uniform_index(rng, truth.labels.size() - 1));
      LabeledPixel px{p / width, p % width, truth.labels[p]};
      if (k % 2 == 0) {
        split.train_pixels.push_back(px);
      } else {
        split.validation_pixels.push_back(px);
      }
    }

    const EvalReport got = evaluate(pred, truth, split);
    const EvalReport want = scripted_metrics(pred, truth, split);
    REQUIRE(got.confusion == want.confusion);
    REQUIRE(got.oa == want.oa);
    REQUIRE(got.aa == want.aa);
    REQUIRE(got.kappa == want.kappa);
    for (std::size_t k = 0; k < want.per_class_acc.size(); ++k) {
      if (std::isnan(want.per_class_acc[k])) {
        REQUIRE(std::isnan(got.per_class_acc[k]));
      } else {
        REQUIRE(got.per_class_acc[k] == want.per_class_acc[k]);
      }
    }
    REQUIRE((got.kappa >= -1.0 && got.kappa <= 1.0));
  }
}

TEST_CASE("rendered map is raw binary rgb") {
  Palette palette;
  palette.colors = {{0, 0, 0}, {255, 0, 0}};
  const PpmImage img = render_map({0, 1}, 1, 2, palette);

  const TmpDir tmp;
  const std::string path = tmp.file("map.ppm");
  save_ppm(img, path);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string expected = std::string("P6\n2 1\n255\n") +
                               std::string("\x00\x00\x00", 3) + std::string("\xFF\x00\x00", 3);
  CHECK(bytes == expected);
}

TEST_CASE("all-zero map renders black") {
  const Palette palette = make_default_palette(3);
  const PpmImage img = render_map(std::vector<std::uint16_t>(6, 0), 2, 3, palette);
  CHECK(img.rgb == std::vector<std::uint8_t>(18, 0));
}

TEST_CASE("rendered map round-trips through the parser") {
  const Palette palette = make_default_palette(5);
  Rng rng(13);
  std::vector<std::uint16_t> pred(4 * 7);
  for (auto& v : pred) v = static_cast<std::uint16_t>(uniform_index(rng, 6));
  const PpmImage img = render_map(pred, 4, 7, palette);

  const TmpDir tmp;
  const std::string path = tmp.file("map.ppm");
  save_ppm(img, path);
  const PpmImage back = load_ppm(path);
  REQUIRE(back.width == 7);
  REQUIRE(back.height == 4);
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const auto& rgb = palette.colors[pred[p]];
    CHECK(back.rgb[3 * p] == rgb[0]);
    CHECK(back.rgb[3 * p + 1] == rgb[1]);
    CHECK(back.rgb[3 * p + 2] == rgb[2]);
  }
}

TEST_CASE("labels beyond the palette are rejected") {
  const Palette palette = make_default_palette(2);
  CHECK_THROWS_AS(render_map({0, 3}, 1, 2, palette), InvalidArgument);
  CHECK_THROWS_AS(render_map({0, 1, 2}, 1, 2, palette), InvalidArgument);  // size mismatch
}

TEST_CASE("default palette is black at zero with distinct class colors") {
  const Palette palette = make_default_palette(16);
  REQUIRE(palette.colors.size() == 17);
  CHECK(palette.colors[0] == std::array<std::uint8_t, 3>{0, 0, 0});
  std::set<std::array<std::uint8_t, 3>> unique(palette.colors.begin(), palette.colors.end());
  CHECK(unique.size() == 17);
}

TEST_CASE("palette files round-trip") {
  const Palette palette = make_default_palette(4);
  const TmpDir tmp;
  const std::string path = tmp.file("palette.csv");
  save_palette(palette, path);
  const Palette back = load_palette(path);
  CHECK(back.colors == palette.colors);
}

TEST_CASE("palette parser rejects malformed files") {
  const TmpDir tmp;
  const std::string path = tmp.file("palette.csv");

  auto write = [&](const std::string& body) {
    std::ofstream out(path);
    out << body;
  };

  write("0,0,0\n");  // missing a channel
  CHECK_THROWS_AS(load_palette(path), FormatError);
  write("0,0,0,0\n2,1,2,3\n");  // class gap
  CHECK_THROWS_AS(load_palette(path), FormatError);
  write("0,0,0,0\n0,1,2,3\n");  // duplicate class
  CHECK_THROWS_AS(load_palette(path), FormatError);
  write("0,0,0,300\n");  // channel overflow
  CHECK_THROWS_AS(load_palette(path), FormatError);
  write("");
  CHECK_THROWS_AS(load_palette(path), FormatError);
}

TEST_CASE("report serializes to json with nulls for absent classes") {
  LabelMap truth;
  truth.height = 1;
  truth.width = 4;
  truth.labels = {1, 1, 3, 3};
  const EvalReport report = evaluate({1, 3, 3, 3}, truth, SplitSpec{});

  const TmpDir tmp;
  const std::string path = tmp.file("report.json");
  save_report(report, path);

  std::ifstream in(path);
  const nlohmann::json j = nlohmann::json::parse(in);
  CHECK(j["oa"].get<double>() == report.oa);
  CHECK(j["aa"].get<double>() == report.aa);
  CHECK(j["kappa"].get<double>() == report.kappa);
  CHECK(j["confusion"].size() == 3);
  CHECK(j["confusion"][0][0].get<std::int64_t>() == 1);
  CHECK(j["per_class"][0].get<double>() == 0.5);
  CHECK(j["per_class"][1].is_null());
  CHECK(j["per_class"][2].get<double>() == 1.0);
}
