#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "mdgcn/cube.hpp"
#include "mdgcn/ppm.hpp"
#include "test_util.hpp"

// End-to-end checks against the installed binary: flag handling, exit codes,
// emitted files, and the stdout contract. MDGCN_CLI_PATH is injected by CMake.

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args, const testutil::TmpDir& scratch) {
  const std::string capture = scratch.file("cli_capture.txt");
  const std::string cmd =
      std::string("\"") + MDGCN_CLI_PATH + "\" " + args + " > \"" + capture + "\" 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(capture);
  std::stringstream buf;
  buf << in.rdbuf();
  result.output = buf.str();
  return result;
}

// Block scene saved to disk, ready for the pipeline.
void write_scene(const testutil::TmpDir& dir, int h, int w, int b, std::uint64_t seed) {
  const auto [cube, labels] = testutil::make_block_scene(h, w, b, 2, 0.1, seed);
  mdgcn::save_cube(cube, dir.file("scene.hsic"));
  mdgcn::save_labels(labels, dir.file("scene.hsil"));
}

bool file_exists(const std::string& path) { return std::ifstream(path).good(); }

}  // namespace

TEST_CASE("cli rejects a missing cube file with exit code 2") {
  testutil::TmpDir dir;
  const auto r = run_cli("segment --cube " + dir.file("absent.hsic"), dir);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("absent.hsic") != std::string::npos);
}

TEST_CASE("cli rejects out-of-range flag values with exit code 2") {
  testutil::TmpDir dir;
  write_scene(dir, 16, 16, 4, 3);
  const auto r =
      run_cli("segment --cube " + dir.file("scene.hsic") + " --k 0", dir);
  CHECK(r.exit_code == 2);
}

TEST_CASE("cli segment writes the segmentation artifacts and prints the count") {
  testutil::TmpDir dir;
  write_scene(dir, 32, 32, 8, 5);
  const std::string out = dir.file("seg");
  const auto r = run_cli(
      "segment --cube " + dir.file("scene.hsic") + " --out " + out, dir);
  REQUIRE(r.exit_code == 0);
  const int m = std::stoi(r.output);
  CHECK(m >= 9);   // auto K = ceil(1024 / 100) = 11, +/-20%
  CHECK(m <= 13);
  CHECK(file_exists(out + "/segmentation.csv"));
  CHECK(file_exists(out + "/boundaries.ppm"));
  const auto config = nlohmann::json::parse(std::ifstream(out + "/config.json"));
  CHECK(config["k"] == 11);
  CHECK(config["m"] == 0.1);
}

TEST_CASE("cli train evaluate round trip produces a usable report and map") {
  testutil::TmpDir dir;
  write_scene(dir, 32, 32, 8, 9);
  const std::string train_out = dir.file("train");
  const auto train = run_cli("train --cube " + dir.file("scene.hsic") +
                                 " --labels " + dir.file("scene.hsil") +
                                 " --per-class 5 --iters 400 --seed 1 --out " +
                                 train_out,
                             dir);
  REQUIRE(train.exit_code == 0);
  CHECK(train.output.find("best val_acc") != std::string::npos);
  CHECK(file_exists(train_out + "/model.bin"));
  CHECK(file_exists(train_out + "/history.csv"));
  CHECK(file_exists(train_out + "/split.txt"));
  CHECK(file_exists(train_out + "/config.json"));

  const std::string eval_out = dir.file("eval");
  const auto eval = run_cli(
      "evaluate --cube " + dir.file("scene.hsic") + " --labels " +
          dir.file("scene.hsil") + " --checkpoint " + train_out +
          "/model.bin --split " + train_out + "/split.txt --out " + eval_out,
      dir);
  REQUIRE(eval.exit_code == 0);
  CHECK(eval.output.find("oa ") != std::string::npos);

  const auto report = nlohmann::json::parse(std::ifstream(eval_out + "/report.json"));
  const double oa = report["oa"].get<double>();
  CHECK(oa >= 0.0);
  CHECK(oa <= 1.0);
  REQUIRE(report["confusion"].is_array());

  const mdgcn::PpmImage map = mdgcn::load_ppm(eval_out + "/map.ppm");
  CHECK(map.width == 32);
  CHECK(map.height == 32);
}

TEST_CASE("cli predict renders a map without labels") {
  testutil::TmpDir dir;
  write_scene(dir, 32, 32, 8, 13);
  const std::string train_out = dir.file("train");
  REQUIRE(run_cli("train --cube " + dir.file("scene.hsic") + " --labels " +
                      dir.file("scene.hsil") +
                      " --per-class 5 --iters 200 --seed 2 --out " + train_out,
                  dir)
              .exit_code == 0);
  // the map path's directory does not exist yet; predict must create it
  const std::string map_path = dir.file("maps/pred.ppm");
  const auto r = run_cli("predict --cube " + dir.file("scene.hsic") +
                             " --checkpoint " + train_out + "/model.bin --map " +
                             map_path + " --out " + dir.file("pred"),
                         dir);
  REQUIRE(r.exit_code == 0);
  const mdgcn::PpmImage map = mdgcn::load_ppm(map_path);
  CHECK(map.width == 32);
  CHECK(map.height == 32);
}

TEST_CASE("cli rejects a checkpoint whose band count mismatches the cube") {
  testutil::TmpDir dir;
  write_scene(dir, 32, 32, 8, 17);
  const std::string train_out = dir.file("train");
  REQUIRE(run_cli("train --cube " + dir.file("scene.hsic") + " --labels " +
                      dir.file("scene.hsil") +
                      " --per-class 5 --iters 50 --seed 3 --out " + train_out,
                  dir)
              .exit_code == 0);

  testutil::TmpDir other;
  write_scene(other, 32, 32, 4, 17);
  const auto r = run_cli("predict --cube " + other.file("scene.hsic") +
                             " --checkpoint " + train_out +
                             "/model.bin --out " + other.file("pred"),
                         other);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("bands") != std::string::npos);
}

TEST_CASE("cli ablate emits one row per variant and seed plus medians") {
  testutil::TmpDir dir;
  write_scene(dir, 32, 32, 8, 23);
  const std::string out = dir.file("ablate");
  const auto r = run_cli("ablate --cube " + dir.file("scene.hsic") +
                             " --labels " + dir.file("scene.hsil") +
                             " --per-class 5 --iters 100 --seeds 2 --scales 1,2" +
                             " --out " + out,
                         dir);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("median") != std::string::npos);

  std::ifstream csv(out + "/ablation.csv");
  REQUIRE(csv.good());
  std::string line;
  int rows = 0;
  REQUIRE(std::getline(csv, line));
  CHECK(line == "variant,seed,oa,aa,kappa");
  while (std::getline(csv, line)) {
    if (!line.empty()) ++rows;
  }
  // variants: mdgcn, fixed-graph, single-scale=1, single-scale=2; two seeds
  CHECK(rows == 8);
}
