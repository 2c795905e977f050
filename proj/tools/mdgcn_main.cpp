// Command-line front end: segment / train / predict / evaluate / ablate.
// Exit codes: 0 success, 2 usage or input error, 3 numeric failure.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdgcn/cube.hpp"
#include "mdgcn/errors.hpp"
#include "mdgcn/eval.hpp"
#include "mdgcn/graph.hpp"
#include "mdgcn/superpixel.hpp"
#include "mdgcn/train.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string cube_path;
  std::string labels_path;
  std::string split_path;
  std::string checkpoint_path;
  std::string map_path;
  std::string palette_path;
  std::string out_dir = ".";
  int k = 0;  // 0 = pick ceil(pixels / 100) once the cube is loaded
  double m = 0.1;
  int slic_iters = 10;
  double gamma = 0.2;
  std::vector<int> scales = {1, 2, 3};
  int layers = 2;
  int hidden = 20;
  double alpha = 0.1;
  double beta = 0.01;
  int iters = 5000;
  double lr = 0.0005;
  std::uint64_t seed = 0;
  int per_class = 30;
  double val_fraction = 0.1;
  std::string variant = "mdgcn";
  int seeds = 5;  // ablate: consecutive seeds per variant
};

// "single-scale=2" carries its hop inside the flag value.
void apply_variant(const std::string& text, mdgcn::TrainConfig& config) {
  const std::string prefix = "single-scale=";
  if (text.rfind(prefix, 0) == 0) {
    config.variant = "single-scale";
    try {
      config.single_scale_hop = std::stoi(text.substr(prefix.size()));
    } catch (const std::exception&) {
      throw mdgcn::InvalidArgument("cannot parse single-scale hop in: " + text);
    }
    return;
  }
  if (text == "single-scale") {
    throw mdgcn::InvalidArgument("single-scale variant needs a hop, e.g. single-scale=2");
  }
  config.variant = text;
}

mdgcn::TrainConfig make_train_config(const Options& opt) {
  mdgcn::TrainConfig config;
  config.iterations = opt.iters;
  config.learning_rate = opt.lr;
  config.scale_hops = opt.scales;
  config.layers = opt.layers;
  config.hidden = opt.hidden;
  config.alpha = opt.alpha;
  config.beta = opt.beta;
  config.seed = opt.seed;
  apply_variant(opt.variant, config);
  return config;
}

struct Pipeline {
  mdgcn::DataCube cube;  // raw spectra, kept for the boundary overlay
  mdgcn::Segmentation seg;
  Eigen::MatrixXd features;
  std::vector<mdgcn::ScaleGraph> graphs;
  int k_resolved = 0;
};

Pipeline load_and_segment(const Options& opt) {
  Pipeline p;
  p.cube = mdgcn::load_cube(opt.cube_path);
  p.k_resolved = opt.k > 0 ? opt.k : (p.cube.height * p.cube.width + 99) / 100;
  p.seg = mdgcn::slic_segment(p.cube, p.k_resolved, opt.m, opt.slic_iters);
  return p;
}

void attach_graphs(Pipeline& p, const Options& opt) {
  const mdgcn::DataCube standardized = mdgcn::standardize(p.cube);
  p.features = mdgcn::superpixel_features(standardized, p.seg);
  p.graphs = mdgcn::build_scale_graphs(p.features, mdgcn::base_adjacency(p.seg), opt.scales,
                                       opt.gamma);
}

std::string out_file(const Options& opt, const std::string& name) {
  fs::create_directories(opt.out_dir);
  return (fs::path(opt.out_dir) / name).string();
}

// Every run leaves behind the fully resolved parameters it actually used.
void write_config(const Options& opt, const std::string& command, int k_resolved,
                  const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j;
  j["command"] = command;
  j["cube"] = opt.cube_path;
  if (!opt.labels_path.empty()) j["labels"] = opt.labels_path;
  if (!opt.split_path.empty()) j["split"] = opt.split_path;
  if (!opt.checkpoint_path.empty()) j["checkpoint"] = opt.checkpoint_path;
  if (!opt.palette_path.empty()) j["palette"] = opt.palette_path;
  j["out"] = opt.out_dir;
  j["k"] = k_resolved;
  j["m"] = opt.m;
  j["slic_iters"] = opt.slic_iters;
  if (command != "segment") {
    j["gamma"] = opt.gamma;
    j["scales"] = opt.scales;
    if (command != "ablate") j["variant"] = opt.variant;  // ablate runs every variant
  }
  if (command == "train" || command == "ablate") {
    j["layers"] = opt.layers;
    j["hidden"] = opt.hidden;
    j["alpha"] = opt.alpha;
    j["beta"] = opt.beta;
    j["iters"] = opt.iters;
    j["lr"] = opt.lr;
    j["seed"] = opt.seed;
    j["per_class"] = opt.per_class;
    j["val_fraction"] = opt.val_fraction;
  }
  j.update(extra);
  std::ofstream out(out_file(opt, "config.json"));
  if (!out) throw mdgcn::FormatError("cannot write config.json under " + opt.out_dir);
  out << j.dump(2) << '\n';
}

int cmd_segment(const Options& opt) {
  Pipeline p = load_and_segment(opt);
  mdgcn::save_segmentation(p.seg, out_file(opt, "segmentation.csv"));
  mdgcn::save_boundary_overlay(p.cube, p.seg, out_file(opt, "boundaries.ppm"));
  write_config(opt, "segment", p.k_resolved);
  std::cout << p.seg.num_superpixels << '\n';
  return 0;
}

int cmd_train(const Options& opt) {
  Pipeline p = load_and_segment(opt);
  attach_graphs(p, opt);
  const mdgcn::LabelMap labels = mdgcn::load_labels(opt.labels_path, p.cube);

  const mdgcn::SplitSpec split =
      opt.split_path.empty()
          ? mdgcn::sample_training_pixels(labels, opt.per_class, opt.val_fraction, opt.seed)
          : mdgcn::load_split(opt.split_path);
  mdgcn::check_split(split, labels);

  const mdgcn::ProjectedLabels projected = mdgcn::project_labels(p.seg, split);
  if (!projected.mixed_nodes.empty()) {
    std::cerr << "warning: " << projected.mixed_nodes.size()
              << " superpixels hold both training and validation pixels; "
                 "their validation labels were dropped\n";
  }

  mdgcn::TrainConfig config = make_train_config(opt);
  config.num_classes = labels.num_classes();
  const mdgcn::TrainResult result =
      mdgcn::train(config, p.features, p.graphs, projected.train, projected.validation);

  mdgcn::save_model(result.best_model, out_file(opt, "model.bin"));
  mdgcn::save_history(result.history, out_file(opt, "history.csv"));
  mdgcn::save_split(split, out_file(opt, "split.txt"));
  write_config(opt, "train", p.k_resolved,
               {{"split_file", out_file(opt, "split.txt")}});

  std::cout << "final val_acc " << result.history.back().val_acc << ", best val_acc "
            << result.best_val_acc << " at iteration " << result.best_iter << '\n';
  return 0;
}

int cmd_predict(const Options& opt, bool with_metrics) {
  Pipeline p = load_and_segment(opt);
  attach_graphs(p, opt);
  const mdgcn::Model model = mdgcn::load_model(opt.checkpoint_path);
  if (model.input_dim != p.features.cols()) {
    throw mdgcn::InvalidArgument(
        "checkpoint expects " + std::to_string(model.input_dim) + " bands but the cube has " +
        std::to_string(p.features.cols()));
  }

  mdgcn::TrainConfig config = make_train_config(opt);
  const std::vector<mdgcn::ScaleGraph> graphs = mdgcn::select_graphs(p.graphs, config);
  const mdgcn::ForwardTrace trace =
      mdgcn::forward(model, p.features, graphs, config.variant != "fixed-graph");
  const std::vector<std::uint16_t> pred = mdgcn::predict_pixels(trace, p.seg);

  const mdgcn::Palette palette = opt.palette_path.empty()
                                     ? mdgcn::make_default_palette(model.classes)
                                     : mdgcn::load_palette(opt.palette_path);
  const std::string map_path = opt.map_path.empty() ? out_file(opt, "map.ppm") : opt.map_path;
  if (const auto parent = fs::path(map_path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  mdgcn::save_ppm(mdgcn::render_map(pred, p.cube.height, p.cube.width, palette), map_path);

  nlohmann::json extra{{"map", map_path}};
  if (with_metrics) {
    const mdgcn::LabelMap truth = mdgcn::load_labels(opt.labels_path, p.cube);
    const mdgcn::SplitSpec exclude =
        opt.split_path.empty() ? mdgcn::SplitSpec{} : mdgcn::load_split(opt.split_path);
    const mdgcn::EvalReport report = mdgcn::evaluate(pred, truth, exclude);
    mdgcn::save_report(report, out_file(opt, "report.json"));
    std::cout << "oa " << report.oa << " aa " << report.aa << " kappa " << report.kappa << '\n';
  } else {
    std::cout << "wrote " << map_path << '\n';
  }
  write_config(opt, with_metrics ? "evaluate" : "predict", p.k_resolved, extra);
  return 0;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

int cmd_ablate(const Options& opt) {
  Pipeline p = load_and_segment(opt);
  attach_graphs(p, opt);
  const mdgcn::LabelMap labels = mdgcn::load_labels(opt.labels_path, p.cube);

  std::vector<std::string> variants = {"mdgcn", "fixed-graph"};
  for (int s : opt.scales) variants.push_back("single-scale=" + std::to_string(s));

  std::ostringstream csv;
  csv << "variant,seed,oa,aa,kappa\n";
  csv << std::setprecision(17);
  for (const std::string& variant : variants) {
    std::vector<double> oas;
    for (int offset = 0; offset < opt.seeds; ++offset) {
      const std::uint64_t seed = opt.seed + static_cast<std::uint64_t>(offset);
      const mdgcn::SplitSpec split =
          mdgcn::sample_training_pixels(labels, opt.per_class, opt.val_fraction, seed);
      const mdgcn::ProjectedLabels projected = mdgcn::project_labels(p.seg, split);

      Options run = opt;
      run.variant = variant;
      mdgcn::TrainConfig config = make_train_config(run);
      config.seed = seed;
      config.num_classes = labels.num_classes();
      const mdgcn::TrainResult result =
          mdgcn::train(config, p.features, p.graphs, projected.train, projected.validation);

      const mdgcn::ForwardTrace trace = mdgcn::forward(
          result.best_model, p.features, result.graphs, config.variant != "fixed-graph");
      const mdgcn::EvalReport report =
          mdgcn::evaluate(mdgcn::predict_pixels(trace, p.seg), labels, split);
      csv << variant << ',' << seed << ',' << report.oa << ',' << report.aa << ','
          << report.kappa << '\n';
      oas.push_back(report.oa);
    }
    std::cout << variant << " median oa " << median(oas) << '\n';
  }

  const std::string csv_path = out_file(opt, "ablation.csv");
  std::ofstream out(csv_path);
  if (!out) throw mdgcn::FormatError("cannot write " + csv_path);
  out << csv.str();
  write_config(opt, "ablate", p.k_resolved, {{"seeds", opt.seeds}});
  return 0;
}

void add_segment_flags(CLI::App* cmd, Options& opt) {
  cmd->add_option("--cube", opt.cube_path, "input cube (HSIC)")->required();
  cmd->add_option("--k", opt.k, "target superpixel count (default: pixels/100)")
      ->check(CLI::Range(1, std::numeric_limits<int>::max()));
  cmd->add_option("--m", opt.m, "SLIC compactness weight")->capture_default_str();
  cmd->add_option("--slic-iters", opt.slic_iters, "SLIC iteration cap")
      ->capture_default_str();
  cmd->add_option("--out", opt.out_dir, "output directory")->capture_default_str();
}

void add_graph_flags(CLI::App* cmd, Options& opt) {
  cmd->add_option("--gamma", opt.gamma, "Gaussian kernel width")->capture_default_str();
  cmd->add_option("--scales", opt.scales, "neighborhood hop counts")
      ->delimiter(',')
      ->capture_default_str();
}

void add_variant_flag(CLI::App* cmd, Options& opt) {
  cmd->add_option("--variant", opt.variant, "mdgcn | fixed-graph | single-scale=<hop>")
      ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, Options& opt) {
  cmd->add_option("--labels", opt.labels_path, "label map (HSIL)")->required();
  cmd->add_option("--per-class", opt.per_class, "labeled pixels drawn per class")
      ->capture_default_str();
  cmd->add_option("--val-fraction", opt.val_fraction, "share of drawn pixels for validation")
      ->capture_default_str();
  cmd->add_option("--seed", opt.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--layers", opt.layers, "graph convolution layers")->capture_default_str();
  cmd->add_option("--hidden", opt.hidden, "hidden units per layer")->capture_default_str();
  cmd->add_option("--alpha", opt.alpha, "embedding kernel weight in graph updates")
      ->capture_default_str();
  cmd->add_option("--beta", opt.beta, "self-loop weight in graph updates")
      ->capture_default_str();
  cmd->add_option("--iters", opt.iters, "training iterations")->capture_default_str();
  cmd->add_option("--lr", opt.lr, "Adam learning rate")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-scale dynamic graph convolution for hyperspectral cubes"};
  app.require_subcommand(1);
  Options opt;

  CLI::App* segment = app.add_subcommand("segment", "superpixel segmentation only");
  add_segment_flags(segment, opt);

  CLI::App* train = app.add_subcommand("train", "segment, build graphs, and train");
  add_segment_flags(train, opt);
  add_graph_flags(train, opt);
  add_variant_flag(train, opt);
  add_train_flags(train, opt);
  train->add_option("--split", opt.split_path, "reuse an existing train/val split");

  CLI::App* predict = app.add_subcommand("predict", "render a classification map");
  add_segment_flags(predict, opt);
  add_graph_flags(predict, opt);
  add_variant_flag(predict, opt);
  predict->add_option("--checkpoint", opt.checkpoint_path, "trained model file")->required();
  predict->add_option("--map", opt.map_path, "classification map path (default <out>/map.ppm)");
  predict->add_option("--palette", opt.palette_path, "palette file (class,r,g,b)");

  CLI::App* evaluate = app.add_subcommand("evaluate", "predict plus pixel metrics");
  add_segment_flags(evaluate, opt);
  add_graph_flags(evaluate, opt);
  add_variant_flag(evaluate, opt);
  evaluate->add_option("--checkpoint", opt.checkpoint_path, "trained model file")->required();
  evaluate->add_option("--labels", opt.labels_path, "ground-truth label map")->required();
  evaluate->add_option("--split", opt.split_path, "split whose pixels are excluded");
  evaluate->add_option("--map", opt.map_path, "classification map path (default <out>/map.ppm)");
  evaluate->add_option("--palette", opt.palette_path, "palette file (class,r,g,b)");

  CLI::App* ablate = app.add_subcommand("ablate", "compare variants across seeds");
  add_segment_flags(ablate, opt);
  add_graph_flags(ablate, opt);
  add_train_flags(ablate, opt);
  ablate->add_option("--seeds", opt.seeds, "consecutive seeds per variant")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(segment)) return cmd_segment(opt);
    if (app.got_subcommand(train)) return cmd_train(opt);
    if (app.got_subcommand(predict)) return cmd_predict(opt, false);
    if (app.got_subcommand(evaluate)) return cmd_predict(opt, true);
    return cmd_ablate(opt);
  } catch (const mdgcn::NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
