#pragma once

// Full-batch training: cross-entropy on seed superpixels, reverse-mode
// gradients that treat the evolving adjacencies as data, Adam updates,
// validation tracking with best-checkpoint selection, and ablation variants.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "mdgcn/errors.hpp"
#include "mdgcn/graph.hpp"
#include "mdgcn/network.hpp"
#include "mdgcn/superpixel.hpp"

namespace mdgcn {

// One-hot rows for labeled nodes, zero rows elsewhere.
inline Eigen::MatrixXd one_hot_labels(const NodeLabels& labels, int num_nodes,
                                      int num_classes) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(num_nodes, num_classes);
  for (int i : labels.y_g) {
    const int cls = labels.labels[i];
    if (i < 0 || i >= num_nodes || cls < 1 || cls > num_classes) {
      throw InvalidArgument("node label outside the class range");
    }
    y(i, cls - 1) = 1.0;
  }
  return y;
}

// -sum over labeled rows of Y .* ln(P).
inline double cross_entropy_loss(const Eigen::MatrixXd& probabilities,
                                 const Eigen::MatrixXd& y, const std::vector<int>& y_g) {
  if (y_g.empty()) throw InvalidArgument("no labeled nodes to train on");
  if (probabilities.rows() != y.rows() || probabilities.cols() != y.cols()) {
    throw InvalidArgument("probability and label shapes disagree");
  }
  double loss = 0.0;
  for (int g : y_g) {
    for (Eigen::Index f = 0; f < y.cols(); ++f) {
      if (probabilities(g, f) <= 0) {
        throw NumericError("probability underflow on a labeled node");
      }
      if (y(g, f) != 0) loss -= y(g, f) * std::log(probabilities(g, f));
    }
  }
  return loss;
}

// Predicted class (1-based) per row: argmax with ties to the smaller index.
inline std::vector<int> argmax_classes(const Eigen::MatrixXd& probabilities) {
  std::vector<int> out(probabilities.rows());
  for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
    int best = 0;
    for (Eigen::Index f = 1; f < probabilities.cols(); ++f) {
      if (probabilities(i, f) > probabilities(i, best)) best = static_cast<int>(f);
    }
    out[i] = best + 1;
  }
  return out;
}

// Fraction of labeled nodes whose argmax matches; zero when none are labeled.
inline double node_accuracy(const Eigen::MatrixXd& probabilities, const NodeLabels& labels) {
  if (labels.y_g.empty()) return 0.0;
  const std::vector<int> pred = argmax_classes(probabilities);
  long hits = 0;
  for (int i : labels.y_g) hits += pred[i] == labels.labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.y_g.size());
}

struct Gradients {
  std::vector<std::vector<Eigen::MatrixXd>> weights;  // same shape as Model::weights
};

struct BackwardResult {
  Gradients grads;
  double loss = 0.0;
  ForwardTrace trace;
};

// Loss gradients w.r.t. every weight matrix. Adjacencies are treated as
// constants: graph updating and feature embedding alternate, so the backward
// pass never differentiates through the adjacency's dependence on H.
inline BackwardResult compute_gradients(const Model& model, const Eigen::MatrixXd& features,
                                        const std::vector<ScaleGraph>& graphs,
                                        const Eigen::MatrixXd& y, const std::vector<int>& y_g,
                                        bool update_graphs = true) {
  BackwardResult result;
  result.trace = forward(model, features, graphs, update_graphs);
  if (y.rows() != features.rows() || y.cols() != model.classes) {
    throw InvalidArgument("label matrix shape does not match the model");
  }
  result.loss = cross_entropy_loss(result.trace.probabilities, y, y_g);

  Eigen::MatrixXd d_output = Eigen::MatrixXd::Zero(features.rows(), model.classes);
  for (int g : y_g) {
    d_output.row(g) = result.trace.probabilities.row(g) - y.row(g);
  }

  result.grads.weights.resize(model.scales);
  for (int s = 0; s < model.scales; ++s) {
    result.grads.weights[s].resize(model.layers);
    Eigen::MatrixXd d_h = d_output;  // gradient w.r.t. this scale's top activation
    for (int l = model.layers - 1; l >= 0; --l) {
      const Eigen::MatrixXd d_z = d_h.cwiseProduct(result.trace.preactivations[s][l].unaryExpr(
          [](double v) { return logistic(v); }));
      const Eigen::MatrixXd propagated = result.trace.adjacency_used[s][l] *
                                         result.trace.activations[s][l];
      result.grads.weights[s][l] = propagated.transpose() * d_z;
      if (!result.grads.weights[s][l].allFinite()) {
        throw NumericError("non-finite gradient at scale " + std::to_string(s) +
                           ", layer " + std::to_string(l + 1));
      }
      if (l > 0) {
        d_h = result.trace.adjacency_used[s][l].transpose() *
              (d_z * model.weights[s][l].transpose());
      }
    }
  }
  return result;
}

struct OptimState {
  std::vector<std::vector<Eigen::MatrixXd>> first_moment;
  std::vector<std::vector<Eigen::MatrixXd>> second_moment;
  long step = 0;

  static OptimState zeros_like(const Model& model) {
    OptimState state;
    state.first_moment.resize(model.scales);
    state.second_moment.resize(model.scales);
    for (int s = 0; s < model.scales; ++s) {
      for (const auto& w : model.weights[s]) {
        state.first_moment[s].push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
        state.second_moment[s].push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
      }
    }
    return state;
  }
};

// Standard bias-corrected Adam over every weight matrix with a shared step.
inline void adam_step(Model& model, const Gradients& grads, OptimState& state, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  ++state.step;
  const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (int s = 0; s < model.scales; ++s) {
    for (int l = 0; l < model.layers; ++l) {
      const Eigen::MatrixXd& g = grads.weights[s][l];
      Eigen::MatrixXd& m = state.first_moment[s][l];
      Eigen::MatrixXd& v = state.second_moment[s][l];
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
      const Eigen::ArrayXXd m_hat = m.array() / correction1;
      const Eigen::ArrayXXd v_hat = v.array() / correction2;
      model.weights[s][l].array() -= lr * m_hat / (v_hat.sqrt() + eps);
    }
  }
}

struct TrainConfig {
  int iterations = 5000;
  double learning_rate = 0.0005;
  std::vector<int> scale_hops = {1, 2, 3};
  int layers = 2;
  int hidden = 20;
  double alpha = 0.1;
  double beta = 0.01;
  std::uint64_t seed = 0;
  std::string variant = "mdgcn";  // mdgcn | fixed-graph | single-scale
  int single_scale_hop = 1;       // which hop feeds the single-scale variant
  int num_classes = 0;            // 0 = infer from the labels
};

struct HistoryEntry {
  int iter = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  Model model;       // weights after the final iteration
  Model best_model;  // best validation accuracy snapshot
  double best_val_acc = 0.0;
  int best_iter = 0;
  std::vector<HistoryEntry> history;
  std::vector<ScaleGraph> graphs;  // the graphs the model was trained on
};

// Variant handling: single-scale keeps one graph, the others keep all.
inline std::vector<ScaleGraph> select_graphs(const std::vector<ScaleGraph>& graphs,
                                             const TrainConfig& config) {
  if (config.variant == "single-scale") {
    for (const ScaleGraph& g : graphs) {
      if (g.scale == config.single_scale_hop) return {g};
    }
    throw InvalidArgument("no graph built for the requested single-scale hop");
  }
  if (config.variant != "mdgcn" && config.variant != "fixed-graph") {
    throw InvalidArgument("unknown training variant: " + config.variant);
  }
  return graphs;
}

// Full-batch training loop: forward, loss, gradients, Adam, per-iteration
// history, and best-validation snapshotting. Divergence aborts.
inline TrainResult train(const TrainConfig& config, const Eigen::MatrixXd& features,
                         const std::vector<ScaleGraph>& graphs,
                         const NodeLabels& train_labels, const NodeLabels& val_labels) {
  if (config.iterations < 1) throw InvalidArgument("iteration count must be at least 1");
  if (!(config.learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
  if (train_labels.y_g.empty()) throw InvalidArgument("no labeled nodes to train on");

  TrainResult result;
  result.graphs = select_graphs(graphs, config);
  const bool update_graphs = config.variant != "fixed-graph";
  const int num_nodes = static_cast<int>(features.rows());
  const int bands = static_cast<int>(features.cols());

  int num_classes = config.num_classes;
  if (num_classes == 0) {
    for (int i : train_labels.y_g) num_classes = std::max(num_classes, train_labels.labels[i]);
    for (int i : val_labels.y_g) num_classes = std::max(num_classes, val_labels.labels[i]);
  }
  if (num_classes < 1) throw InvalidArgument("could not infer a class count");

  const Eigen::MatrixXd y = one_hot_labels(train_labels, num_nodes, num_classes);

  result.model = make_model(static_cast<int>(result.graphs.size()), config.layers, bands,
                            config.hidden, num_classes, config.alpha,
                            std::vector<double>(config.layers - 1, config.beta), config.seed);
  result.best_model = result.model;
  result.best_val_acc = -1.0;
  OptimState state = OptimState::zeros_like(result.model);

  result.history.reserve(config.iterations);
  for (int iter = 1; iter <= config.iterations; ++iter) {
    BackwardResult step;
    try {
      step = compute_gradients(result.model, features, result.graphs, y, train_labels.y_g,
                               update_graphs);
    } catch (const NumericError& err) {
      throw NumericError(std::string(err.what()) + "; training aborted at iteration " +
                         std::to_string(iter));
    }
    if (!std::isfinite(step.loss)) {
      throw NumericError("training diverged at iteration " + std::to_string(iter));
    }
    const double val_acc = node_accuracy(step.trace.probabilities, val_labels);
    result.history.push_back({iter, step.loss, val_acc});
    // ties keep the most recent weights: a saturated validation set should not
    // freeze the checkpoint at the first iteration that happens to reach it
    if (val_acc >= result.best_val_acc) {
      result.best_val_acc = val_acc;
      result.best_iter = iter;
      result.best_model = result.model;
    }
    adam_step(result.model, step.grads, state, config.learning_rate);
  }

  // Without validation nodes the monitor never fires meaningfully; the final
  // weights are the only sensible checkpoint.
  if (val_labels.y_g.empty()) {
    result.best_model = result.model;
    result.best_val_acc = 0.0;
    result.best_iter = config.iterations;
  }
  return result;
}

// History CSV: header then one "iter,train_loss,val_acc" row per iteration.
inline void save_history(const std::vector<HistoryEntry>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open history file for writing: " + path);
  out << "iter,train_loss,val_acc\n";
  out << std::setprecision(17);
  for (const HistoryEntry& e : history) {
    out << e.iter << ',' << e.train_loss << ',' << e.val_acc << '\n';
  }
  if (!out) throw FormatError("failed writing history file: " + path);
}

}  // namespace mdgcn
