#pragma once

// The multi-scale dynamic graph convolutional network: per-scale layer stacks
// with softplus activations, per-layer adjacency evolution, fused output, and
// the binary checkpoint format.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mdgcn/cube.hpp"
#include "mdgcn/errors.hpp"
#include "mdgcn/graph.hpp"
#include "mdgcn/rng.hpp"

namespace mdgcn {

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double logistic(double x) {  // d/dx softplus
  return 1.0 / (1.0 + std::exp(-x));
}

struct Model {
  int scales = 0;      // parallel graph branches
  int layers = 0;      // convolutional layers per branch
  int input_dim = 0;   // spectral bands
  int hidden = 0;      // width of intermediate layers
  int classes = 0;
  double alpha = 0.1;              // embedding-kernel weight
  std::vector<double> beta;        // per inter-layer noise weight, size layers-1
  std::vector<std::vector<Eigen::MatrixXd>> weights;  // [scale][layer]

  // Width of layer l's input, chaining input_dim -> hidden -> ... -> classes.
  int dim_in(int layer) const { return layer == 0 ? input_dim : hidden; }
  int dim_out(int layer) const { return layer == layers - 1 ? classes : hidden; }

  void validate() const {
    if (scales < 1 || layers < 1 || input_dim < 1 || hidden < 1 || classes < 1) {
      throw InvalidArgument("model dimensions must all be at least 1");
    }
    if (alpha < 0) throw InvalidArgument("alpha must be non-negative");
    if (beta.size() != static_cast<std::size_t>(layers - 1)) {
      throw InvalidArgument("expected one beta per inter-layer update");
    }
    for (double b : beta) {
      if (!(b >= 0)) throw InvalidArgument("beta must be non-negative");
    }
    if (weights.size() != static_cast<std::size_t>(scales)) {
      throw InvalidArgument("weight matrices do not match the scale count");
    }
    for (const auto& stack : weights) {
      if (stack.size() != static_cast<std::size_t>(layers)) {
        throw InvalidArgument("weight matrices do not match the layer count");
      }
      for (int l = 0; l < layers; ++l) {
        if (stack[l].rows() != dim_in(l) || stack[l].cols() != dim_out(l)) {
          throw InvalidArgument("weight matrix dimensions do not chain");
        }
        if (!stack[l].allFinite()) throw DataError("non-finite model weight");
      }
    }
  }
};

// Fresh model with Glorot-uniform weights: each entry uniform on [-r, r],
// r = sqrt(6 / (fan_in + fan_out)), drawn scale-major, layer-major, row-major.
inline Model make_model(int scales, int layers, int input_dim, int hidden, int classes,
                        double alpha, std::vector<double> beta, std::uint64_t seed) {
  Model model;
  model.scales = scales;
  model.layers = layers;
  model.input_dim = input_dim;
  model.hidden = hidden;
  model.classes = classes;
  model.alpha = alpha;
  model.beta = std::move(beta);

  Rng rng(seed);
  model.weights.resize(scales);
  for (int s = 0; s < scales; ++s) {
    model.weights[s].resize(layers);
    for (int l = 0; l < layers; ++l) {
      const int rows = model.dim_in(l), cols = model.dim_out(l);
      const double r = std::sqrt(6.0 / (rows + cols));
      Eigen::MatrixXd w(rows, cols);
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) w(i, j) = uniform_in(rng, -r, r);
      }
      model.weights[s][l] = std::move(w);
    }
  }
  model.validate();
  return model;
}

// Pre-activation of one graph convolution: A_hat * H_prev * W.
inline Eigen::MatrixXd layer_preactivation(const Eigen::MatrixXd& a_hat,
                                           const Eigen::MatrixXd& h_prev,
                                           const Eigen::MatrixXd& w) {
  if (a_hat.rows() != a_hat.cols() || a_hat.cols() != h_prev.rows() ||
      h_prev.cols() != w.rows()) {
    throw InvalidArgument("layer dimensions do not conform");
  }
  return a_hat * h_prev * w;
}

inline Eigen::MatrixXd layer_forward(const Eigen::MatrixXd& a_hat,
                                     const Eigen::MatrixXd& h_prev,
                                     const Eigen::MatrixXd& w) {
  return layer_preactivation(a_hat, h_prev, w).unaryExpr([](double z) { return softplus(z); });
}

// Adjacency evolution: project the current adjacency fused with the embedding
// kernel H*H^T, then add self-noise: P*(A + alpha*H*H^T)*P^T + beta*I.
inline Eigen::MatrixXd dynamic_update(const Eigen::MatrixXd& projection,
                                      const Eigen::MatrixXd& a_cur,
                                      const Eigen::MatrixXd& h, double alpha, double beta) {
  const Eigen::Index n = a_cur.rows();
  if (a_cur.cols() != n || projection.rows() != n || projection.cols() != n ||
      h.rows() != n) {
    throw InvalidArgument("dynamic update dimensions do not conform");
  }
  if (!(alpha >= 0) || !(beta >= 0)) {
    throw InvalidArgument("alpha and beta must be non-negative");
  }
  if ((a_cur - a_cur.transpose()).cwiseAbs().maxCoeff() > 1e-9 ||
      (projection - projection.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
    throw InvalidArgument("dynamic update inputs must be symmetric");
  }
  Eigen::MatrixXd fused = a_cur + alpha * (h * h.transpose());
  Eigen::MatrixXd out = projection * fused * projection.transpose();
  out.diagonal().array() += beta;
  return out;
}

// Numerically safe row softmax; rows of the result sum to one.
inline Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& scores) {
  const Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
  Eigen::MatrixXd p = scores;
  p.colwise() -= row_max;
  p = p.array().exp().matrix();
  const Eigen::VectorXd sums = p.rowwise().sum();
  p.array().colwise() /= sums.array();
  return p;
}

struct ForwardTrace {
  // Indexed [scale][layer]: activations has layers+1 entries per scale
  // (activations[s][0] is the shared input), the others have one per layer.
  std::vector<std::vector<Eigen::MatrixXd>> activations;
  std::vector<std::vector<Eigen::MatrixXd>> preactivations;
  std::vector<std::vector<Eigen::MatrixXd>> adjacency_used;  // normalized, fed to layers
  std::vector<std::vector<Eigen::MatrixXd>> adjacency_raw;   // pre-normalization
  Eigen::MatrixXd output;         // sum of final activations across scales
  Eigen::MatrixXd probabilities;  // row_softmax(output)
};

// Full forward pass. With update_graphs false the adjacencies stay at their
// initial values throughout (the fixed-graph ablation).
inline ForwardTrace forward(const Model& model, const Eigen::MatrixXd& features,
                            const std::vector<ScaleGraph>& graphs,
                            bool update_graphs = true) {
  model.validate();
  if (graphs.size() != static_cast<std::size_t>(model.scales)) {
    throw InvalidArgument("graph count does not match model scales");
  }
  if (features.cols() != model.input_dim) {
    throw InvalidArgument("feature width does not match model input dimension");
  }
  for (const ScaleGraph& g : graphs) {
    if (g.nodes() != features.rows()) {
      throw InvalidArgument("graph size does not match feature count");
    }
  }

  ForwardTrace trace;
  const int s_count = model.scales, l_count = model.layers;
  trace.activations.resize(s_count);
  trace.preactivations.resize(s_count);
  trace.adjacency_used.resize(s_count);
  trace.adjacency_raw.resize(s_count);
  trace.output = Eigen::MatrixXd::Zero(features.rows(), model.classes);

  for (int s = 0; s < s_count; ++s) {
    Eigen::MatrixXd a_raw = graphs[s].initial;
    Eigen::MatrixXd a_used = graphs[s].normalized;
    trace.activations[s].push_back(features);
    for (int l = 0; l < l_count; ++l) {
      trace.adjacency_raw[s].push_back(a_raw);
      trace.adjacency_used[s].push_back(a_used);
      Eigen::MatrixXd z = layer_preactivation(a_used, trace.activations[s].back(),
                                              model.weights[s][l]);
      trace.preactivations[s].push_back(z);
      trace.activations[s].push_back(
          z.unaryExpr([](double v) { return softplus(v); }));
      if (update_graphs && l + 1 < l_count) {
        a_raw = dynamic_update(graphs[s].normalized, a_raw,
                               trace.activations[s].back(), model.alpha, model.beta[l]);
        a_used = normalize_adjacency(a_raw);
      }
    }
    trace.output += trace.activations[s].back();
  }
  trace.probabilities = row_softmax(trace.output);
  return trace;
}

// Checkpoint: magic "MDGC" | S,L,B,h,C u32 LE | alpha, beta[.] f64 LE |
// weights scale-major, layer-major, row-major f64 LE.
inline void save_model(const Model& model, const std::string& path) {
  model.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
  detail::write_bytes(out, "MDGC", 4);
  detail::write_u32(out, static_cast<std::uint32_t>(model.scales));
  detail::write_u32(out, static_cast<std::uint32_t>(model.layers));
  detail::write_u32(out, static_cast<std::uint32_t>(model.input_dim));
  detail::write_u32(out, static_cast<std::uint32_t>(model.hidden));
  detail::write_u32(out, static_cast<std::uint32_t>(model.classes));
  detail::write_f64(out, model.alpha);
  for (double b : model.beta) detail::write_f64(out, b);
  for (const auto& stack : model.weights) {
    for (const auto& w : stack) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) detail::write_f64(out, w(i, j));
      }
    }
  }
  if (!out) throw FormatError("failed writing checkpoint: " + path);
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  char magic[4];
  detail::read_bytes(in, magic, 4, "checkpoint header");
  if (std::memcmp(magic, "MDGC", 4) != 0) {
    throw FormatError("bad magic in checkpoint: " + path);
  }
  Model model;
  model.scales = static_cast<int>(detail::read_u32(in, "checkpoint header"));
  model.layers = static_cast<int>(detail::read_u32(in, "checkpoint header"));
  model.input_dim = static_cast<int>(detail::read_u32(in, "checkpoint header"));
  model.hidden = static_cast<int>(detail::read_u32(in, "checkpoint header"));
  model.classes = static_cast<int>(detail::read_u32(in, "checkpoint header"));
  if (model.scales < 1 || model.layers < 1 || model.input_dim < 1 ||
      model.hidden < 1 || model.classes < 1) {
    throw FormatError("checkpoint declares a zero dimension: " + path);
  }
  model.alpha = detail::read_f64(in, "checkpoint header");
  model.beta.resize(model.layers - 1);
  for (double& b : model.beta) b = detail::read_f64(in, "checkpoint header");
  model.weights.resize(model.scales);
  for (auto& stack : model.weights) {
    stack.resize(model.layers);
    for (int l = 0; l < model.layers; ++l) {
      Eigen::MatrixXd w(model.dim_in(l), model.dim_out(l));
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
          w(i, j) = detail::read_f64(in, "checkpoint weights");
        }
      }
      stack[l] = std::move(w);
    }
  }
  detail::expect_eof(in, path);
  model.validate();
  return model;
}

}  // namespace mdgcn
