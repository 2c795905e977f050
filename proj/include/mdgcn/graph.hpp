#pragma once

// Multi-hop receptive fields over the superpixel adjacency, the Gaussian
// weighted initial adjacency, and the renormalized convolution operator.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <string>
#include <vector>

#include "mdgcn/errors.hpp"
#include "mdgcn/superpixel.hpp"

namespace mdgcn {

namespace detail {

inline void check_neighbor_sets(const NeighborSets& sets) {
  const int n = static_cast<int>(sets.size());
  for (int i = 0; i < n; ++i) {
    for (int j : sets[i]) {
      if (j < 0 || j >= n) throw InvalidArgument("neighbor index out of range");
      if (j == i) throw InvalidArgument("neighbor sets must not contain self");
      if (!std::binary_search(sets[j].begin(), sets[j].end(), i)) {
        throw InvalidArgument("neighbor sets must be symmetric");
      }
    }
    if (!std::is_sorted(sets[i].begin(), sets[i].end())) {
      throw InvalidArgument("neighbor sets must be sorted");
    }
  }
}

}  // namespace detail

// Grows 1-hop neighbor sets to s hops by repeatedly unioning each field with
// the 1-hop neighborhoods of its members; self never belongs to the field.
inline NeighborSets expand_receptive_field(const NeighborSets& base, int s) {
  if (s < 1) throw InvalidArgument("hop count must be at least 1");
  detail::check_neighbor_sets(base);
  const int n = static_cast<int>(base.size());

  std::vector<std::set<int>> field(n);
  for (int i = 0; i < n; ++i) field[i].insert(base[i].begin(), base[i].end());
  for (int step = 2; step <= s; ++step) {
    std::vector<std::set<int>> next = field;
    for (int i = 0; i < n; ++i) {
      for (int j : field[i]) next[i].insert(base[j].begin(), base[j].end());
      next[i].erase(i);
    }
    field = std::move(next);
  }

  NeighborSets out(n);
  for (int i = 0; i < n; ++i) out[i].assign(field[i].begin(), field[i].end());
  return out;
}

// A[i][j] = exp(-gamma * ||x_i - x_j||^2) on neighbor pairs, zero elsewhere
// and on the diagonal.
inline Eigen::MatrixXd initial_adjacency(const Eigen::MatrixXd& features,
                                         const NeighborSets& neighbors, double gamma) {
  if (!(gamma > 0)) throw InvalidArgument("gamma must be positive");
  if (!features.allFinite()) throw InvalidArgument("features must be finite");
  const int n = static_cast<int>(features.rows());
  if (neighbors.size() != static_cast<std::size_t>(n)) {
    throw InvalidArgument("neighbor sets do not match feature count");
  }

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j : neighbors[i]) {
      if (j <= i) continue;  // fill each unordered pair once
      const double d2 = (features.row(i) - features.row(j)).squaredNorm();
      a(i, j) = a(j, i) = std::exp(-gamma * d2);
    }
  }
  return a;
}

// Renormalization: with self-loops added, scale by inverse square-root degree
// on both sides. Inputs fractionally off symmetric (products computed in
// floating point) are re-symmetrized; anything worse is a contract violation.
inline Eigen::MatrixXd normalize_adjacency(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw InvalidArgument("adjacency must be square");
  const int n = static_cast<int>(a.rows());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
    throw InvalidArgument("adjacency must be symmetric");
  }
  if (a.minCoeff() < 0) throw InvalidArgument("adjacency entries must be non-negative");

  Eigen::MatrixXd tilde = (a + a.transpose()) / 2.0;
  tilde.diagonal().array() += 1.0;
  const Eigen::VectorXd inv_sqrt_deg = tilde.rowwise().sum().array().rsqrt();

  // mirrored assignment keeps the result exactly symmetric
  Eigen::MatrixXd out(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      out(i, j) = out(j, i) = inv_sqrt_deg(i) * tilde(i, j) * inv_sqrt_deg(j);
    }
  }
  return out;
}

struct ScaleGraph {
  int scale = 1;
  NeighborSets neighbor_sets;   // s-hop neighborhoods
  Eigen::MatrixXd initial;      // Gaussian-weighted adjacency over those hops
  Eigen::MatrixXd normalized;   // renormalized operator fed to the layers
  double gamma = 0.2;

  int nodes() const { return static_cast<int>(initial.rows()); }

  void validate() const {
    const int n = nodes();
    if (initial.cols() != n || normalized.rows() != n || normalized.cols() != n ||
        neighbor_sets.size() != static_cast<std::size_t>(n)) {
      throw DataError("scale graph dimensions inconsistent");
    }
    if ((initial - initial.transpose()).cwiseAbs().maxCoeff() != 0.0) {
      throw DataError("initial adjacency not symmetric");
    }
    if (initial.minCoeff() < 0 || initial.maxCoeff() > 1) {
      throw DataError("initial adjacency entries outside [0,1]");
    }
    if (initial.diagonal().cwiseAbs().maxCoeff() != 0.0) {
      throw DataError("initial adjacency has nonzero diagonal");
    }
    for (int i = 0; i < n; ++i) {
      if (normalized(i, i) <= 0) throw DataError("normalized adjacency diagonal not positive");
      for (int j = 0; j < n; ++j) {
        const bool neighbor = std::binary_search(neighbor_sets[i].begin(),
                                                 neighbor_sets[i].end(), j);
        if (neighbor != (initial(i, j) > 0)) {
          throw DataError("adjacency support disagrees with neighbor sets");
        }
      }
    }
  }
};

// Builds one graph per hop scale from shared features and 1-hop adjacency.
inline std::vector<ScaleGraph> build_scale_graphs(const Eigen::MatrixXd& features,
                                                  const NeighborSets& base,
                                                  const std::vector<int>& scales,
                                                  double gamma) {
  if (scales.empty()) throw InvalidArgument("at least one scale is required");
  std::vector<ScaleGraph> graphs;
  graphs.reserve(scales.size());
  for (int s : scales) {
    ScaleGraph g;
    g.scale = s;
    g.gamma = gamma;
    g.neighbor_sets = expand_receptive_field(base, s);
    g.initial = initial_adjacency(features, g.neighbor_sets, gamma);
    g.normalized = normalize_adjacency(g.initial);
    graphs.push_back(std::move(g));
  }
  return graphs;
}

// Debug export: header "M,scale,gamma", then one "i,j,weight" line per
// undirected edge (i < j).
inline void save_graph(const ScaleGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open graph file for writing: " + path);
  out << graph.nodes() << ',' << graph.scale << ','
      << std::setprecision(17) << graph.gamma << '\n';
  for (int i = 0; i < graph.nodes(); ++i) {
    for (int j = i + 1; j < graph.nodes(); ++j) {
      if (graph.initial(i, j) > 0) {
        out << i << ',' << j << ',' << std::setprecision(17) << graph.initial(i, j) << '\n';
      }
    }
  }
  if (!out) throw FormatError("failed writing graph file: " + path);
}

}  // namespace mdgcn
