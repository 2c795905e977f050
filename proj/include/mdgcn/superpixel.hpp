#pragma once

// SLIC superpixel segmentation, node features as mean spectra, spatial
// adjacency between superpixels, and seed-label projection.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mdgcn/cube.hpp"
#include "mdgcn/errors.hpp"
#include "mdgcn/ppm.hpp"

namespace mdgcn {

struct Segmentation {
  int height = 0;
  int width = 0;
  int num_superpixels = 0;
  std::vector<int> assignment;             // per pixel, 0..num_superpixels-1
  std::vector<std::vector<int>> members;   // pixel ids per superpixel, ascending

  int at(int row, int col) const { return assignment[row * width + col]; }

  void validate() const {
    if (assignment.size() != static_cast<std::size_t>(height) * width) {
      throw DataError("segmentation assignment does not cover the image");
    }
    if (num_superpixels < 1 ||
        members.size() != static_cast<std::size_t>(num_superpixels)) {
      throw DataError("segmentation superpixel count inconsistent");
    }
    std::size_t total = 0;
    for (int i = 0; i < num_superpixels; ++i) {
      if (members[i].empty()) throw DataError("empty superpixel in segmentation");
      total += members[i].size();
      for (int p : members[i]) {
        if (assignment[p] != i) throw DataError("member list disagrees with assignment");
      }
    }
    if (total != assignment.size()) throw DataError("member lists do not partition the image");
  }
};

namespace detail {

// Squared spectral gradient: finite difference across each axis with
// replicated borders.
inline double spectral_gradient(const SpectraMatrix& spec, int h, int w, int r, int c) {
  auto px = [&](int rr, int cc) {
    rr = std::clamp(rr, 0, h - 1);
    cc = std::clamp(cc, 0, w - 1);
    return spec.row(rr * w + cc);
  };
  return (px(r + 1, c) - px(r - 1, c)).squaredNorm() +
         (px(r, c + 1) - px(r, c - 1)).squaredNorm();
}

// Grid dimensions whose product best approximates K (candidates are the
// floor/ceil of the per-axis counts implied by the spacing S).
inline std::pair<int, int> slic_grid(int height, int width, int k, double spacing) {
  const auto axis = [](double v) {
    return std::pair(std::max(1, static_cast<int>(std::floor(v))),
                     std::max(1, static_cast<int>(std::ceil(v))));
  };
  const auto [fx, cx] = axis(width / spacing);
  const auto [fy, cy] = axis(height / spacing);
  std::pair<int, int> best{fx, fy};
  long best_err = std::numeric_limits<long>::max();
  for (int nx : {fx, cx}) {
    for (int ny : {fy, cy}) {
      if (nx > width || ny > height) continue;
      const long err = std::labs(static_cast<long>(nx) * ny - k);
      if (err < best_err) {
        best_err = err;
        best = {nx, ny};
      }
    }
  }
  return best;
}

}  // namespace detail

// SLIC: spectral-spatial local k-means with distance
// D = sqrt(d_spec^2 + m^2 * (d_xy / S)^2), S = sqrt(H*W/K), computed over
// standardized spectra, followed by connectivity enforcement.
inline Segmentation slic_segment(const DataCube& cube, int k, double m, int iters) {
  cube.validate();
  const int height = cube.height, width = cube.width;
  const int n = height * width;
  if (k < 1 || k > n) throw InvalidArgument("superpixel count must lie in [1, H*W]");
  if (!(m > 0)) throw InvalidArgument("compactness must be positive");
  if (iters < 1) throw InvalidArgument("iteration cap must be at least 1");

  const SpectraMatrix spec = standardize(cube).spectra;
  const int bands = static_cast<int>(spec.cols());
  const double spacing = std::sqrt(static_cast<double>(n) / k);
  const auto [nx, ny] = detail::slic_grid(height, width, k, spacing);
  const int num_clusters = nx * ny;

  // Center state: continuous (row, col) in pixel coordinates plus a spectrum.
  std::vector<double> center_r, center_c;
  Eigen::MatrixXd center_spec(num_clusters, bands);
  center_r.reserve(num_clusters);
  center_c.reserve(num_clusters);
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      center_r.push_back((iy + 0.5) * height / ny - 0.5);
      center_c.push_back((ix + 0.5) * width / nx - 0.5);
    }
  }

  // Nudge each center to the lowest-gradient pixel in its 3x3 neighborhood.
  // Only strict improvements move a center, and never onto a pixel already
  // holding one, so distinct centers stay distinct (K = H*W stays singleton).
  {
    std::set<std::pair<int, int>> occupied;
    auto cell = [&](int i) {
      return std::pair(std::clamp(static_cast<int>(std::lround(center_r[i])), 0, height - 1),
                       std::clamp(static_cast<int>(std::lround(center_c[i])), 0, width - 1));
    };
    for (int i = 0; i < num_clusters; ++i) occupied.insert(cell(i));
    for (int i = 0; i < num_clusters; ++i) {
      const auto [r0, c0] = cell(i);
      double best = detail::spectral_gradient(spec, height, width, r0, c0);
      std::pair<int, int> pick{-1, -1};
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int r = r0 + dr, c = c0 + dc;
          if (r < 0 || r >= height || c < 0 || c >= width) continue;
          if (r == r0 && c == c0) continue;
          const double g = detail::spectral_gradient(spec, height, width, r, c);
          if (g < best && !occupied.count({r, c})) {
            best = g;
            pick = {r, c};
          }
        }
      }
      if (pick.first >= 0) {
        occupied.erase(cell(i));
        occupied.insert(pick);
        center_r[i] = pick.first;
        center_c[i] = pick.second;
        center_spec.row(i) = spec.row(pick.first * width + pick.second);
      } else {
        const auto [r, c] = cell(i);
        center_spec.row(i) = spec.row(r * width + c);
      }
    }
  }

  std::vector<int> label(n, -1);
  std::vector<double> best_d(n);
  const double m2 = m * m;
  const double inv_s2 = 1.0 / (spacing * spacing);

  for (int pass = 0; pass < iters; ++pass) {
    std::fill(label.begin(), label.end(), -1);
    std::fill(best_d.begin(), best_d.end(), std::numeric_limits<double>::infinity());

    // Assignment within each center's 2S x 2S window; ascending cluster order
    // plus strict comparison makes ties resolve to the lowest cluster index.
    for (int i = 0; i < num_clusters; ++i) {
      const int r0 = std::max(0, static_cast<int>(std::ceil(center_r[i] - spacing)));
      const int r1 = std::min(height - 1, static_cast<int>(std::floor(center_r[i] + spacing)));
      const int c0 = std::max(0, static_cast<int>(std::ceil(center_c[i] - spacing)));
      const int c1 = std::min(width - 1, static_cast<int>(std::floor(center_c[i] + spacing)));
      for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
          const int p = r * width + c;
          const double dr = r - center_r[i], dc = c - center_c[i];
          const double d = (spec.row(p) - center_spec.row(i)).squaredNorm() +
                           m2 * (dr * dr + dc * dc) * inv_s2;
          if (d < best_d[p]) {
            best_d[p] = d;
            label[p] = i;
          }
        }
      }
    }

    // Pixels no window reached attach to the spatially nearest center. Using
    // the spectral distance here would let a cluster claim look-alike pixels
    // arbitrarily far away and balloon past its window; staying spatial keeps
    // strays local, and the connectivity pass folds them in afterwards.
    for (int p = 0; p < n; ++p) {
      if (label[p] >= 0) continue;
      const int r = p / width, c = p % width;
      for (int i = 0; i < num_clusters; ++i) {
        const double dr = r - center_r[i], dc = c - center_c[i];
        const double d = dr * dr + dc * dc;
        if (d < best_d[p]) {
          best_d[p] = d;
          label[p] = i;
        }
      }
    }

    // Update centers to member means; empty clusters keep their state.
    Eigen::MatrixXd sum_spec = Eigen::MatrixXd::Zero(num_clusters, bands);
    std::vector<double> sum_r(num_clusters, 0.0), sum_c(num_clusters, 0.0);
    std::vector<long> count(num_clusters, 0);
    for (int p = 0; p < n; ++p) {
      const int i = label[p];
      sum_spec.row(i) += spec.row(p);
      sum_r[i] += p / width;
      sum_c[i] += p % width;
      ++count[i];
    }
    double movement = 0.0;
    for (int i = 0; i < num_clusters; ++i) {
      if (count[i] == 0) continue;
      const double nr = sum_r[i] / count[i], nc = sum_c[i] / count[i];
      movement = std::max(movement, std::hypot(nr - center_r[i], nc - center_c[i]));
      center_r[i] = nr;
      center_c[i] = nc;
      center_spec.row(i) = sum_spec.row(i) / count[i];
    }
    if (movement < 1e-4 * spacing) break;
  }

  // Connectivity enforcement: label 4-connected components, keep the largest
  // per cluster, and fold every other fragment into the adjacent kept region
  // with the nearest mean spectrum until none remain. Spectral matching is
  // what preserves homogeneity here: the window assignment interleaves
  // same-looking clusters freely (the spatial term only ever adds m^2 * 8 to
  // the distance), so most pixels land in small fragments, and folding those
  // by region size alone snowballs arbitrary look-unalike regions together.
  std::vector<int> comp(n, -1);
  std::vector<long> comp_size;
  std::vector<int> comp_cluster;
  std::vector<int> stack;
  std::vector<Eigen::RowVectorXd> comp_sum;
  for (int p0 = 0; p0 < n; ++p0) {
    if (comp[p0] >= 0) continue;
    const int id = static_cast<int>(comp_size.size());
    comp_size.push_back(0);
    comp_cluster.push_back(label[p0]);
    comp_sum.push_back(Eigen::RowVectorXd::Zero(bands));
    stack.assign(1, p0);
    comp[p0] = id;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++comp_size[id];
      comp_sum[id] += spec.row(p);
      const int r = p / width, c = p % width;
      const int steps[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& rc : steps) {
        if (rc[0] < 0 || rc[0] >= height || rc[1] < 0 || rc[1] >= width) continue;
        const int q = rc[0] * width + rc[1];
        if (comp[q] < 0 && label[q] == label[p0]) {
          comp[q] = id;
          stack.push_back(q);
        }
      }
    }
  }

  const int num_comps = static_cast<int>(comp_size.size());
  std::vector<int> parent(num_comps);
  for (int i = 0; i < num_comps; ++i) parent[i] = i;
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  Eigen::MatrixXd comp_mean(num_comps, bands);
  for (int i = 0; i < num_comps; ++i) {
    comp_mean.row(i) = comp_sum[i] / static_cast<double>(comp_size[i]);
  }

  // Keep the largest component of each cluster (earliest wins ties).
  std::vector<char> resolved(num_comps, 0);
  {
    std::map<int, int> keeper;  // cluster -> component
    for (int i = 0; i < num_comps; ++i) {
      auto [it, inserted] = keeper.try_emplace(comp_cluster[i], i);
      if (!inserted && comp_size[i] > comp_size[it->second]) it->second = i;
    }
    for (const auto& [cluster, i] : keeper) resolved[i] = 1;
  }

  // Precompute each component's set of adjacent components.
  std::vector<std::set<int>> comp_adj(num_comps);
  for (int p = 0; p < n; ++p) {
    const int r = p / width, c = p % width;
    if (c + 1 < width && comp[p] != comp[p + 1]) {
      comp_adj[comp[p]].insert(comp[p + 1]);
      comp_adj[comp[p + 1]].insert(comp[p]);
    }
    if (r + 1 < height && comp[p] != comp[p + width]) {
      comp_adj[comp[p]].insert(comp[p + width]);
      comp_adj[comp[p + width]].insert(comp[p]);
    }
  }

  bool progress = true;
  int remaining = 0;
  for (int i = 0; i < num_comps; ++i) remaining += !resolved[i];
  while (remaining > 0 && progress) {
    progress = false;
    for (int f = 0; f < num_comps; ++f) {
      if (resolved[find(f)]) continue;
      // Nearest adjacent kept region by mean spectrum (the keeper's own mean,
      // not the accreted one); ties to the smallest root id.
      int target = -1;
      double target_d = std::numeric_limits<double>::infinity();
      for (int g : comp_adj[f]) {
        const int root = find(g);
        if (!resolved[root] || root == find(f)) continue;
        const double d = (comp_mean.row(f) - comp_mean.row(root)).squaredNorm();
        if (d < target_d || (d == target_d && root < target)) {
          target_d = d;
          target = root;
        }
      }
      if (target < 0) continue;
      parent[find(f)] = target;
      --remaining;
      progress = true;
    }
  }
  if (remaining > 0) throw Error("connectivity enforcement failed to converge");

  // Compact ids by row-major first appearance.
  Segmentation seg;
  seg.height = height;
  seg.width = width;
  seg.assignment.assign(n, -1);
  std::vector<int> root_to_id(num_comps, -1);
  for (int p = 0; p < n; ++p) {
    const int root = find(comp[p]);
    if (root_to_id[root] < 0) {
      root_to_id[root] = seg.num_superpixels++;
      seg.members.emplace_back();
    }
    seg.assignment[p] = root_to_id[root];
    seg.members[root_to_id[root]].push_back(p);
  }
  return seg;
}

// Mean spectrum of each superpixel's member pixels.
inline Eigen::MatrixXd superpixel_features(const DataCube& cube, const Segmentation& seg) {
  seg.validate();
  if (seg.height != cube.height || seg.width != cube.width) {
    throw InvalidArgument("segmentation does not match cube dimensions");
  }
  Eigen::MatrixXd features(seg.num_superpixels, cube.bands());
  for (int i = 0; i < seg.num_superpixels; ++i) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(cube.bands());
    for (int p : seg.members[i]) sum += cube.spectra.row(p);
    features.row(i) = sum / static_cast<double>(seg.members[i].size());
  }
  return features;
}

using NeighborSets = std::vector<std::vector<int>>;

// N(i) = superpixels sharing a 4-connected pixel boundary with i; no self.
inline NeighborSets base_adjacency(const Segmentation& seg) {
  std::vector<std::set<int>> nb(seg.num_superpixels);
  for (int r = 0; r < seg.height; ++r) {
    for (int c = 0; c < seg.width; ++c) {
      const int a = seg.at(r, c);
      if (c + 1 < seg.width && seg.at(r, c + 1) != a) {
        nb[a].insert(seg.at(r, c + 1));
        nb[seg.at(r, c + 1)].insert(a);
      }
      if (r + 1 < seg.height && seg.at(r + 1, c) != a) {
        nb[a].insert(seg.at(r + 1, c));
        nb[seg.at(r + 1, c)].insert(a);
      }
    }
  }
  NeighborSets out(seg.num_superpixels);
  for (int i = 0; i < seg.num_superpixels; ++i) {
    out[i].assign(nb[i].begin(), nb[i].end());
  }
  return out;
}

struct NodeLabels {
  std::vector<int> labels;  // per superpixel, 0 = unlabeled
  std::vector<int> y_g;     // indices with label > 0, ascending
};

struct ProjectedLabels {
  NodeLabels train;
  NodeLabels validation;
  std::vector<int> mixed_nodes;  // superpixels holding both train and val pixels
};

namespace detail {

// Majority class per superpixel; ties break to the smallest class index.
inline NodeLabels vote(const Segmentation& seg, const std::vector<LabeledPixel>& pixels) {
  std::vector<std::map<int, int>> counts(seg.num_superpixels);
  for (const auto& px : pixels) {
    if (px.row < 0 || px.row >= seg.height || px.col < 0 || px.col >= seg.width) {
      throw InvalidArgument("split pixel outside the image");
    }
    ++counts[seg.at(px.row, px.col)][px.cls];
  }
  NodeLabels out;
  out.labels.assign(seg.num_superpixels, 0);
  for (int i = 0; i < seg.num_superpixels; ++i) {
    int best_class = 0, best_count = 0;
    for (const auto& [cls, cnt] : counts[i]) {  // ascending class order
      if (cnt > best_count) {
        best_count = cnt;
        best_class = cls;
      }
    }
    out.labels[i] = best_class;
    if (best_class > 0) out.y_g.push_back(i);
  }
  return out;
}

}  // namespace detail

// Projects training and validation pixels onto superpixels by majority vote.
// A superpixel holding both kinds keeps only its training label.
inline ProjectedLabels project_labels(const Segmentation& seg, const SplitSpec& split) {
  ProjectedLabels out;
  out.train = detail::vote(seg, split.train_pixels);
  out.validation = detail::vote(seg, split.validation_pixels);
  for (int i = 0; i < seg.num_superpixels; ++i) {
    if (out.train.labels[i] > 0 && out.validation.labels[i] > 0) {
      out.mixed_nodes.push_back(i);
      out.validation.labels[i] = 0;
    }
  }
  if (!out.mixed_nodes.empty()) {
    std::erase_if(out.validation.y_g,
                  [&](int i) { return out.validation.labels[i] == 0; });
  }
  return out;
}

// Text export, one "row,col,superpixel_id" line per pixel.
inline void save_segmentation(const Segmentation& seg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open segmentation file for writing: " + path);
  for (int r = 0; r < seg.height; ++r) {
    for (int c = 0; c < seg.width; ++c) {
      out << r << ',' << c << ',' << seg.at(r, c) << '\n';
    }
  }
  if (!out) throw FormatError("failed writing segmentation file: " + path);
}

// Grayscale first-band backdrop with superpixel boundaries marked in red.
inline void save_boundary_overlay(const DataCube& cube, const Segmentation& seg,
                                  const std::string& path) {
  if (seg.height != cube.height || seg.width != cube.width) {
    throw InvalidArgument("segmentation does not match cube dimensions");
  }
  const auto band = cube.spectra.col(0);
  const double lo = band.minCoeff(), hi = band.maxCoeff();
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;

  PpmImage img;
  img.width = seg.width;
  img.height = seg.height;
  img.rgb.resize(static_cast<std::size_t>(seg.width) * seg.height * 3);
  for (int r = 0; r < seg.height; ++r) {
    for (int c = 0; c < seg.width; ++c) {
      const int p = r * seg.width + c;
      const bool boundary =
          (c + 1 < seg.width && seg.at(r, c + 1) != seg.at(r, c)) ||
          (r + 1 < seg.height && seg.at(r + 1, c) != seg.at(r, c));
      std::uint8_t g = static_cast<std::uint8_t>((band(p) - lo) * scale);
      img.rgb[3 * p + 0] = boundary ? 255 : g;
      img.rgb[3 * p + 1] = boundary ? 0 : g;
      img.rgb[3 * p + 2] = boundary ? 0 : g;
    }
  }
  save_ppm(img, path);
}

}  // namespace mdgcn
