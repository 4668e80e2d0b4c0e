// SPDX-License-Identifier: Apache-2.0
/**
 * @file   skeleton_graph.hpp
 * @brief  Physical skeleton graph, hop distances and the Gaussian filter.
 */
#ifndef G3CN_SKELETON_GRAPH_HPP
#define G3CN_SKELETON_GRAPH_HPP

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace g3cn {

using Edge = std::pair<std::size_t, std::size_t>;

/// Joints as vertices, bones as undirected edges. Always connected.
class SkeletonGraph {
public:
  /// Validates and builds. Throws InvalidEdge for out-of-range endpoints,
  /// self loops or duplicates, DisconnectedGraph if some joint is unreachable.
  SkeletonGraph(std::size_t n_joints, std::vector<Edge> edges,
                std::string name = "skeleton");

  std::size_t n_joints() const { return n_joints_; }
  const std::vector<Edge> &edges() const { return edges_; }
  const std::string &name() const { return name_; }
  /// Optional named joint groups (limbs) carried by the definition file.
  const std::vector<std::vector<std::size_t>> &limbs() const { return limbs_; }
  void set_limbs(std::vector<std::vector<std::size_t>> limbs);
  const std::vector<std::vector<std::size_t>> &neighbors() const {
    return adjacency_;
  }

  /// Relabels joints: joint i of this graph becomes joint perm[i].
  SkeletonGraph permuted(const std::vector<std::size_t> &perm) const;

  bool operator==(const SkeletonGraph &other) const;

private:
  std::size_t n_joints_;
  std::vector<Edge> edges_;
  std::string name_;
  std::vector<std::vector<std::size_t>> adjacency_;
  std::vector<std::vector<std::size_t>> limbs_;
};

/// Dense N x N matrix in row-major order.
template <typename T> struct SquareMatrix {
  std::size_t n = 0;
  std::vector<T> values;

  T operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  T &operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
};

/// Hop counts between joints.
using DistanceMatrix = SquareMatrix<int>;
/// phi[i][j] = exp(-d[i][j]^2); column j is the filter kernel for target j.
using FilterMatrix = SquareMatrix<double>;

SkeletonGraph build_skeleton(std::size_t n_joints, std::vector<Edge> edges,
                             std::string name = "skeleton");

/// One breadth-first search per joint.
DistanceMatrix shortest_path_distances(const SkeletonGraph &g);

FilterMatrix gaussian_filter(const DistanceMatrix &d);

/// Reads {"name", "n_joints", "edges": [[a, b], ...], "limbs"?: [[...]]}.
SkeletonGraph load_skeleton(const std::string &path);
SkeletonGraph skeleton_from_json_text(const std::string &text);
std::string skeleton_to_json_text(const SkeletonGraph &g);

} // namespace g3cn

#endif // G3CN_SKELETON_GRAPH_HPP
