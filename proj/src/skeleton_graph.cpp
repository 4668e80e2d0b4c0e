// SPDX-License-Identifier: Apache-2.0
#include "g3cn/skeleton_graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "g3cn/error.hpp"

namespace g3cn {

SkeletonGraph::SkeletonGraph(std::size_t n_joints, std::vector<Edge> edges,
                             std::string name)
    : n_joints_(n_joints), edges_(std::move(edges)), name_(std::move(name)),
      adjacency_(n_joints) {
  if (n_joints_ < 2)
    throw Error(ErrorCode::InvalidArgument, "skeleton needs at least 2 joints");
  std::set<Edge> seen;
  for (const auto &[a, b] : edges_) {
    if (a >= n_joints_ || b >= n_joints_)
      throw Error(ErrorCode::InvalidEdge,
                  "edge (" + std::to_string(a) + "," + std::to_string(b) +
                      ") outside [0, " + std::to_string(n_joints_) + ")");
    if (a == b)
      throw Error(ErrorCode::InvalidEdge,
                  "self loop at joint " + std::to_string(a));
    if (!seen.insert({std::min(a, b), std::max(a, b)}).second)
      throw Error(ErrorCode::InvalidEdge, "duplicate edge (" +
                                              std::to_string(a) + "," +
                                              std::to_string(b) + ")");
    adjacency_[a].push_back(b);
    adjacency_[b].push_back(a);
  }
  for (auto &nb : adjacency_)
    std::sort(nb.begin(), nb.end());

  std::vector<bool> reached(n_joints_, false);
  std::deque<std::size_t> queue{0};
  reached[0] = true;
  while (!queue.empty()) {
    const auto v = queue.front();
    queue.pop_front();
    for (auto w : adjacency_[v])
      if (!reached[w]) {
        reached[w] = true;
        queue.push_back(w);
      }
  }
  for (std::size_t v = 0; v < n_joints_; ++v)
    if (!reached[v])
      throw Error(ErrorCode::DisconnectedGraph,
                  "joint " + std::to_string(v) + " unreachable from joint 0");
}

void SkeletonGraph::set_limbs(std::vector<std::vector<std::size_t>> limbs) {
  for (const auto &limb : limbs) {
    if (limb.empty())
      throw Error(ErrorCode::InvalidArgument, "empty limb");
    for (auto j : limb)
      if (j >= n_joints_)
        throw Error(ErrorCode::InvalidArgument,
                    "limb joint " + std::to_string(j) + " out of range");
  }
  limbs_ = std::move(limbs);
}

SkeletonGraph
SkeletonGraph::permuted(const std::vector<std::size_t> &perm) const {
  if (perm.size() != n_joints_)
    throw Error(ErrorCode::InvalidArgument, "permutation size mismatch");
  std::vector<Edge> edges;
  edges.reserve(edges_.size());
  for (const auto &[a, b] : edges_)
    edges.emplace_back(perm[a], perm[b]);
  SkeletonGraph out(n_joints_, std::move(edges), name_);
  auto limbs = limbs_;
  for (auto &limb : limbs)
    for (auto &j : limb)
      j = perm[j];
  out.set_limbs(std::move(limbs));
  return out;
}

bool SkeletonGraph::operator==(const SkeletonGraph &other) const {
  return n_joints_ == other.n_joints_ && edges_ == other.edges_ &&
         name_ == other.name_ && limbs_ == other.limbs_;
}

SkeletonGraph build_skeleton(std::size_t n_joints, std::vector<Edge> edges,
                             std::string name) {
  return SkeletonGraph(n_joints, std::move(edges), std::move(name));
}

DistanceMatrix shortest_path_distances(const SkeletonGraph &g) {
  const std::size_t n = g.n_joints();
  DistanceMatrix d{n, std::vector<int>(n * n, -1)};
  for (std::size_t src = 0; src < n; ++src) {
    std::deque<std::size_t> queue{src};
    d(src, src) = 0;
    while (!queue.empty()) {
      const auto v = queue.front();
      queue.pop_front();
      for (auto w : g.neighbors()[v])
        if (d(src, w) < 0) {
          d(src, w) = d(src, v) + 1;
          queue.push_back(w);
        }
    }
  }
  return d;
}

FilterMatrix gaussian_filter(const DistanceMatrix &d) {
  FilterMatrix phi{d.n, std::vector<double>(d.values.size())};
  for (std::size_t k = 0; k < d.values.size(); ++k) {
    const double dist = d.values[k];
    phi.values[k] = std::exp(-dist * dist);
  }
  return phi;
}

SkeletonGraph skeleton_from_json_text(const std::string &text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    const auto n = j.at("n_joints").get<std::size_t>();
    std::vector<Edge> edges;
    for (const auto &e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2)
        throw Error(ErrorCode::InvalidEdge, "edge must be a 2-element array");
      edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
    }
    SkeletonGraph g(n, std::move(edges), j.value("name", "skeleton"));
    if (j.contains("limbs"))
      g.set_limbs(j.at("limbs").get<std::vector<std::vector<std::size_t>>>());
    return g;
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::ConfigError,
                std::string("skeleton definition: ") + e.what());
  }
}

SkeletonGraph load_skeleton(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorCode::IoError, "cannot open skeleton file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return skeleton_from_json_text(ss.str());
}

std::string skeleton_to_json_text(const SkeletonGraph &g) {
  nlohmann::json j;
  j["name"] = g.name();
  j["n_joints"] = g.n_joints();
  auto edges = nlohmann::json::array();
  for (const auto &[a, b] : g.edges())
    edges.push_back({a, b});
  j["edges"] = edges;
  if (!g.limbs().empty())
    j["limbs"] = g.limbs();
  return j.dump();
}

} // namespace g3cn
