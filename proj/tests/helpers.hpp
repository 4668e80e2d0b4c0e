// SPDX-License-Identifier: Apache-2.0
#ifndef G3CN_TESTS_HELPERS_HPP
#define G3CN_TESTS_HELPERS_HPP

#include <memory>
#include <string>

#include "g3cn/gated_graph_conv.hpp"
#include "g3cn/gaussian_topology.hpp"
#include "g3cn/network.hpp"
#include "g3cn/random.hpp"
#include "g3cn/skeleton_graph.hpp"
#include "oracles.hpp"

namespace testutil {

using g3cn::ad::Shape;
using g3cn::ad::Tensor;

inline std::string source_path(const std::string &rel) {
  return std::string(G3CN_SOURCE_DIR) + "/" + rel;
}

inline std::shared_ptr<const g3cn::SkeletonGraph> toy9() {
  static auto g = std::make_shared<const g3cn::SkeletonGraph>(
      g3cn::load_skeleton(source_path("data/skeletons/toy9.json")));
  return g;
}

inline Tensor random_tensor(const Shape &shape, g3cn::Rng &rng, double scale = 1.0,
                            bool requires_grad = false) {
  return Tensor::from(shape, oracle::random_vec(g3cn::ad::numel_of(shape), rng, scale),
                      requires_grad);
}

/// Random connected tree on n joints: joint k attaches to a random earlier one.
inline g3cn::SkeletonGraph random_tree(std::size_t n, g3cn::Rng &rng) {
  std::vector<g3cn::Edge> edges;
  for (std::size_t k = 1; k < n; ++k)
    edges.push_back({static_cast<std::size_t>(rng.below(k)), k});
  return g3cn::build_skeleton(n, edges, "tree");
}

inline g3cn::GaussianTopologyParams random_topology_params(std::size_t C, std::size_t Cr,
                                                           std::size_t Cp, bool bias,
                                                           g3cn::Rng &rng) {
  g3cn::GaussianTopologyParams p;
  p.main = {random_tensor({C, Cr}, rng, 0.7), random_tensor({C, Cr}, rng, 0.7)};
  p.auxiliary = {random_tensor({C, Cr}, rng, 0.7), random_tensor({C, Cr}, rng, 0.7)};
  p.refine.w_expand = random_tensor({Cr, Cp}, rng, 0.7);
  if (bias)
    p.refine.bias = random_tensor({Cp}, rng, 0.1);
  return p;
}

inline g3cn::GatedParams random_gated_params(std::size_t C, std::size_t Cp, std::size_t N,
                                             g3cn::Rng &rng) {
  g3cn::GatedParams p;
  p.w_zo = random_tensor({C, Cp}, rng, 0.5);
  p.w_ro = random_tensor({C, Cp}, rng, 0.5);
  p.w_mo = random_tensor({C, Cp}, rng, 0.5);
  p.w_zi = random_tensor({Cp, Cp}, rng, 0.5);
  p.w_ri = random_tensor({Cp, Cp}, rng, 0.5);
  p.w_mi = random_tensor({Cp, Cp}, rng, 0.5);
  if (C != Cp)
    p.w_res = random_tensor({C, Cp}, rng, 0.5);
  p.w_msg = random_tensor({C, Cp}, rng, 0.5);
  p.a_static = random_tensor({N, N}, rng, 0.3);
  return p;
}

inline oracle::GatedWeights to_oracle(const g3cn::GatedParams &p) {
  using oracle::to_vec;
  oracle::GatedWeights w;
  w.w_zo = to_vec(p.w_zo);
  w.w_ro = to_vec(p.w_ro);
  w.w_mo = to_vec(p.w_mo);
  w.w_zi = to_vec(p.w_zi);
  w.w_ri = to_vec(p.w_ri);
  w.w_mi = to_vec(p.w_mi);
  if (p.w_res.defined())
    w.w_res = to_vec(p.w_res);
  w.w_msg = to_vec(p.w_msg);
  w.a_static = to_vec(p.a_static);
  return w;
}

/// Element (i0, ..., ik) of a permuted copy: out[..., i, ...] = in[..., perm[i], ...]
/// along `axis`.
inline Tensor permute_axis(const Tensor &t, int axis, const std::vector<std::size_t> &perm) {
  const auto &shape = t.shape();
  const std::size_t ax = axis < 0 ? shape.size() + axis : axis;
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < ax; ++k)
    outer *= shape[k];
  for (std::size_t k = ax + 1; k < shape.size(); ++k)
    inner *= shape[k];
  const std::size_t n = shape[ax];
  std::vector<double> out(t.numel());
  const auto d = t.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < inner; ++k)
        out[(o * n + i) * inner + k] = d[(o * n + perm[i]) * inner + k];
  return Tensor::from(shape, out);
}

} // namespace testutil

#endif // G3CN_TESTS_HELPERS_HPP
