// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gated_graph_conv.hpp
 * @brief  GRU-gated aggregation over a learned topology.
 *
 * The joint's own feature is the GRU state, the features aggregated from the
 * other joints (self loops masked out) are the GRU input:
 *
 *   H_o   = X
 *   H_in  = ((1 - I) * A_G) contracted with X W
 *   Z     = g(H_o W_zo + H_in W_zi)
 *   R     = g(H_o W_ro + H_in W_ri)
 *   H_mid = tanh(R * (H_in W_mi) + H_o W_mo)
 *   H_fin = (1 - Z) * H_mid + Z * P(H_o)
 *   out   = H_fin + A_static contracted with X W
 *
 * g is the gate activation (sigmoid by default), P is the identity when the
 * channel count is preserved and the learned projection W_res otherwise.
 */
#ifndef G3CN_GATED_GRAPH_CONV_HPP
#define G3CN_GATED_GRAPH_CONV_HPP

#include <optional>

#include "g3cn/autodiff.hpp"
#include "g3cn/gaussian_topology.hpp"
#include "g3cn/skeleton_graph.hpp"

namespace g3cn {

enum class GateActivation { Sigmoid, Tanh };

struct GatedParams {
  ad::Tensor w_zo, w_ro, w_mo; // C x C'
  ad::Tensor w_zi, w_ri, w_mi; // C' x C'
  ad::Tensor w_res;            // C x C', only when C != C'
  ad::Tensor w_msg;            // C x C'
  ad::Tensor a_static;         // N x N
};

/// Test hooks that pin a gate to a constant instead of computing it.
struct GateOverrides {
  std::optional<double> update;
  std::optional<double> reset;
};

struct GateState {
  ad::Tensor h_original;
  ad::Tensor h_in;
  ad::Tensor z;
  ad::Tensor r;
  ad::Tensor h_middle;
  ad::Tensor h_final;
  ad::Tensor x_update;
};

/// Zeros the diagonal of every channel.
TopologyGraph mask_self_loops(const TopologyGraph &a);

GateState gated_forward_states(const ad::Tensor &x, const TopologyGraph &a_gauss,
                               const GatedParams &p,
                               GateActivation gate_act = GateActivation::Sigmoid,
                               const GateOverrides &overrides = {});

ad::Tensor gated_forward(const ad::Tensor &x, const TopologyGraph &a_gauss,
                         const GatedParams &p,
                         GateActivation gate_act = GateActivation::Sigmoid,
                         const GateOverrides &overrides = {});

/// Ungated aggregation: A_G contracted with X W plus the static branch.
ad::Tensor plain_aggregate(const ad::Tensor &x, const TopologyGraph &a_gauss,
                           const GatedParams &p);

/// D^{-1/2} (Adj + I) D^{-1/2} with D the degree of Adj + I.
FilterMatrix init_static_adjacency(const SkeletonGraph &g);

} // namespace g3cn

#endif // G3CN_GATED_GRAPH_CONV_HPP
