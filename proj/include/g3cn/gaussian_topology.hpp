// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gaussian_topology.hpp
 * @brief  Channel-wise topology refined by Gaussian-filtered correction
 *         coefficients.
 *
 * Pipeline for one spatial unit with input x: [L..., T, N, C]
 *
 *   A     = tanh(mean_T(x W_src1) (-) mean_T(x W_dst1))     C'' x N x N
 *   A'    = tanh(mean_T(x W_src2) (-) mean_T(x W_dst2))     C'' x N x N
 *   Coe   = A' Phi          (row i of A' filtered by column j of Phi)
 *   Coe_n = Coe / max_j |Coe[., i, j]|     per channel and row
 *   A_G   = xi(A * Coe_n)                                   C'  x N x N
 *
 * where (-) is the pairwise difference out[c, i, j] = u[i, c] - v[j, c] and
 * xi mixes channels at every (i, j).
 */
#ifndef G3CN_GAUSSIAN_TOPOLOGY_HPP
#define G3CN_GAUSSIAN_TOPOLOGY_HPP

#include "g3cn/autodiff.hpp"
#include "g3cn/random.hpp"
#include "g3cn/skeleton_graph.hpp"

namespace g3cn {

/// Rows of a normalized coefficient graph with max-abs below this are zeroed.
inline constexpr double kNormEps = 1e-8;

enum class TopologyKind {
  Preliminary,
  Auxiliary,
  Coefficient,
  NormalizedCoefficient,
  Gaussian,
};

struct TopologyGraph {
  ad::Tensor a; // [L..., C, N, N]
  TopologyKind kind = TopologyKind::Preliminary;
};

/// Two linear maps C -> C'' (one for the source joint, one for the target).
struct CorrelationBranchParams {
  ad::Tensor w_src;
  ad::Tensor w_dst;
};

/// Channel expansion C'' -> C'. `bias` is undefined unless enabled.
struct RefineParams {
  ad::Tensor w_expand;
  ad::Tensor bias;
};

enum class TopologyMode {
  Gaussian, ///< correction coefficients applied
  Baseline, ///< coefficients frozen to one: A_G = xi(A)
};

struct GaussianTopologyParams {
  CorrelationBranchParams main;      ///< produces A
  CorrelationBranchParams auxiliary; ///< produces A'; unused in Baseline mode
  RefineParams refine;
};

/// C'' = max(ceil(C / reduction), min_channels).
std::size_t reduced_channels(std::size_t in_channels, std::size_t reduction,
                             std::size_t min_channels);

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
ad::Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng &rng);

/// Phi as a constant [N, N] tensor.
ad::Tensor filter_tensor(const FilterMatrix &phi);

TopologyGraph pairwise_correlation(const ad::Tensor &x,
                                   const CorrelationBranchParams &p,
                                   TopologyKind kind = TopologyKind::Preliminary);

TopologyGraph correction_coefficients(const TopologyGraph &a_aux,
                                      const ad::Tensor &phi);

TopologyGraph normalize_coefficients(const TopologyGraph &coe);

TopologyGraph refine_topology(const TopologyGraph &a_prelim,
                              const TopologyGraph &coe_norm,
                              const RefineParams &p);

/// Every intermediate of one topology evaluation. Only `preliminary` and
/// `gaussian` are populated in Baseline mode.
struct TopologyStages {
  TopologyGraph preliminary;
  TopologyGraph auxiliary;
  TopologyGraph coefficient;
  TopologyGraph normalized;
  TopologyGraph gaussian;
};

TopologyStages gaussian_topology_stages(const ad::Tensor &x,
                                        const ad::Tensor &phi,
                                        const GaussianTopologyParams &params,
                                        TopologyMode mode);

TopologyGraph gaussian_topology_forward(const ad::Tensor &x,
                                        const ad::Tensor &phi,
                                        const GaussianTopologyParams &params,
                                        TopologyMode mode = TopologyMode::Gaussian);

/// Writes one N x N block per channel, each preceded by a "channel,<c>" row.
/// Only the first sample is written when the graph has leading axes.
std::string topology_to_csv(const TopologyGraph &g);

} // namespace g3cn

#endif // G3CN_GAUSSIAN_TOPOLOGY_HPP
