// SPDX-License-Identifier: Apache-2.0
/**
 * @file   network.hpp
 * @brief  Spatio-temporal skeleton classifier built from gated Gaussian
 *         topology units.
 *
 * block(x) = relu(BN(TCN(sum_m unit_m(x)))) + residual(x)
 * net(x)   = head(mean_{T,N}(block_L(...block_1(BN_in(x)))))
 *
 * BN_in normalizes each of the N*3 (joint, axis) input channels.
 */
#ifndef G3CN_NETWORK_HPP
#define G3CN_NETWORK_HPP

#include <memory>
#include <string>
#include <vector>

#include "g3cn/autodiff.hpp"
#include "g3cn/gated_graph_conv.hpp"
#include "g3cn/gaussian_topology.hpp"
#include "g3cn/gradcheck.hpp"
#include "g3cn/skeleton_graph.hpp"

namespace g3cn {

enum class AggregationMode { Gated, Plain };
enum class XiInit { Glorot, Zero };

struct BlockConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t temporal_stride = 1;
  std::size_t n_branches = 3;

  bool operator==(const BlockConfig &) const = default;
};

struct NetworkConfig {
  std::vector<BlockConfig> blocks;
  std::size_t n_classes = 0;
  std::shared_ptr<const SkeletonGraph> skeleton;
  GateActivation gate_activation = GateActivation::Sigmoid;
  TopologyMode topology_mode = TopologyMode::Gaussian;
  AggregationMode aggregation_mode = AggregationMode::Gated;
  std::size_t reduction = 8;
  std::size_t min_corr_channels = 8;
  std::size_t temporal_kernel = 9;
  XiInit xi_init = XiInit::Glorot;
  bool xi_bias = false;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double head_init_scale = 1.0;
  std::size_t input_frames = 32;
  /// Normalize every (joint, axis) input channel before the first block.
  bool input_norm = true;

  bool operator==(const NetworkConfig &other) const;
};

/// Ten blocks, channels (64,64,64,64,128,128,128,256,256,256), temporal
/// stride 2 entering blocks 5 and 8, three spatial branches each.
NetworkConfig default_network_config(std::shared_ptr<const SkeletonGraph> skeleton,
                                     std::size_t n_classes);

/// Throws ConfigError when the plan is inconsistent.
void validate(const NetworkConfig &cfg);

std::string network_config_to_json(const NetworkConfig &cfg);
/// Parses a network object. `skeleton` may be an inline definition object.
NetworkConfig network_config_from_json(const std::string &text);

struct UnitModes {
  TopologyMode topology = TopologyMode::Gaussian;
  AggregationMode aggregation = AggregationMode::Gated;
  GateActivation gate = GateActivation::Sigmoid;
};

struct SpatialUnitParams {
  GaussianTopologyParams topology;
  GatedParams gated;
};

struct BlockParams {
  std::vector<SpatialUnitParams> units;
  ad::Tensor tcn_weight; // [K, C_out, C_out]; no bias, normalization follows
  ad::Tensor bn_gamma;
  ad::Tensor bn_beta;
  ad::BatchNormState bn;
  ad::Tensor residual_weight; // [1, C_in, C_out] when the shape changes
};

/// Topology produced by every unit of every block during one forward pass.
struct ForwardTrace {
  std::vector<std::vector<TopologyGraph>> topologies;
};

/// Runs one spatial unit. `topology_out` receives A_G when non-null.
ad::Tensor spatial_unit_forward(const ad::Tensor &x, const ad::Tensor &phi,
                                const SpatialUnitParams &p,
                                const UnitModes &modes,
                                TopologyGraph *topology_out = nullptr);

ad::Tensor block_forward(const ad::Tensor &x, const ad::Tensor &phi,
                         BlockParams &p, const BlockConfig &cfg,
                         const UnitModes &modes, std::size_t temporal_kernel,
                         bool training,
                         std::vector<TopologyGraph> *topologies = nullptr);

struct NamedBuffer {
  std::string name;
  std::vector<double> *values;
};

class Network {
public:
  Network(NetworkConfig cfg, std::uint64_t seed);

  const NetworkConfig &config() const { return cfg_; }
  const ad::Tensor &phi() const { return phi_; }
  UnitModes modes() const;

  /// x: [B, T, N, 3] (or [T, N, 3] for one sample) -> logits [B, K].
  ad::Tensor forward(const ad::Tensor &x, bool training,
                     ForwardTrace *trace = nullptr);

  /// Learnable tensors in a fixed order with hierarchical names.
  std::vector<ad::NamedTensor> parameters() const;
  /// Non-learnable state (normalization running statistics).
  std::vector<NamedBuffer> buffers();
  std::size_t parameter_count() const;
  /// Plain-text table of every parameter tensor and the total.
  std::string describe() const;

  std::vector<BlockParams> &blocks() { return blocks_; }
  const std::vector<BlockParams> &blocks() const { return blocks_; }
  ad::Tensor &head_weight() { return head_weight_; }
  ad::Tensor &input_norm_gamma() { return input_gamma_; }
  ad::Tensor &input_norm_beta() { return input_beta_; }
  ad::BatchNormState &input_norm_state() { return input_bn_; }
  ad::Tensor &head_bias() { return head_bias_; }

private:
  NetworkConfig cfg_;
  ad::Tensor phi_;
  ad::Tensor input_gamma_; // [N * 3]
  ad::Tensor input_beta_;
  ad::BatchNormState input_bn_;
  std::vector<BlockParams> blocks_;
  ad::Tensor head_weight_;
  ad::Tensor head_bias_;
};

struct AveragedTopology {
  ad::Tensor per_channel; ///< [C', N, N], mean over the block's units
  FilterMatrix mean;      ///< N x N, additionally averaged over channels
};

/// Mean of A_G over the M units of `block_index`, evaluated on one sample
/// ([T, N, 3]) in evaluation mode. Throws InvalidBlock.
AveragedTopology averaged_topology(Network &net, const ad::Tensor &sample,
                                   std::size_t block_index);

} // namespace g3cn

#endif // G3CN_NETWORK_HPP
