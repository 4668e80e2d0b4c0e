// SPDX-License-Identifier: Apache-2.0
#include "g3cn/network.hpp"

#include <cstdio>
#include <sstream>

#include "g3cn/error.hpp"
#include "json.hpp"

namespace g3cn {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

bool NetworkConfig::operator==(const NetworkConfig &o) const {
  const bool same_skeleton =
      (skeleton == nullptr && o.skeleton == nullptr) ||
      (skeleton && o.skeleton && *skeleton == *o.skeleton);
  return same_skeleton && blocks == o.blocks && n_classes == o.n_classes &&
         gate_activation == o.gate_activation &&
         topology_mode == o.topology_mode &&
         aggregation_mode == o.aggregation_mode && reduction == o.reduction &&
         min_corr_channels == o.min_corr_channels &&
         temporal_kernel == o.temporal_kernel && xi_init == o.xi_init &&
         xi_bias == o.xi_bias && bn_momentum == o.bn_momentum &&
         bn_eps == o.bn_eps && head_init_scale == o.head_init_scale &&
         input_frames == o.input_frames && input_norm == o.input_norm;
}

NetworkConfig default_network_config(std::shared_ptr<const SkeletonGraph> skeleton,
                                     std::size_t n_classes) {
  NetworkConfig cfg;
  cfg.skeleton = std::move(skeleton);
  cfg.n_classes = n_classes;
  const std::size_t plan[] = {64, 64, 64, 64, 128, 128, 128, 256, 256, 256};
  std::size_t in = 3;
  for (std::size_t b = 0; b < 10; ++b) {
    const std::size_t stride = (b == 4 || b == 7) ? 2 : 1;
    cfg.blocks.push_back({in, plan[b], stride, 3});
    in = plan[b];
  }
  return cfg;
}

void validate(const NetworkConfig &cfg) {
  auto fail = [](const std::string &msg) {
    throw Error(ErrorCode::ConfigError, msg);
  };
  if (!cfg.skeleton)
    fail("network config has no skeleton");
  if (cfg.blocks.empty())
    fail("network needs at least one block");
  if (cfg.n_classes < 1)
    fail("n_classes must be positive");
  if (cfg.temporal_kernel % 2 == 0)
    fail("temporal_kernel must be odd");
  if (cfg.reduction == 0 || cfg.min_corr_channels == 0)
    fail("reduction and min_corr_channels must be positive");
  if (cfg.input_frames == 0)
    fail("input_frames must be positive");
  if (cfg.blocks.front().in_channels != 3)
    fail("first block must take 3 input channels (x, y, z)");
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const auto &blk = cfg.blocks[b];
    const auto where = "block " + std::to_string(b) + ": ";
    if (blk.in_channels == 0 || blk.out_channels == 0)
      fail(where + "channel counts must be positive");
    if (blk.temporal_stride != 1 && blk.temporal_stride != 2)
      fail(where + "temporal_stride must be 1 or 2");
    if (blk.n_branches < 1)
      fail(where + "n_branches must be >= 1");
    if (b > 0 && blk.in_channels != cfg.blocks[b - 1].out_channels)
      fail(where + "in_channels does not chain from the previous block");
  }
}

namespace {

template <typename E>
E parse_enum(const json &j, const char *key,
             std::initializer_list<std::pair<const char *, E>> options, E def) {
  if (!j.contains(key))
    return def;
  const auto s = j.at(key).get<std::string>();
  for (const auto &[name, value] : options)
    if (s == name)
      return value;
  throw Error(ErrorCode::ConfigError,
              std::string("unknown value '") + s + "' for " + key);
}

const char *gate_name(GateActivation g) {
  return g == GateActivation::Sigmoid ? "sigmoid" : "tanh";
}
const char *topology_name(TopologyMode m) {
  return m == TopologyMode::Gaussian ? "gaussian" : "baseline";
}
const char *aggregation_name(AggregationMode m) {
  return m == AggregationMode::Gated ? "gated" : "plain";
}

} // namespace

std::string network_config_to_json(const NetworkConfig &cfg) {
  json j;
  auto blocks = json::array();
  for (const auto &b : cfg.blocks)
    blocks.push_back({{"in", b.in_channels},
                      {"out", b.out_channels},
                      {"stride", b.temporal_stride},
                      {"branches", b.n_branches}});
  j["blocks"] = blocks;
  j["n_classes"] = cfg.n_classes;
  if (cfg.skeleton)
    j["skeleton"] = json::parse(skeleton_to_json_text(*cfg.skeleton));
  j["gate_activation"] = gate_name(cfg.gate_activation);
  j["topology_mode"] = topology_name(cfg.topology_mode);
  j["aggregation_mode"] = aggregation_name(cfg.aggregation_mode);
  j["reduction"] = cfg.reduction;
  j["min_corr_channels"] = cfg.min_corr_channels;
  j["temporal_kernel"] = cfg.temporal_kernel;
  j["xi_init"] = cfg.xi_init == XiInit::Glorot ? "glorot" : "zero";
  j["xi_bias"] = cfg.xi_bias;
  j["bn_momentum"] = cfg.bn_momentum;
  j["bn_eps"] = cfg.bn_eps;
  j["head_init_scale"] = cfg.head_init_scale;
  j["input_frames"] = cfg.input_frames;
  j["input_norm"] = cfg.input_norm;
  return j.dump();
}

NetworkConfig network_config_from_json(const std::string &text) {
  try {
    const json j = json::parse(text);
    NetworkConfig cfg;
    for (const auto &b : j.at("blocks"))
      cfg.blocks.push_back({b.at("in").get<std::size_t>(),
                            b.at("out").get<std::size_t>(),
                            b.value("stride", std::size_t{1}),
                            b.value("branches", std::size_t{3})});
    cfg.n_classes = j.at("n_classes").get<std::size_t>();
    if (j.contains("skeleton")) {
      if (!j.at("skeleton").is_object())
        throw Error(ErrorCode::ConfigError,
                    "network.skeleton must be an inline definition here");
      cfg.skeleton = std::make_shared<const SkeletonGraph>(
          skeleton_from_json_text(j.at("skeleton").dump()));
    }
    cfg.gate_activation = parse_enum(
        j, "gate_activation",
        {{"sigmoid", GateActivation::Sigmoid}, {"tanh", GateActivation::Tanh}},
        cfg.gate_activation);
    cfg.topology_mode = parse_enum(
        j, "topology_mode",
        {{"gaussian", TopologyMode::Gaussian},
         {"baseline", TopologyMode::Baseline}},
        cfg.topology_mode);
    cfg.aggregation_mode = parse_enum(
        j, "aggregation_mode",
        {{"gated", AggregationMode::Gated}, {"plain", AggregationMode::Plain}},
        cfg.aggregation_mode);
    cfg.xi_init = parse_enum(j, "xi_init",
                             {{"glorot", XiInit::Glorot}, {"zero", XiInit::Zero}},
                             cfg.xi_init);
    cfg.reduction = j.value("reduction", cfg.reduction);
    cfg.min_corr_channels = j.value("min_corr_channels", cfg.min_corr_channels);
    cfg.temporal_kernel = j.value("temporal_kernel", cfg.temporal_kernel);
    cfg.xi_bias = j.value("xi_bias", cfg.xi_bias);
    cfg.bn_momentum = j.value("bn_momentum", cfg.bn_momentum);
    cfg.bn_eps = j.value("bn_eps", cfg.bn_eps);
    cfg.head_init_scale = j.value("head_init_scale", cfg.head_init_scale);
    cfg.input_frames = j.value("input_frames", cfg.input_frames);
    cfg.input_norm = j.value("input_norm", cfg.input_norm);
    return cfg;
  } catch (const json::exception &e) {
    throw Error(ErrorCode::ConfigError, std::string("network config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

ad::Tensor spatial_unit_forward(const ad::Tensor &x, const ad::Tensor &phi,
                                const SpatialUnitParams &p,
                                const UnitModes &modes,
                                TopologyGraph *topology_out) {
  TopologyGraph a = gaussian_topology_forward(x, phi, p.topology, modes.topology);
  if (topology_out)
    *topology_out = a;
  if (modes.aggregation == AggregationMode::Plain)
    return plain_aggregate(x, a, p.gated);
  return gated_forward(x, a, p.gated, modes.gate);
}

ad::Tensor block_forward(const ad::Tensor &x, const ad::Tensor &phi,
                         BlockParams &p, const BlockConfig &cfg,
                         const UnitModes &modes, std::size_t temporal_kernel,
                         bool training,
                         std::vector<TopologyGraph> *topologies) {
  if (x.rank() != 4 || x.dim(3) != cfg.in_channels)
    throw Error(ErrorCode::ShapeMismatch,
                "block input " + ad::shape_str(x.shape()) + " expected " +
                    std::to_string(cfg.in_channels) + " channels");
  ad::Tensor spatial;
  for (const auto &unit : p.units) {
    TopologyGraph a;
    ad::Tensor y = spatial_unit_forward(x, phi, unit, modes,
                                        topologies ? &a : nullptr);
    if (topologies)
      topologies->push_back(a);
    spatial = spatial.defined() ? ad::add(spatial, y) : y;
  }
  ad::Tensor y = ad::temporal_conv(spatial, p.tcn_weight, {},
                                   cfg.temporal_stride, temporal_kernel / 2);
  y = ad::relu(ad::batch_norm(y, p.bn_gamma, p.bn_beta, p.bn, training));
  const ad::Tensor residual =
      p.residual_weight.defined()
          ? ad::temporal_conv(x, p.residual_weight, {}, cfg.temporal_stride, 0)
          : x;
  return ad::add(y, residual);
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Network::Network(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  validate(cfg_);
  const auto &skel = *cfg_.skeleton;
  const std::size_t N = skel.n_joints();
  phi_ = filter_tensor(gaussian_filter(shortest_path_distances(skel)));
  const FilterMatrix a_static = init_static_adjacency(skel);

  Rng rng(seed);
  if (cfg_.input_norm) {
    input_gamma_ = ad::Tensor::full({N * 3}, 1.0, true);
    input_beta_ = ad::Tensor::zeros({N * 3}, true);
    input_bn_.momentum = cfg_.bn_momentum;
    input_bn_.eps = cfg_.bn_eps;
    input_bn_.running_mean.assign(N * 3, 0.0);
    input_bn_.running_var.assign(N * 3, 1.0);
  }
  const bool gaussian = cfg_.topology_mode == TopologyMode::Gaussian;
  const bool gated = cfg_.aggregation_mode == AggregationMode::Gated;
  for (const auto &bc : cfg_.blocks) {
    const std::size_t C = bc.in_channels, Cp = bc.out_channels;
    const std::size_t Cr = reduced_channels(C, cfg_.reduction, cfg_.min_corr_channels);
    BlockParams bp;
    for (std::size_t m = 0; m < bc.n_branches; ++m) {
      SpatialUnitParams u;
      u.topology.main = {glorot_uniform(C, Cr, rng), glorot_uniform(C, Cr, rng)};
      if (gaussian)
        u.topology.auxiliary = {glorot_uniform(C, Cr, rng),
                                glorot_uniform(C, Cr, rng)};
      u.topology.refine.w_expand = cfg_.xi_init == XiInit::Zero
                                       ? ad::Tensor::zeros({Cr, Cp}, true)
                                       : glorot_uniform(Cr, Cp, rng);
      if (cfg_.xi_bias)
        u.topology.refine.bias = ad::Tensor::zeros({Cp}, true);
      u.gated.w_msg = glorot_uniform(C, Cp, rng);
      u.gated.a_static = ad::Tensor::from({N, N}, a_static.values, true);
      if (gated) {
        u.gated.w_zo = glorot_uniform(C, Cp, rng);
        u.gated.w_zi = glorot_uniform(Cp, Cp, rng);
        u.gated.w_ro = glorot_uniform(C, Cp, rng);
        u.gated.w_ri = glorot_uniform(Cp, Cp, rng);
        u.gated.w_mo = glorot_uniform(C, Cp, rng);
        u.gated.w_mi = glorot_uniform(Cp, Cp, rng);
        if (C != Cp)
          u.gated.w_res = glorot_uniform(C, Cp, rng);
      }
      bp.units.push_back(std::move(u));
    }
    const std::size_t K = cfg_.temporal_kernel;
    {
      const double bound = std::sqrt(6.0 / static_cast<double>(K * (Cp + Cp)));
      std::vector<double> w(K * Cp * Cp);
      for (auto &v : w)
        v = rng.uniform(-bound, bound);
      bp.tcn_weight = ad::Tensor::from({K, Cp, Cp}, std::move(w), true);
    }
    bp.bn_gamma = ad::Tensor::full({Cp}, 1.0, true);
    bp.bn_beta = ad::Tensor::zeros({Cp}, true);
    bp.bn.momentum = cfg_.bn_momentum;
    bp.bn.eps = cfg_.bn_eps;
    bp.bn.running_mean.assign(Cp, 0.0);
    bp.bn.running_var.assign(Cp, 1.0);
    if (C != Cp || bc.temporal_stride != 1) {
      ad::Tensor w = glorot_uniform(C, Cp, rng);
      bp.residual_weight =
          ad::Tensor::from({1, C, Cp}, std::vector<double>(w.data().begin(),
                                                           w.data().end()),
                           true);
    }
    blocks_.push_back(std::move(bp));
  }
  const std::size_t Cl = cfg_.blocks.back().out_channels;
  head_weight_ = glorot_uniform(Cl, cfg_.n_classes, rng);
  for (auto &v : head_weight_.mutable_data())
    v *= cfg_.head_init_scale;
  head_bias_ = ad::Tensor::zeros({cfg_.n_classes}, true);
}

UnitModes Network::modes() const {
  return {cfg_.topology_mode, cfg_.aggregation_mode, cfg_.gate_activation};
}

ad::Tensor Network::forward(const ad::Tensor &x_in, bool training,
                            ForwardTrace *trace) {
  ad::Tensor x = x_in;
  if (x.rank() == 3)
    x = ad::Tensor::from(
        {1, x_in.dim(0), x_in.dim(1), x_in.dim(2)},
        std::vector<double>(x_in.data().begin(), x_in.data().end()));
  const std::size_t N = cfg_.skeleton->n_joints();
  if (x.rank() != 4 || x.dim(2) != N || x.dim(3) != 3)
    throw Error(ErrorCode::ShapeMismatch,
                "network input must be [B, T, " + std::to_string(N) +
                    ", 3], got " + ad::shape_str(x_in.shape()));
  if (cfg_.input_norm) {
    const std::size_t B = x.dim(0), T = x.dim(1);
    x = ad::reshape(ad::batch_norm(ad::reshape(x, {B, T, N * 3}), input_gamma_,
                                   input_beta_, input_bn_, training),
                    {B, T, N, 3});
  }
  if (trace)
    trace->topologies.assign(blocks_.size(), {});
  const UnitModes m = modes();
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    x = block_forward(x, phi_, blocks_[b], cfg_.blocks[b], m,
                      cfg_.temporal_kernel, training,
                      trace ? &trace->topologies[b] : nullptr);
  const ad::Tensor pooled = ad::reduce_mean(ad::reduce_mean(x, 1), 1);
  return ad::add(ad::matmul(pooled, head_weight_), head_bias_);
}

std::vector<ad::NamedTensor> Network::parameters() const {
  std::vector<ad::NamedTensor> out;
  auto push = [&](const std::string &name, const ad::Tensor &t) {
    if (t.defined())
      out.push_back({name, t});
  };
  push("input_bn.gamma", input_gamma_);
  push("input_bn.beta", input_beta_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto &bp = blocks_[b];
    const std::string bn = "block" + std::to_string(b);
    for (std::size_t m = 0; m < bp.units.size(); ++m) {
      const auto &u = bp.units[m];
      const std::string un = bn + ".unit" + std::to_string(m) + ".";
      push(un + "psi1", u.topology.main.w_src);
      push(un + "psi2", u.topology.main.w_dst);
      push(un + "psi3", u.topology.auxiliary.w_src);
      push(un + "psi4", u.topology.auxiliary.w_dst);
      push(un + "xi", u.topology.refine.w_expand);
      push(un + "xi_bias", u.topology.refine.bias);
      push(un + "w_msg", u.gated.w_msg);
      push(un + "a_static", u.gated.a_static);
      push(un + "w_zo", u.gated.w_zo);
      push(un + "w_zi", u.gated.w_zi);
      push(un + "w_ro", u.gated.w_ro);
      push(un + "w_ri", u.gated.w_ri);
      push(un + "w_mo", u.gated.w_mo);
      push(un + "w_mi", u.gated.w_mi);
      push(un + "w_res", u.gated.w_res);
    }
    push(bn + ".tcn.weight", bp.tcn_weight);
    push(bn + ".bn.gamma", bp.bn_gamma);
    push(bn + ".bn.beta", bp.bn_beta);
    push(bn + ".residual.weight", bp.residual_weight);
  }
  push("head.weight", head_weight_);
  push("head.bias", head_bias_);
  return out;
}

std::vector<NamedBuffer> Network::buffers() {
  std::vector<NamedBuffer> out;
  if (cfg_.input_norm) {
    out.push_back({"input_bn.running_mean", &input_bn_.running_mean});
    out.push_back({"input_bn.running_var", &input_bn_.running_var});
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string bn = "block" + std::to_string(b) + ".bn.";
    out.push_back({bn + "running_mean", &blocks_[b].bn.running_mean});
    out.push_back({bn + "running_var", &blocks_[b].bn.running_var});
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto &p : parameters())
    n += p.tensor.numel();
  return n;
}

std::string Network::describe() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "network: %zu blocks, %zu classes, %zu joints (%s)\n",
                cfg_.blocks.size(), cfg_.n_classes, cfg_.skeleton->n_joints(),
                cfg_.skeleton->name().c_str());
  os << line;
  std::snprintf(line, sizeof line, "modes: topology=%s aggregation=%s gate=%s\n",
                topology_name(cfg_.topology_mode),
                aggregation_name(cfg_.aggregation_mode),
                gate_name(cfg_.gate_activation));
  os << line;
  for (std::size_t b = 0; b < cfg_.blocks.size(); ++b) {
    const auto &bc = cfg_.blocks[b];
    std::snprintf(line, sizeof line,
                  "block%zu: %zu -> %zu channels, stride %zu, %zu branches, C''=%zu\n",
                  b, bc.in_channels, bc.out_channels, bc.temporal_stride,
                  bc.n_branches,
                  reduced_channels(bc.in_channels, cfg_.reduction,
                                   cfg_.min_corr_channels));
    os << line;
  }
  os << '\n';
  std::snprintf(line, sizeof line, "%-36s %-16s %12s\n", "parameter", "shape", "count");
  os << line;
  std::size_t total = 0;
  for (const auto &p : parameters()) {
    std::snprintf(line, sizeof line, "%-36s %-16s %12zu\n", p.name.c_str(),
                  ad::shape_str(p.tensor.shape()).c_str(), p.tensor.numel());
    os << line;
    total += p.tensor.numel();
  }
  std::snprintf(line, sizeof line, "%-36s %-16s %12zu\n", "total", "", total);
  os << line;
  return os.str();
}

AveragedTopology averaged_topology(Network &net, const ad::Tensor &sample,
                                   std::size_t block_index) {
  if (block_index >= net.blocks().size())
    throw Error(ErrorCode::InvalidBlock,
                "block " + std::to_string(block_index) + " of " +
                    std::to_string(net.blocks().size()));
  ad::NoGradGuard no_grad;
  ForwardTrace trace;
  net.forward(sample, false, &trace);
  const auto &units = trace.topologies[block_index];
  const auto &first = units.front().a;
  const std::size_t C = first.dim(-3), N = first.dim(-1);
  std::vector<double> acc(C * N * N, 0.0);
  for (const auto &u : units) {
    const auto d = u.a.data();
    for (std::size_t k = 0; k < acc.size(); ++k)
      acc[k] += d[k];
  }
  for (auto &v : acc)
    v /= static_cast<double>(units.size());
  AveragedTopology out;
  out.mean = {N, std::vector<double>(N * N, 0.0)};
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < N * N; ++k)
      out.mean.values[k] += acc[c * N * N + k];
  for (auto &v : out.mean.values)
    v /= static_cast<double>(C);
  out.per_channel = ad::Tensor::from({C, N, N}, std::move(acc));
  return out;
}

} // namespace g3cn
