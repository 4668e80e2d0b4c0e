// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cstdio>

#include "g3cn/error.hpp"
#include "g3cn/random.hpp"
#include "g3cn/trainer.hpp"

namespace g3cn {

namespace {

constexpr std::size_t kN = 5;
constexpr std::size_t kT = 4;
constexpr std::size_t kB = 2;
constexpr std::size_t kCin = 3;
constexpr std::size_t kChid = 8;

using ad::NamedTensor;
using ad::Shape;
using ad::Tensor;

Tensor random_tensor(const Shape &shape, Rng &rng, double scale = 1.0) {
  std::vector<double> v(ad::numel_of(shape));
  for (auto &x : v)
    x = scale * rng.normal();
  return Tensor::from(shape, std::move(v), true);
}

/// sum(y * R) for a fixed random R, so every output entry matters.
Tensor project(const Tensor &y, const Tensor &r) { return ad::sum(ad::mul(y, r)); }

Tensor projection_for(const Shape &shape, Rng &rng) {
  std::vector<double> v(ad::numel_of(shape));
  for (auto &x : v)
    x = rng.normal();
  return Tensor::from(shape, std::move(v));
}

struct Suite {
  const ad::GradCheckOptions &opts;
  std::uint64_t seed;
  GradCheckSuiteReport &report;

  void check(const std::string &name, const std::function<Tensor()> &f,
             const std::vector<NamedTensor> &params) {
    GradCheckCase c{name, seed, ad::finite_diff_check(f, params, opts)};
    report.passed = report.passed && c.report.passed;
    report.max_rel_err = std::max(report.max_rel_err, c.report.max_rel_err);
    report.cases.push_back(std::move(c));
  }

  /// Checks `op` applied to inputs through a random projection of its output.
  void unary_case(const std::string &name, Rng &rng,
                  const std::vector<NamedTensor> &inputs,
                  const std::function<Tensor()> &op) {
    Tensor r;
    {
      ad::NoGradGuard g;
      r = projection_for(op().shape(), rng);
    }
    check(name, [op, r] { return project(op(), r); }, inputs);
  }
};

void ops_scope(Suite &s, Rng &rng) {
  const Tensor x = random_tensor({kB, kT, kN, kChid}, rng);
  const Tensor y = random_tensor({kB, kT, kN, kChid}, rng);
  const Tensor row = random_tensor({kChid}, rng);
  const Tensor one = random_tensor({1}, rng);

  s.unary_case("add", rng, {{"a", x}, {"b", y}}, [=] { return ad::add(x, y); });
  s.unary_case("add.broadcast", rng, {{"a", x}, {"b", row}},
               [=] { return ad::add(x, row); });
  s.unary_case("sub.broadcast", rng, {{"a", x}, {"b", row}},
               [=] { return ad::sub(x, row); });
  s.unary_case("mul", rng, {{"a", x}, {"b", y}}, [=] { return ad::mul(x, y); });
  s.unary_case("mul.scalar", rng, {{"a", x}, {"s", one}},
               [=] { return ad::mul(x, one); });
  s.unary_case("mul.self", rng, {{"a", x}}, [=] { return ad::mul(x, x); });
  s.unary_case("affine", rng, {{"x", x}}, [=] { return ad::affine(x, -0.7, 0.3); });
  s.unary_case("tanh", rng, {{"x", x}}, [=] { return ad::tanh(x); });
  s.unary_case("sigmoid", rng, {{"x", x}}, [=] { return ad::sigmoid(x); });
  s.unary_case("relu", rng, {{"x", x}}, [=] { return ad::relu(x); });
  s.unary_case("reshape", rng, {{"x", x}},
               [=] { return ad::reshape(x, {kB * kT, kN * kChid}); });

  const Tensor w = random_tensor({kChid, kCin}, rng);
  s.unary_case("matmul", rng, {{"x", x}, {"w", w}}, [=] { return ad::matmul(x, w); });
  for (int axis : {0, 1, 2, 3})
    s.unary_case("reduce_mean.axis" + std::to_string(axis), rng, {{"x", x}},
                 [=] { return ad::reduce_mean(x, axis); });
  s.check("sum", [=] { return ad::sum(ad::tanh(x)); }, {{"x", x}});
  s.check("mean", [=] { return ad::mean(ad::tanh(x)); }, {{"x", x}});

  const Tensor a2 = random_tensor({kN, kN}, rng);
  const Tensor a3 = random_tensor({kChid, kN, kN}, rng);
  const Tensor a4 = random_tensor({kB, kChid, kN, kN}, rng);
  s.unary_case("graph_contract.shared", rng, {{"a", a2}, {"x", x}},
               [=] { return ad::graph_contract(a2, x); });
  s.unary_case("graph_contract.channel", rng, {{"a", a3}, {"x", x}},
               [=] { return ad::graph_contract(a3, x); });
  s.unary_case("graph_contract.batched", rng, {{"a", a4}, {"x", x}},
               [=] { return ad::graph_contract(a4, x); });

  const Tensor u = random_tensor({kB, kN, kCin}, rng);
  const Tensor v = random_tensor({kB, kN, kCin}, rng);
  s.unary_case("pairwise_diff", rng, {{"u", u}, {"v", v}},
               [=] { return ad::pairwise_diff(u, v); });

  const Tensor mix_w = random_tensor({kChid, kCin}, rng);
  const Tensor mix_b = random_tensor({kCin}, rng);
  s.unary_case("channel_mix", rng, {{"x", a4}, {"w", mix_w}, {"bias", mix_b}},
               [=] { return ad::channel_mix(a4, mix_w, mix_b); });
  s.unary_case("normalize_rows_max_abs", rng, {{"x", a4}},
               [=] { return ad::normalize_rows_max_abs(a4, kNormEps); });

  const Tensor cw = random_tensor({3, kChid, kCin}, rng, 0.5);
  const Tensor cb = random_tensor({kCin}, rng);
  s.unary_case("temporal_conv.stride1", rng, {{"x", x}, {"w", cw}, {"bias", cb}},
               [=] { return ad::temporal_conv(x, cw, cb, 1, 1); });
  s.unary_case("temporal_conv.stride2", rng, {{"x", x}, {"w", cw}, {"bias", cb}},
               [=] { return ad::temporal_conv(x, cw, cb, 2, 1); });

  const Tensor gamma = random_tensor({kChid}, rng);
  const Tensor beta = random_tensor({kChid}, rng);
  s.unary_case("batch_norm", rng, {{"x", x}, {"gamma", gamma}, {"beta", beta}},
               [=] {
                 ad::BatchNormState st;
                 return ad::batch_norm(x, gamma, beta, st, true);
               });

  const Tensor logits = random_tensor({kB * 3, 4}, rng);
  const std::vector<std::size_t> labels{0, 3, 1, 2, 2, 0};
  s.check("softmax_cross_entropy",
          [=] { return ad::softmax_cross_entropy(logits, labels); },
          {{"logits", logits}});
}

GaussianTopologyParams random_topology_params(std::size_t C, std::size_t Cp,
                                              bool bias, Rng &rng) {
  const std::size_t Cr = reduced_channels(C, 8, 8);
  GaussianTopologyParams p;
  p.main = {glorot_uniform(C, Cr, rng), glorot_uniform(C, Cr, rng)};
  p.auxiliary = {glorot_uniform(C, Cr, rng), glorot_uniform(C, Cr, rng)};
  p.refine.w_expand = glorot_uniform(Cr, Cp, rng);
  if (bias)
    p.refine.bias = random_tensor({Cp}, rng, 0.1);
  return p;
}

GatedParams random_gated_params(std::size_t C, std::size_t Cp,
                                const SkeletonGraph &g, Rng &rng) {
  GatedParams p;
  p.w_zo = glorot_uniform(C, Cp, rng);
  p.w_zi = glorot_uniform(Cp, Cp, rng);
  p.w_ro = glorot_uniform(C, Cp, rng);
  p.w_ri = glorot_uniform(Cp, Cp, rng);
  p.w_mo = glorot_uniform(C, Cp, rng);
  p.w_mi = glorot_uniform(Cp, Cp, rng);
  if (C != Cp)
    p.w_res = glorot_uniform(C, Cp, rng);
  p.w_msg = glorot_uniform(C, Cp, rng);
  p.a_static = Tensor::from({kN, kN}, init_static_adjacency(g).values, true);
  return p;
}

std::vector<NamedTensor> named(const GaussianTopologyParams &p) {
  std::vector<NamedTensor> out{{"psi1", p.main.w_src}, {"psi2", p.main.w_dst},
                               {"psi3", p.auxiliary.w_src},
                               {"psi4", p.auxiliary.w_dst},
                               {"xi", p.refine.w_expand}};
  if (p.refine.bias.defined())
    out.push_back({"xi_bias", p.refine.bias});
  return out;
}

std::vector<NamedTensor> named(const GatedParams &p) {
  std::vector<NamedTensor> out{{"w_zo", p.w_zo}, {"w_zi", p.w_zi},
                               {"w_ro", p.w_ro}, {"w_ri", p.w_ri},
                               {"w_mo", p.w_mo}, {"w_mi", p.w_mi},
                               {"w_msg", p.w_msg}, {"a_static", p.a_static}};
  if (p.w_res.defined())
    out.push_back({"w_res", p.w_res});
  return out;
}

std::vector<NamedTensor> concat(std::vector<NamedTensor> a,
                                const std::vector<NamedTensor> &b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void unit_scope(Suite &s, Rng &rng) {
  const SkeletonGraph g = grad_check_skeleton();
  const Tensor phi = filter_tensor(gaussian_filter(shortest_path_distances(g)));
  const Tensor x = random_tensor({kB, kT, kN, kCin}, rng);
  const Tensor h = random_tensor({kB, kT, kN, kChid}, rng);

  const auto topo = random_topology_params(kCin, kChid, true, rng);
  s.unary_case("topology.correlation", rng,
               concat({{"x", x}}, {{"psi1", topo.main.w_src}, {"psi2", topo.main.w_dst}}),
               [=] { return pairwise_correlation(x, topo.main).a; });
  s.unary_case("topology.coefficient", rng,
               {{"x", x}, {"psi3", topo.auxiliary.w_src}, {"psi4", topo.auxiliary.w_dst}},
               [=] {
                 return correction_coefficients(
                            pairwise_correlation(x, topo.auxiliary, TopologyKind::Auxiliary),
                            phi)
                     .a;
               });
  s.unary_case("topology.normalized", rng,
               {{"x", x}, {"psi3", topo.auxiliary.w_src}, {"psi4", topo.auxiliary.w_dst}},
               [=] {
                 return normalize_coefficients(
                            correction_coefficients(
                                pairwise_correlation(x, topo.auxiliary, TopologyKind::Auxiliary),
                                phi))
                     .a;
               });
  for (auto mode : {TopologyMode::Gaussian, TopologyMode::Baseline}) {
    const std::string tag = mode == TopologyMode::Gaussian ? "gaussian" : "baseline";
    auto params = named(topo);
    if (mode == TopologyMode::Baseline)
      params = {{"psi1", topo.main.w_src}, {"psi2", topo.main.w_dst},
                {"xi", topo.refine.w_expand}, {"xi_bias", topo.refine.bias}};
    s.unary_case("topology.forward." + tag, rng, concat({{"x", x}}, params),
                 [=] { return gaussian_topology_forward(x, phi, topo, mode).a; });
  }

  for (std::size_t C : {kCin, kChid}) {
    const Tensor in = C == kCin ? x : h;
    const auto tp = random_topology_params(C, kChid, false, rng);
    const auto gp = random_gated_params(C, kChid, g, rng);
    for (auto act : {GateActivation::Sigmoid, GateActivation::Tanh}) {
      const std::string tag = std::string(act == GateActivation::Sigmoid ? "sigmoid" : "tanh") +
                              ".c" + std::to_string(C);
      const Tensor a_g = random_tensor({kB, kChid, kN, kN}, rng);
      s.unary_case("gated_forward." + tag, rng,
                   concat({{"x", in}, {"a_gauss", a_g}}, named(gp)), [=] {
                     return gated_forward(in, {a_g, TopologyKind::Gaussian}, gp, act);
                   });
    }
    for (auto topo_mode : {TopologyMode::Baseline, TopologyMode::Gaussian})
      for (auto agg : {AggregationMode::Plain, AggregationMode::Gated}) {
        const UnitModes modes{topo_mode, agg, GateActivation::Sigmoid};
        std::vector<NamedTensor> params{{"x", in},
                                        {"psi1", tp.main.w_src},
                                        {"psi2", tp.main.w_dst},
                                        {"xi", tp.refine.w_expand},
                                        {"w_msg", gp.w_msg},
                                        {"a_static", gp.a_static}};
        if (topo_mode == TopologyMode::Gaussian) {
          params.push_back({"psi3", tp.auxiliary.w_src});
          params.push_back({"psi4", tp.auxiliary.w_dst});
        }
        if (agg == AggregationMode::Gated)
          for (auto &p : named(gp))
            if (p.name != "w_msg" && p.name != "a_static")
              params.push_back(p);
        const std::string tag =
            std::string(topo_mode == TopologyMode::Gaussian ? "gaussian" : "baseline") +
            "." + (agg == AggregationMode::Gated ? "gated" : "plain") + ".c" +
            std::to_string(C);
        const SpatialUnitParams unit{tp, gp};
        s.unary_case("spatial_unit." + tag, rng, params,
                     [=] { return spatial_unit_forward(in, phi, unit, modes); });
      }
  }
}

void network_scope(Suite &s, Rng &rng) {
  auto g = std::make_shared<const SkeletonGraph>(grad_check_skeleton());
  NetworkConfig cfg;
  cfg.skeleton = g;
  cfg.n_classes = 3;
  cfg.input_frames = kT;
  cfg.blocks = {{kCin, kChid, 1, 3}, {kChid, kChid, 2, 3}};
  auto net = std::make_shared<Network>(cfg, rng.next());
  // Random non-trivial head so every path carries gradient.
  for (auto &v : net->head_bias().mutable_data())
    v = 0.1 * rng.normal();
  // With a single sample the normalized input has zero temporal mean, so a
  // zero input shift would leave the first correlation map exactly at the
  // non-differentiable zero row of the max-abs normalization.
  for (auto &v : net->input_norm_beta().mutable_data())
    v = rng.normal();
  for (auto &v : net->input_norm_gamma().mutable_data())
    v = 1.0 + 0.1 * rng.normal();
  const Tensor x = random_tensor({1, kT, kN, kCin}, rng);
  const std::vector<std::size_t> labels{2};
  auto params = net->parameters();
  params.insert(params.begin(), {"input", x});
  s.check(
      "network.two_block",
      [net, x, labels] {
        return ad::softmax_cross_entropy(net->forward(x, true), labels);
      },
      params);
}

} // namespace

SkeletonGraph grad_check_skeleton() {
  return SkeletonGraph(kN, {{0, 1}, {1, 2}, {2, 3}, {1, 4}}, "gradcheck5");
}

GradCheckSuiteReport run_grad_check_suite(GradCheckScope scope,
                                          std::uint64_t first_seed,
                                          std::size_t n_seeds,
                                          const ad::GradCheckOptions &opts) {
  GradCheckSuiteReport report;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t k = 0; k < n_seeds; ++k) {
    const std::uint64_t seed = first_seed + k;
    Rng rng(mix_seed(seed, 0x6C));
    Suite suite{opts, seed, report};
    switch (scope) {
    case GradCheckScope::Ops: ops_scope(suite, rng); break;
    case GradCheckScope::Unit: unit_scope(suite, rng); break;
    case GradCheckScope::Network: network_scope(suite, rng); break;
    }
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string grad_check_report_text(const GradCheckSuiteReport &report) {
  std::string out;
  char line[256];
  for (const auto &c : report.cases) {
    std::snprintf(line, sizeof line, "%-4s seed=%-4llu %-40s checked=%-6zu max_rel_err=%.3e",
                  c.report.passed ? "ok" : "FAIL",
                  static_cast<unsigned long long>(c.seed), c.name.c_str(),
                  c.report.checked, c.report.max_rel_err);
    out += line;
    if (!c.report.passed) {
      std::snprintf(line, sizeof line, " (worst %s[%zu]: analytic %.9g numeric %.9g)",
                    c.report.worst.tensor.c_str(), c.report.worst.index,
                    c.report.worst.analytic, c.report.worst.numeric);
      out += line;
    }
    out += '\n';
  }
  std::snprintf(line, sizeof line, "%s: %zu cases, max_rel_err=%.3e, %.2f s\n",
                report.passed ? "PASSED" : "FAILED", report.cases.size(),
                report.max_rel_err, report.seconds);
  out += line;
  return out;
}

} // namespace g3cn
