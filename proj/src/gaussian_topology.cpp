// SPDX-License-Identifier: Apache-2.0
#include "g3cn/gaussian_topology.hpp"

#include <cmath>
#include <sstream>

#include "g3cn/error.hpp"

namespace g3cn {

std::size_t reduced_channels(std::size_t in_channels, std::size_t reduction,
                             std::size_t min_channels) {
  if (reduction == 0)
    throw Error(ErrorCode::ConfigError, "reduction factor must be positive");
  const std::size_t r = (in_channels + reduction - 1) / reduction;
  return std::max(r, min_channels);
}

ad::Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng &rng) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (auto &v : w)
    v = rng.uniform(-bound, bound);
  return ad::Tensor::from({fan_in, fan_out}, std::move(w), true);
}

ad::Tensor filter_tensor(const FilterMatrix &phi) {
  return ad::Tensor::from({phi.n, phi.n}, phi.values);
}

TopologyGraph pairwise_correlation(const ad::Tensor &x,
                                   const CorrelationBranchParams &p,
                                   TopologyKind kind) {
  if (x.rank() < 3 || p.w_src.rank() != 2 || p.w_src.shape() != p.w_dst.shape() ||
      p.w_src.dim(0) != x.dim(-1))
    throw Error(ErrorCode::ShapeMismatch,
                "pairwise_correlation: x " + ad::shape_str(x.shape()) +
                    ", weights " + ad::shape_str(p.w_src.shape()));
  // mean_T commutes with the linear maps.
  const ad::Tensor x_mean = ad::reduce_mean(x, -3);
  const ad::Tensor src = ad::matmul(x_mean, p.w_src);
  const ad::Tensor dst = ad::matmul(x_mean, p.w_dst);
  return {ad::tanh(ad::pairwise_diff(src, dst)), kind};
}

TopologyGraph correction_coefficients(const TopologyGraph &a_aux,
                                      const ad::Tensor &phi) {
  if (a_aux.a.rank() < 3 || phi.rank() != 2 || phi.dim(0) != a_aux.a.dim(-1))
    throw Error(ErrorCode::ShapeMismatch,
                "correction_coefficients: graph " +
                    ad::shape_str(a_aux.a.shape()) + ", filter " +
                    ad::shape_str(phi.shape()));
  // coe[c, i, j] = sum_k a'[c, i, k] phi[k, j]
  return {ad::matmul(a_aux.a, phi), TopologyKind::Coefficient};
}

TopologyGraph normalize_coefficients(const TopologyGraph &coe) {
  return {ad::normalize_rows_max_abs(coe.a, kNormEps),
          TopologyKind::NormalizedCoefficient};
}

TopologyGraph refine_topology(const TopologyGraph &a_prelim,
                              const TopologyGraph &coe_norm,
                              const RefineParams &p) {
  if (a_prelim.a.shape() != coe_norm.a.shape())
    throw Error(ErrorCode::ShapeMismatch,
                "refine_topology: " + ad::shape_str(a_prelim.a.shape()) +
                    " vs " + ad::shape_str(coe_norm.a.shape()));
  const ad::Tensor corrected = ad::mul(a_prelim.a, coe_norm.a);
  return {ad::channel_mix(corrected, p.w_expand, p.bias),
          TopologyKind::Gaussian};
}

TopologyStages gaussian_topology_stages(const ad::Tensor &x,
                                        const ad::Tensor &phi,
                                        const GaussianTopologyParams &params,
                                        TopologyMode mode) {
  TopologyStages s;
  s.preliminary = pairwise_correlation(x, params.main, TopologyKind::Preliminary);
  if (mode == TopologyMode::Baseline) {
    s.gaussian = {ad::channel_mix(s.preliminary.a, params.refine.w_expand,
                                  params.refine.bias),
                  TopologyKind::Gaussian};
    return s;
  }
  s.auxiliary =
      pairwise_correlation(x, params.auxiliary, TopologyKind::Auxiliary);
  s.coefficient = correction_coefficients(s.auxiliary, phi);
  s.normalized = normalize_coefficients(s.coefficient);
  s.gaussian = refine_topology(s.preliminary, s.normalized, params.refine);
  return s;
}

TopologyGraph gaussian_topology_forward(const ad::Tensor &x,
                                        const ad::Tensor &phi,
                                        const GaussianTopologyParams &params,
                                        TopologyMode mode) {
  return gaussian_topology_stages(x, phi, params, mode).gaussian;
}

std::string topology_to_csv(const TopologyGraph &g) {
  const auto &a = g.a;
  if (a.rank() < 3)
    throw Error(ErrorCode::ShapeMismatch, "topology_to_csv needs [C, N, N]");
  const std::size_t C = a.dim(-3), N = a.dim(-1);
  const auto data = a.data();
  std::ostringstream os;
  os.precision(17);
  for (std::size_t c = 0; c < C; ++c) {
    os << "channel," << c << '\n';
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < N; ++j)
        os << (j ? "," : "") << data[(c * N + i) * N + j];
      os << '\n';
    }
  }
  return os.str();
}

} // namespace g3cn
