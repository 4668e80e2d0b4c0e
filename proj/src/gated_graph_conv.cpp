// SPDX-License-Identifier: Apache-2.0
#include "g3cn/gated_graph_conv.hpp"

#include <cmath>

#include "g3cn/error.hpp"

namespace g3cn {

namespace {

ad::Tensor off_diagonal_mask(std::size_t n) {
  std::vector<double> m(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    m[i * n + i] = 0.0;
  return ad::Tensor::from({n, n}, std::move(m));
}

ad::Tensor gate(const ad::Tensor &pre, GateActivation act) {
  return act == GateActivation::Sigmoid ? ad::sigmoid(pre) : ad::tanh(pre);
}

void check_shapes(const ad::Tensor &x, const TopologyGraph &a_gauss,
                  const GatedParams &p) {
  if (x.rank() < 3)
    throw Error(ErrorCode::ShapeMismatch,
                "gated unit input must be [..., T, N, C], got " +
                    ad::shape_str(x.shape()));
  const std::size_t N = x.dim(-2), C = x.dim(-1);
  if (p.w_msg.rank() != 2 || p.w_msg.dim(0) != C)
    throw Error(ErrorCode::ShapeMismatch,
                "W_msg " + ad::shape_str(p.w_msg.shape()) + " vs input " +
                    ad::shape_str(x.shape()));
  const std::size_t Cp = p.w_msg.dim(1);
  if (a_gauss.a.rank() < 3 || a_gauss.a.dim(-3) != Cp ||
      a_gauss.a.dim(-1) != N)
    throw Error(ErrorCode::ShapeMismatch,
                "topology " + ad::shape_str(a_gauss.a.shape()) +
                    " incompatible with N=" + std::to_string(N) +
                    ", C'=" + std::to_string(Cp));
  if (p.a_static.shape() != ad::Shape{N, N})
    throw Error(ErrorCode::ShapeMismatch,
                "A_static " + ad::shape_str(p.a_static.shape()));
}

} // namespace

TopologyGraph mask_self_loops(const TopologyGraph &a) {
  if (a.a.rank() < 2 || a.a.dim(-1) != a.a.dim(-2))
    throw Error(ErrorCode::ShapeMismatch,
                "mask_self_loops needs square trailing axes, got " +
                    ad::shape_str(a.a.shape()));
  return {ad::mul(a.a, off_diagonal_mask(a.a.dim(-1))), a.kind};
}

GateState gated_forward_states(const ad::Tensor &x, const TopologyGraph &a_gauss,
                               const GatedParams &p, GateActivation gate_act,
                               const GateOverrides &overrides) {
  check_shapes(x, a_gauss, p);
  const std::size_t C = x.dim(-1), Cp = p.w_msg.dim(1);
  if (C != Cp && !p.w_res.defined())
    throw Error(ErrorCode::ShapeMismatch,
                "W_res required when input and output channels differ");

  GateState s;
  s.h_original = x;
  const ad::Tensor xw = ad::matmul(x, p.w_msg);
  s.h_in = ad::graph_contract(mask_self_loops(a_gauss).a, xw);

  ad::Shape state_shape = x.shape();
  state_shape.back() = Cp;
  if (overrides.update)
    s.z = ad::Tensor::full(state_shape, *overrides.update);
  else
    s.z = gate(ad::add(ad::matmul(x, p.w_zo), ad::matmul(s.h_in, p.w_zi)),
               gate_act);
  if (overrides.reset)
    s.r = ad::Tensor::full(state_shape, *overrides.reset);
  else
    s.r = gate(ad::add(ad::matmul(x, p.w_ro), ad::matmul(s.h_in, p.w_ri)),
               gate_act);

  s.h_middle = ad::tanh(ad::add(ad::mul(s.r, ad::matmul(s.h_in, p.w_mi)),
                                ad::matmul(x, p.w_mo)));
  const ad::Tensor carried = C == Cp ? x : ad::matmul(x, p.w_res);
  s.h_final = ad::add(ad::mul(ad::affine(s.z, -1.0, 1.0), s.h_middle),
                      ad::mul(s.z, carried));
  s.x_update = ad::add(s.h_final, ad::graph_contract(p.a_static, xw));
  return s;
}

ad::Tensor gated_forward(const ad::Tensor &x, const TopologyGraph &a_gauss,
                         const GatedParams &p, GateActivation gate_act,
                         const GateOverrides &overrides) {
  return gated_forward_states(x, a_gauss, p, gate_act, overrides).x_update;
}

ad::Tensor plain_aggregate(const ad::Tensor &x, const TopologyGraph &a_gauss,
                           const GatedParams &p) {
  check_shapes(x, a_gauss, p);
  const ad::Tensor xw = ad::matmul(x, p.w_msg);
  return ad::add(ad::graph_contract(a_gauss.a, xw),
                 ad::graph_contract(p.a_static, xw));
}

FilterMatrix init_static_adjacency(const SkeletonGraph &g) {
  const std::size_t n = g.n_joints();
  FilterMatrix a{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    a(i, i) = 1.0;
  for (const auto &[u, v] : g.edges()) {
    a(u, v) = 1.0;
    a(v, u) = 1.0;
  }
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      deg += a(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      a(i, j) *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
  return a;
}

} // namespace g3cn
