// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>

#include "g3cn/autodiff.hpp"
#include "g3cn/error.hpp"

namespace g3cn::ad {

namespace {

double g_tanh_fault = 0.0;

using Backward = std::function<void(Node &)>;

Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor *> inputs,
                   Backward backward) {
  bool need = false;
  if (grad_enabled()) {
    for (const Tensor *t : inputs)
      need = need || (t->defined() && t->requires_grad());
  }
  Tensor out = Tensor::from(std::move(shape), std::move(data), need);
  if (need) {
    auto &node = *out.node();
    for (const Tensor *t : inputs) {
      if (t->defined())
        node.parents.push_back(t->node());
    }
    node.backward_fn = std::move(backward);
  }
  return out;
}

[[noreturn]] void shape_error(const char *op, const Tensor &a,
                              const Tensor &b) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " +
                                            shape_str(a.shape()) + " vs " +
                                            shape_str(b.shape()));
}

void check_broadcast(const char *op, const Tensor &a, const Tensor &b) {
  if (b.numel() == 1)
    return;
  const auto &as = a.shape();
  const auto &bs = b.shape();
  if (bs.size() > as.size() ||
      !std::equal(bs.rbegin(), bs.rend(), as.rbegin()))
    shape_error(op, a, b);
}

enum class BinOp { Add, Sub, Mul };

// Applies f(i, j) over the output, where j indexes the broadcast operand:
// b repeats every nb elements of a.
template <typename F>
void for_each_broadcast(std::size_t n, std::size_t nb, F f) {
  if (nb == 1) {
    for (std::size_t i = 0; i < n; ++i)
      f(i, 0);
    return;
  }
  for (std::size_t base = 0; base < n; base += nb)
    for (std::size_t j = 0; j < nb; ++j)
      f(base + j, j);
}

Tensor binary(BinOp op, const char *name, const Tensor &a, const Tensor &b) {
  check_broadcast(name, a, b);
  const double *ad = a.data().data();
  const double *bd = b.data().data();
  const std::size_t n = a.numel();
  const std::size_t nb = b.numel();
  std::vector<double> out(n);
  double *o = out.data();
  switch (op) {
  case BinOp::Add:
    for_each_broadcast(n, nb, [&](std::size_t i, std::size_t j) { o[i] = ad[i] + bd[j]; });
    break;
  case BinOp::Sub:
    for_each_broadcast(n, nb, [&](std::size_t i, std::size_t j) { o[i] = ad[i] - bd[j]; });
    break;
  case BinOp::Mul:
    for_each_broadcast(n, nb, [&](std::size_t i, std::size_t j) { o[i] = ad[i] * bd[j]; });
    break;
  }
  return make_result(a.shape(), std::move(out), {&a, &b}, [op](Node &self) {
    Node &pa = *self.parents[0];
    Node &pb = *self.parents[1];
    const double *g = self.grad.data();
    const std::size_t n = self.grad.size();
    const std::size_t nb = pb.data.size();
    if (pa.requires_grad) {
      double *ga = pa.grad_buffer().data();
      if (op == BinOp::Mul) {
        const double *bd = pb.data.data();
        for_each_broadcast(n, nb, [&](std::size_t i, std::size_t j) { ga[i] += g[i] * bd[j]; });
      } else {
        for (std::size_t i = 0; i < n; ++i)
          ga[i] += g[i];
      }
    }
    if (pb.requires_grad) {
      double *gb = pb.grad_buffer().data();
      switch (op) {
      case BinOp::Add:
        for_each_broadcast(n, nb, [&](std::size_t i, std::size_t j) { gb[j] += g[i]; });
        break;
      case BinOp::Sub:
        for_each_broadcast(n, nb, [&](std::size_t i, std::size_t j) { gb[j] -= g[i]; });
        break;
      case BinOp::Mul: {
        const double *ad = pa.data.data();
        for_each_broadcast(n, nb, [&](std::size_t i, std::size_t j) { gb[j] += g[i] * ad[i]; });
        break;
      }
      }
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor &x, Fwd fwd, Deriv deriv) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i)
    out[i] = fwd(xd[i]);
  return make_result(x.shape(), std::move(out), {&x}, [deriv](Node &self) {
    Node &px = *self.parents[0];
    auto &gx = px.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += self.grad[i] * deriv(px.data[i], self.data[i]);
  });
}

std::size_t norm_axis(const Tensor &x, int axis) {
  const int r = static_cast<int>(x.rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw Error(ErrorCode::InvalidAxis, "axis " + std::to_string(axis) +
                                            " for shape " +
                                            shape_str(x.shape()));
  return static_cast<std::size_t>(a);
}

} // namespace

namespace testing {
void set_tanh_grad_fault(double factor) { g_tanh_fault = factor; }
} // namespace testing

Tensor add(const Tensor &a, const Tensor &b) {
  return binary(BinOp::Add, "add", a, b);
}
Tensor sub(const Tensor &a, const Tensor &b) {
  return binary(BinOp::Sub, "sub", a, b);
}
Tensor mul(const Tensor &a, const Tensor &b) {
  return binary(BinOp::Mul, "mul", a, b);
}

Tensor affine(const Tensor &x, double scale, double shift) {
  return unary(
      x, [=](double v) { return scale * v + shift; },
      [=](double, double) { return scale; });
}

Tensor tanh(const Tensor &x) {
  const double fault = g_tanh_fault;
  return unary(
      x, [](double v) { return std::tanh(v); },
      [fault](double, double y) { return (1.0 - y * y) * (1.0 + fault); });
}

Tensor sigmoid(const Tensor &x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0)
          return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor &x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor reshape(const Tensor &x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw Error(ErrorCode::ShapeMismatch, "reshape " + shape_str(x.shape()) +
                                              " to " + shape_str(shape));
  const auto xd = x.data();
  return make_result(std::move(shape), std::vector<double>(xd.begin(), xd.end()),
                     {&x}, [](Node &self) {
                       auto &gx = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < gx.size(); ++i)
                         gx[i] += self.grad[i];
                     });
}

Tensor matmul(const Tensor &a, const Tensor &b) {
  if (a.rank() < 2 || b.rank() != 2 || a.dim(-1) != b.dim(0))
    shape_error("matmul", a, b);
  const std::size_t Q = b.dim(0);
  const std::size_t R = b.dim(1);
  const std::size_t M = a.numel() / Q;
  Shape shape = a.shape();
  shape.back() = R;
  std::vector<double> out(M * R, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t m = 0; m < M; ++m) {
    double *o = out.data() + m * R;
    for (std::size_t q = 0; q < Q; ++q) {
      const double av = ad[m * Q + q];
      const double *brow = bd.data() + q * R;
      for (std::size_t r = 0; r < R; ++r)
        o[r] += av * brow[r];
    }
  }
  return make_result(std::move(shape), std::move(out), {&a, &b},
                     [M, Q, R](Node &self) {
                       Node &pa = *self.parents[0];
                       Node &pb = *self.parents[1];
                       const double *g = self.grad.data();
                       if (pa.requires_grad) {
                         double *ga = pa.grad_buffer().data();
                         std::vector<double> bt(R * Q);
                         for (std::size_t q = 0; q < Q; ++q)
                           for (std::size_t r = 0; r < R; ++r)
                             bt[r * Q + q] = pb.data[q * R + r];
                         for (std::size_t m = 0; m < M; ++m) {
                           double *garow = ga + m * Q;
                           const double *grow = g + m * R;
                           for (std::size_t r = 0; r < R; ++r) {
                             const double gv = grow[r];
                             const double *btrow = bt.data() + r * Q;
                             for (std::size_t q = 0; q < Q; ++q)
                               garow[q] += gv * btrow[q];
                           }
                         }
                       }
                       if (pb.requires_grad) {
                         auto &gb = pb.grad_buffer();
                         for (std::size_t m = 0; m < M; ++m)
                           for (std::size_t q = 0; q < Q; ++q) {
                             const double av = pa.data[m * Q + q];
                             const double *grow = g + m * R;
                             double *gbrow = gb.data() + q * R;
                             for (std::size_t r = 0; r < R; ++r)
                               gbrow[r] += av * grow[r];
                           }
                       }
                     });
}

Tensor reduce_mean(const Tensor &x, int axis) {
  const std::size_t ax = norm_axis(x, axis);
  const auto &s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i)
    outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i)
    inner *= s[i];
  const std::size_t len = s[ax];
  Shape shape = s;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<double> out(outer * inner, 0.0);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += xd[(o * len + l) * inner + i];
  for (auto &v : out)
    v /= static_cast<double>(len);
  return make_result(std::move(shape), std::move(out), {&x},
                     [outer, len, inner](Node &self) {
                       auto &gx = self.parents[0]->grad_buffer();
                       const double scale = 1.0 / static_cast<double>(len);
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t l = 0; l < len; ++l)
                           for (std::size_t i = 0; i < inner; ++i)
                             gx[(o * len + l) * inner + i] +=
                                 self.grad[o * inner + i] * scale;
                     });
}

Tensor sum(const Tensor &x) {
  double acc = 0.0;
  for (double v : x.data())
    acc += v;
  return make_result({}, {acc}, {&x}, [](Node &self) {
    auto &gx = self.parents[0]->grad_buffer();
    for (auto &v : gx)
      v += self.grad[0];
  });
}

Tensor mean(const Tensor &x) {
  const double n = static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.data())
    acc += v;
  return make_result({}, {acc / n}, {&x}, [n](Node &self) {
    auto &gx = self.parents[0]->grad_buffer();
    for (auto &v : gx)
      v += self.grad[0] / n;
  });
}

Tensor graph_contract(const Tensor &a, const Tensor &x) {
  if (x.rank() < 3 || a.rank() < 2)
    shape_error("graph_contract", a, x);
  const std::size_t T = x.dim(-3), N = x.dim(-2), C = x.dim(-1);
  const std::size_t L = x.numel() / (T * N * C);
  if (a.dim(-1) != N || a.dim(-2) != N)
    shape_error("graph_contract", a, x);
  std::size_t a_batch_stride = 0, a_chan_stride = 0;
  if (a.rank() >= 3) {
    if (a.dim(-3) != C)
      shape_error("graph_contract", a, x);
    a_chan_stride = N * N;
    if (a.rank() == x.rank()) {
      if (!std::equal(a.shape().begin(), a.shape().end() - 3,
                      x.shape().begin()))
        shape_error("graph_contract", a, x);
      a_batch_stride = C * N * N;
    } else if (a.rank() != 3) {
      shape_error("graph_contract", a, x);
    }
  }

  std::vector<double> out(x.numel(), 0.0);
  const auto ad = a.data();
  const auto xd = x.data();
  for (std::size_t b = 0; b < L; ++b) {
    const double *ab = ad.data() + b * a_batch_stride;
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t frame = (b * T + t) * N * C;
      for (std::size_t i = 0; i < N; ++i) {
        double *o = out.data() + frame + i * C;
        for (std::size_t j = 0; j < N; ++j) {
          const double *xj = xd.data() + frame + j * C;
          const double *aij = ab + i * N + j;
          for (std::size_t c = 0; c < C; ++c)
            o[c] += aij[c * a_chan_stride] * xj[c];
        }
      }
    }
  }
  return make_result(
      x.shape(), std::move(out), {&a, &x},
      [L, T, N, C, a_batch_stride, a_chan_stride](Node &self) {
        Node &pa = *self.parents[0];
        Node &px = *self.parents[1];
        const double *g = self.grad.data();
        double *ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
        double *gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
        for (std::size_t b = 0; b < L; ++b) {
          const double *ab = pa.data.data() + b * a_batch_stride;
          double *gab = ga ? ga + b * a_batch_stride : nullptr;
          for (std::size_t t = 0; t < T; ++t) {
            const std::size_t frame = (b * T + t) * N * C;
            for (std::size_t i = 0; i < N; ++i) {
              const double *gi = g + frame + i * C;
              for (std::size_t j = 0; j < N; ++j) {
                const double *xj = px.data.data() + frame + j * C;
                const std::size_t aoff = i * N + j;
                if (gx) {
                  double *gxj = gx + frame + j * C;
                  for (std::size_t c = 0; c < C; ++c)
                    gxj[c] += ab[aoff + c * a_chan_stride] * gi[c];
                }
                if (gab) {
                  for (std::size_t c = 0; c < C; ++c)
                    gab[aoff + c * a_chan_stride] += gi[c] * xj[c];
                }
              }
            }
          }
        }
      });
}

Tensor pairwise_diff(const Tensor &u, const Tensor &v) {
  if (u.shape() != v.shape() || u.rank() < 2)
    shape_error("pairwise_diff", u, v);
  const std::size_t N = u.dim(-2), C = u.dim(-1);
  const std::size_t L = u.numel() / (N * C);
  Shape shape(u.shape().begin(), u.shape().end() - 2);
  shape.insert(shape.end(), {C, N, N});
  std::vector<double> out(L * C * N * N);
  const auto ud = u.data();
  const auto vd = v.data();
  for (std::size_t b = 0; b < L; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j)
          out[((b * C + c) * N + i) * N + j] =
              ud[(b * N + i) * C + c] - vd[(b * N + j) * C + c];
  return make_result(
      std::move(shape), std::move(out), {&u, &v}, [L, N, C](Node &self) {
        Node &pu = *self.parents[0];
        Node &pv = *self.parents[1];
        double *gu = pu.requires_grad ? pu.grad_buffer().data() : nullptr;
        double *gv = pv.requires_grad ? pv.grad_buffer().data() : nullptr;
        for (std::size_t b = 0; b < L; ++b)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < N; ++i)
              for (std::size_t j = 0; j < N; ++j) {
                const double g = self.grad[((b * C + c) * N + i) * N + j];
                if (gu)
                  gu[(b * N + i) * C + c] += g;
                if (gv)
                  gv[(b * N + j) * C + c] -= g;
              }
      });
}

Tensor channel_mix(const Tensor &x, const Tensor &w, const Tensor &bias) {
  if (x.rank() < 3 || w.rank() != 2 || x.dim(-3) != w.dim(0) ||
      x.dim(-1) != x.dim(-2))
    shape_error("channel_mix", x, w);
  const std::size_t Cin = w.dim(0), Cout = w.dim(1);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != Cout))
    shape_error("channel_mix", w, bias);
  const std::size_t P = x.dim(-1) * x.dim(-2);
  const std::size_t L = x.numel() / (Cin * P);
  Shape shape = x.shape();
  shape[shape.size() - 3] = Cout;
  std::vector<double> out(L * Cout * P, 0.0);
  const auto xd = x.data();
  const auto wd = w.data();
  for (std::size_t b = 0; b < L; ++b)
    for (std::size_t o = 0; o < Cout; ++o) {
      double *dst = out.data() + (b * Cout + o) * P;
      for (std::size_t c = 0; c < Cin; ++c) {
        const double wv = wd[c * Cout + o];
        const double *src = xd.data() + (b * Cin + c) * P;
        for (std::size_t p = 0; p < P; ++p)
          dst[p] += wv * src[p];
      }
      if (has_bias) {
        const double bv = bias.data()[o];
        for (std::size_t p = 0; p < P; ++p)
          dst[p] += bv;
      }
    }
  return make_result(
      std::move(shape), std::move(out), {&x, &w, &bias},
      [L, Cin, Cout, P, has_bias](Node &self) {
        Node &px = *self.parents[0];
        Node &pw = *self.parents[1];
        const double *g = self.grad.data();
        double *gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
        double *gw = pw.requires_grad ? pw.grad_buffer().data() : nullptr;
        double *gb = nullptr;
        if (has_bias && self.parents[2]->requires_grad)
          gb = self.parents[2]->grad_buffer().data();
        for (std::size_t b = 0; b < L; ++b)
          for (std::size_t o = 0; o < Cout; ++o) {
            const double *go = g + (b * Cout + o) * P;
            for (std::size_t c = 0; c < Cin; ++c) {
              const double *src = px.data.data() + (b * Cin + c) * P;
              if (gx) {
                const double wv = pw.data[c * Cout + o];
                double *gxc = gx + (b * Cin + c) * P;
                for (std::size_t p = 0; p < P; ++p)
                  gxc[p] += wv * go[p];
              }
              if (gw) {
                double acc = 0.0;
                for (std::size_t p = 0; p < P; ++p)
                  acc += src[p] * go[p];
                gw[c * Cout + o] += acc;
              }
            }
            if (gb) {
              double acc = 0.0;
              for (std::size_t p = 0; p < P; ++p)
                acc += go[p];
              gb[o] += acc;
            }
          }
      });
}

Tensor normalize_rows_max_abs(const Tensor &x, double eps) {
  if (x.rank() < 1)
    throw Error(ErrorCode::ShapeMismatch, "normalize_rows_max_abs on scalar");
  const std::size_t n = x.dim(-1);
  const std::size_t rows = n ? x.numel() / n : 0;
  std::vector<double> out(x.numel(), 0.0);
  // Index of the max-abs entry per row, or n for rows clamped to zero.
  std::vector<std::size_t> pivot(rows, n);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double *row = xd.data() + r * n;
    std::size_t k = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (std::abs(row[j]) > std::abs(row[k]))
        k = j;
    const double m = std::abs(row[k]);
    if (!(m >= eps))
      continue;
    pivot[r] = k;
    for (std::size_t j = 0; j < n; ++j)
      out[r * n + j] = row[j] / m;
  }
  return make_result(
      x.shape(), std::move(out), {&x},
      [n, pivot = std::move(pivot)](Node &self) {
        Node &px = *self.parents[0];
        auto &gx = px.grad_buffer();
        for (std::size_t r = 0; r < pivot.size(); ++r) {
          const std::size_t k = pivot[r];
          if (k == n)
            continue;
          const double *row = px.data.data() + r * n;
          const double *g = self.grad.data() + r * n;
          const double m = std::abs(row[k]);
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            gx[r * n + j] += g[j] / m;
            dot += g[j] * row[j];
          }
          const double sign = row[k] > 0 ? 1.0 : -1.0;
          gx[r * n + k] -= sign * dot / (m * m);
        }
      });
}

Tensor temporal_conv(const Tensor &x, const Tensor &w, const Tensor &bias,
                     std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 3 || w.dim(1) != x.dim(3))
    shape_error("temporal_conv", x, w);
  if (stride == 0)
    throw Error(ErrorCode::InvalidArgument, "temporal_conv stride 0");
  const std::size_t B = x.dim(0), T = x.dim(1), N = x.dim(2), C = x.dim(3);
  const std::size_t K = w.dim(0), Co = w.dim(2);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != Co))
    shape_error("temporal_conv", w, bias);
  if (T + 2 * pad < K)
    shape_error("temporal_conv", x, w);
  const std::size_t To = (T + 2 * pad - K) / stride + 1;

  std::vector<double> out(B * To * N * Co, 0.0);
  const auto xd = x.data();
  const auto wd = w.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t to = 0; to < To; ++to) {
      double *ob = out.data() + (b * To + to) * N * Co;
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(to * stride + k) -
                                 static_cast<std::ptrdiff_t>(pad);
        if (t < 0 || t >= static_cast<std::ptrdiff_t>(T))
          continue;
        const double *xb =
            xd.data() + (b * T + static_cast<std::size_t>(t)) * N * C;
        const double *wk = wd.data() + k * C * Co;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const double xv = xb[n * C + c];
            const double *wr = wk + c * Co;
            double *o = ob + n * Co;
            for (std::size_t j = 0; j < Co; ++j)
              o[j] += xv * wr[j];
          }
      }
      if (has_bias) {
        const auto bd = bias.data();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t j = 0; j < Co; ++j)
            ob[n * Co + j] += bd[j];
      }
    }
  return make_result(
      {B, To, N, Co}, std::move(out), {&x, &w, &bias},
      [=](Node &self) {
        Node &px = *self.parents[0];
        Node &pw = *self.parents[1];
        double *gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
        double *gw = pw.requires_grad ? pw.grad_buffer().data() : nullptr;
        double *gb = nullptr;
        if (has_bias && self.parents[2]->requires_grad)
          gb = self.parents[2]->grad_buffer().data();
        const double *g = self.grad.data();
        // Per tap, W_k transposed to [Co, C] so the input gradient is an axpy.
        std::vector<double> wt;
        if (gx) {
          wt.resize(K * Co * C);
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t j = 0; j < Co; ++j)
                wt[(k * Co + j) * C + c] = pw.data[(k * C + c) * Co + j];
        }
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t to = 0; to < To; ++to) {
            const double *gb_row = g + (b * To + to) * N * Co;
            if (gb) {
              for (std::size_t n = 0; n < N; ++n)
                for (std::size_t j = 0; j < Co; ++j)
                  gb[j] += gb_row[n * Co + j];
            }
            for (std::size_t k = 0; k < K; ++k) {
              const std::ptrdiff_t t =
                  static_cast<std::ptrdiff_t>(to * stride + k) -
                  static_cast<std::ptrdiff_t>(pad);
              if (t < 0 || t >= static_cast<std::ptrdiff_t>(T))
                continue;
              const std::size_t xoff =
                  (b * T + static_cast<std::size_t>(t)) * N * C;
              const double *xb = px.data.data() + xoff;
              for (std::size_t n = 0; n < N; ++n) {
                const double *go = gb_row + n * Co;
                if (gx) {
                  double *gxr = gx + xoff + n * C;
                  const double *wtk = wt.data() + k * Co * C;
                  for (std::size_t j = 0; j < Co; ++j) {
                    const double gv = go[j];
                    const double *wtr = wtk + j * C;
                    for (std::size_t c = 0; c < C; ++c)
                      gxr[c] += gv * wtr[c];
                  }
                }
                for (std::size_t c = 0; c < C; ++c) {
                  if (gw) {
                    const double xv = xb[n * C + c];
                    double *gwr = gw + k * C * Co + c * Co;
                    for (std::size_t j = 0; j < Co; ++j)
                      gwr[j] += xv * go[j];
                  }
                }
              }
            }
          }
      });
}

Tensor batch_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta,
                  BatchNormState &state, bool training) {
  if (x.rank() < 1 || gamma.numel() != x.dim(-1) ||
      beta.numel() != x.dim(-1))
    shape_error("batch_norm", x, gamma);
  const std::size_t C = x.dim(-1);
  const std::size_t M = x.numel() / C;
  if (state.running_mean.size() != C) {
    state.running_mean.assign(C, 0.0);
    state.running_var.assign(C, 1.0);
  }
  std::vector<double> mu(C, 0.0), var(C, 0.0);
  const auto xd = x.data();
  if (training) {
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t c = 0; c < C; ++c)
        mu[c] += xd[m * C + c];
    for (auto &v : mu)
      v /= static_cast<double>(M);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t c = 0; c < C; ++c) {
        const double d = xd[m * C + c] - mu[c];
        var[c] += d * d;
      }
    for (auto &v : var)
      v /= static_cast<double>(M);
    const double unbias =
        M > 1 ? static_cast<double>(M) / static_cast<double>(M - 1) : 1.0;
    for (std::size_t c = 0; c < C; ++c) {
      state.running_mean[c] =
          (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu[c];
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] +
                             state.momentum * var[c] * unbias;
    }
  } else {
    mu = state.running_mean;
    var = state.running_var;
  }
  std::vector<double> inv_std(C);
  for (std::size_t c = 0; c < C; ++c)
    inv_std[c] = 1.0 / std::sqrt(var[c] + state.eps);

  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = m * C + c;
      xhat[i] = (xd[i] - mu[c]) * inv_std[c];
      out[i] = gd[c] * xhat[i] + bd[c];
    }
  return make_result(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [C, M, training, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node &self) {
        Node &px = *self.parents[0];
        Node &pg = *self.parents[1];
        Node &pb = *self.parents[2];
        const double *g = self.grad.data();
        std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t c = 0; c < C; ++c) {
            sum_g[c] += g[m * C + c];
            sum_gx[c] += g[m * C + c] * xhat[m * C + c];
          }
        if (pg.requires_grad) {
          auto &gg = pg.grad_buffer();
          for (std::size_t c = 0; c < C; ++c)
            gg[c] += sum_gx[c];
        }
        if (pb.requires_grad) {
          auto &gbeta = pb.grad_buffer();
          for (std::size_t c = 0; c < C; ++c)
            gbeta[c] += sum_g[c];
        }
        if (px.requires_grad) {
          auto &gx = px.grad_buffer();
          const double inv_m = 1.0 / static_cast<double>(M);
          for (std::size_t m = 0; m < M; ++m)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t i = m * C + c;
              const double scale = pg.data[c] * inv_std[c];
              if (training)
                gx[i] += scale *
                         (g[i] - inv_m * sum_g[c] - xhat[i] * inv_m * sum_gx[c]);
              else
                gx[i] += scale * g[i];
            }
        }
      });
}

Tensor softmax_cross_entropy(const Tensor &logits,
                             std::span<const std::size_t> labels) {
  if (logits.rank() != 2)
    throw Error(ErrorCode::ShapeMismatch,
                "softmax_cross_entropy expects [B, K] logits, got " +
                    shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != B)
    throw Error(ErrorCode::ShapeMismatch,
                "label count " + std::to_string(labels.size()) +
                    " != batch " + std::to_string(B));
  for (auto y : labels)
    if (y >= K)
      throw Error(ErrorCode::InvalidLabel,
                  "label " + std::to_string(y) + " outside [0, " +
                      std::to_string(K) + ")");
  std::vector<double> probs(B * K);
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  const auto z = logits.data();
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double *row = z.data() + b * K;
    const double zmax = *std::max_element(row, row + K);
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      denom += std::exp(row[k] - zmax);
    const double log_denom = std::log(denom);
    for (std::size_t k = 0; k < K; ++k)
      probs[b * K + k] = std::exp(row[k] - zmax - log_denom);
    total += log_denom - (row[targets[b]] - zmax);
  }
  const double loss = total / static_cast<double>(B);
  return make_result({}, {loss}, {&logits},
                     [B, K, probs = std::move(probs),
                      targets = std::move(targets)](Node &self) {
                       auto &gz = self.parents[0]->grad_buffer();
                       const double scale =
                           self.grad[0] / static_cast<double>(B);
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t k = 0; k < K; ++k)
                           gz[b * K + k] +=
                               scale * (probs[b * K + k] -
                                        (k == targets[b] ? 1.0 : 0.0));
                     });
}

} // namespace g3cn::ad
