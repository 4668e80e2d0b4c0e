// SPDX-License-Identifier: Apache-2.0
/**
 * @file   autodiff.hpp
 * @brief  Dense float64 tensors with define-by-run reverse-mode differentiation.
 *
 * Every differentiable op records its inputs and a backward closure on the
 * output node. Nodes carry a monotonically increasing sequence number taken
 * at creation, so sorting the nodes reachable from a loss by descending
 * sequence number yields a valid reverse topological order (the tape).
 *
 * Leaf tensors (parameters) accumulate gradients across backward() calls
 * until zero_grad(); interior nodes are reset at the start of every pass.
 */
#ifndef G3CN_AUTODIFF_HPP
#define G3CN_AUTODIFF_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace g3cn::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape &shape);
std::string shape_str(const Shape &shape);

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  /// Returns the gradient buffer, allocating zeros on first use.
  std::vector<double> &grad_buffer();
};

class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape &shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of an axis; negative indices count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access, intended for leaves (parameter updates, fixtures).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  /// Gradient of a leaf after backward(); empty span if never touched.
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse sweep from this scalar. Throws NotScalar for non-scalar tensors.
  void backward() const;

  /// Same data, cut from the tape.
  Tensor detach() const;
  /// Deep copy of data as a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<Node> &node() const { return node_; }
  static Tensor wrap(std::shared_ptr<Node> node);

private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

bool grad_enabled();

// ---------------------------------------------------------------------------
// Differentiable operations.
//
// Broadcasting: the second operand of a binary op may have a shape equal to
// a trailing suffix of the first operand's shape, or a single element.
// ---------------------------------------------------------------------------

Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
/// scale * x + shift
Tensor affine(const Tensor &x, double scale, double shift);

/// a: [..., P, Q], b: [Q, R] -> [..., P, R]
Tensor matmul(const Tensor &a, const Tensor &b);

Tensor tanh(const Tensor &x);
Tensor sigmoid(const Tensor &x);
Tensor relu(const Tensor &x);

/// Same data in a new shape with equal element count.
Tensor reshape(const Tensor &x, Shape shape);

/// Arithmetic mean along one axis; the axis is removed from the shape.
Tensor reduce_mean(const Tensor &x, int axis);
Tensor sum(const Tensor &x);
Tensor mean(const Tensor &x);

/// Channel-wise adjacency contraction.
///   x: [L..., T, N, C]
///   a: [N, N] (shared by every channel), [C, N, N] (shared across the
///      leading axes) or [L..., C, N, N]
///   out[..., t, i, c] = sum_j a[..., c, i, j] * x[..., t, j, c]
Tensor graph_contract(const Tensor &a, const Tensor &x);

/// u, v: [L..., N, C] -> [L..., C, N, N] with out[c, i, j] = u[i, c] - v[j, c]
Tensor pairwise_diff(const Tensor &u, const Tensor &v);

/// x: [L..., Cin, N, N], w: [Cin, Cout], optional bias [Cout]
///   out[..., o, i, j] = sum_c w[c, o] * x[..., c, i, j] + bias[o]
Tensor channel_mix(const Tensor &x, const Tensor &w, const Tensor &bias = {});

/// Divides every row of the last axis by its max absolute entry. Rows whose
/// max is below eps come back as zeros.
Tensor normalize_rows_max_abs(const Tensor &x, double eps);

/// Convolution along the time axis with a shared kernel per joint.
///   x: [B, T, N, C], w: [K, C, Cout], optional bias [Cout]
///   T_out = (T + 2 * pad - K) / stride + 1, zero padding.
Tensor temporal_conv(const Tensor &x, const Tensor &w, const Tensor &bias,
                     std::size_t stride, std::size_t pad);

/// Per-channel normalization over every axis but the last.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
Tensor batch_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta,
                  BatchNormState &state, bool training);

/// Mean over the batch of -log softmax(logits)[label]. logits: [B, K].
Tensor softmax_cross_entropy(const Tensor &logits,
                             std::span<const std::size_t> labels);

namespace testing {
/// Scales the backward of tanh by (1 + factor). Zero disables. Used to verify
/// that the gradient checker catches wrong derivatives.
void set_tanh_grad_fault(double factor);
} // namespace testing

} // namespace g3cn::ad

#endif // G3CN_AUTODIFF_HPP
