// SPDX-License-Identifier: Apache-2.0
#include "g3cn/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "g3cn/error.hpp"

namespace g3cn::ad {

namespace {
std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> data,
                                bool requires_grad) {
  if (numel_of(shape) != data.size())
    throw Error(ErrorCode::ShapeMismatch,
                "data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}
} // namespace

std::size_t numel_of(const Shape &shape) {
  std::size_t n = 1;
  for (auto d : shape)
    n *= d;
  return n;
}

std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double> &Node::grad_buffer() {
  if (grad.size() != data.size())
    grad.assign(data.size(), 0.0);
  return grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(numel_of(shape), value);
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data,
                    bool requires_grad) {
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::wrap(std::shared_ptr<Node> node) {
  if (node && node->seq == 0)
    node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

const Shape &Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(int axis) const {
  const auto r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw Error(ErrorCode::InvalidAxis,
                "axis " + std::to_string(axis) + " for shape " +
                    shape_str(shape()));
  return shape()[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1)
    throw Error(ErrorCode::NotScalar,
                "item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto &s = shape();
  if (index.size() != s.size())
    throw Error(ErrorCode::InvalidAxis, "index rank mismatch");
  std::size_t flat = 0;
  std::size_t k = 0;
  for (auto i : index) {
    if (i >= s[k])
      throw Error(ErrorCode::InvalidArgument, "index out of range");
    flat = flat * s[k] + i;
    ++k;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor(make_node(shape(), node_->data, false));
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(make_node(shape(), node_->data, requires_grad));
}

void Tensor::backward() const {
  if (numel() != 1)
    throw Error(ErrorCode::NotScalar,
                "backward() needs a scalar, got shape " + shape_str(shape()));
  if (!node_->requires_grad)
    return;

  std::vector<Node *> order;
  std::unordered_set<Node *> seen;
  std::vector<Node *> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    Node *n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto &p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node *a, const Node *b) { return a->seq > b->seq; });

  for (Node *n : order) {
    if (!n->is_leaf())
      n->grad.assign(n->data.size(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (Node *n : order) {
    if (!n->is_leaf())
      n->backward_fn(*n);
  }
}

} // namespace g3cn::ad
