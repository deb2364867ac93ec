#include "tlab/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace tlab {

namespace {
thread_local bool g_grad_recording = true;
}

bool grad_recording_enabled() { return g_grad_recording; }

NoGradGuard::NoGradGuard() : prev_(g_grad_recording) { g_grad_recording = false; }
NoGradGuard::~NoGradGuard() { g_grad_recording = prev_; }

Tensor::Tensor(Shape shape, std::vector<real> value, bool requires_grad) {
  check(shape_numel(shape) == static_cast<int64_t>(value.size()),
        "tensor: shape {} implies {} elements but {} were given",
        shape_str(shape), shape_numel(shape), value.size());
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::full(Shape shape, real v, bool requires_grad) {
  std::vector<real> data(static_cast<size_t>(shape_numel(shape)), v);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(real v, bool requires_grad) {
  return Tensor(Shape{}, std::vector<real>{v}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, real stddev, bool requires_grad) {
  std::vector<real> data(static_cast<size_t>(shape_numel(shape)));
  rng.fill_normal(data, 0.0, stddev);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::uniform(Shape shape, Rng& rng, real lo, real hi,
                       bool requires_grad) {
  std::vector<real> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::make(Shape shape, std::vector<real> value,
                    std::vector<Tensor> parents, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(value), false);
  bool record = g_grad_recording;
  bool any_rg = false;
  for (const auto& p : parents) any_rg = any_rg || (p.defined() && p.requires_grad());
  if (record && any_rg) {
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward);
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents)
      if (p.defined()) out.node_->parents.push_back(p.node_);
  }
  return out;
}

detail::Node& Tensor::n() const {
  check(node_ != nullptr, "operation on an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return n().shape; }

int64_t Tensor::dim(size_t axis) const {
  check(axis < rank(), "dim: axis {} out of range for shape {}", axis,
        shape_str(shape()));
  return shape()[axis];
}

int64_t Tensor::numel() const { return shape_numel(shape()); }

real Tensor::item() const {
  check(numel() == 1, "item: tensor of shape {} is not a scalar",
        shape_str(shape()));
  return n().value[0];
}

const std::vector<real>& Tensor::value() const { return n().value; }

std::vector<real>& Tensor::mutable_value() { return n().value; }

bool Tensor::requires_grad() const { return n().requires_grad; }

Tensor& Tensor::set_requires_grad(bool rg) {
  n().requires_grad = rg;
  return *this;
}

bool Tensor::has_grad() const { return defined() && !n().grad.empty(); }

const std::vector<real>& Tensor::grad() const {
  check(has_grad(), "grad: no gradient has been accumulated for this tensor");
  return n().grad;
}

void Tensor::zero_grad() const { n().grad.clear(); }

void Tensor::accumulate_grad(const std::vector<real>& g) const {
  auto& node = n();
  if (!node.requires_grad) return;
  check(g.size() == node.value.size(),
        "accumulate_grad: gradient has {} elements, tensor has {}", g.size(),
        node.value.size());
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  for (size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
}

void Tensor::backward() {
  check(numel() == 1, "backward: output of shape {} is not a scalar",
        shape_str(shape()));
  check(requires_grad(),
        "backward: no graph was recorded for this output (nothing requires grad)");

  // Iterative post-order DFS; each node enters `order` exactly once.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && visited.insert(p).second)
        stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  if (node_->grad.empty()) node_->grad.assign(1, 0.0);
  node_->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty())
      node->backward(node->grad, node->value);
  }
}

bool Tensor::all_finite() const {
  for (real v : n().value)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace tlab
