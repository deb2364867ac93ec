#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "tlab/common.hpp"
#include "tlab/rng.hpp"

namespace tlab {

class Tensor;

// Backward hook of a recorded op: receives the gradient w.r.t. the op output
// plus the op's own output values, and accumulates into the parents it
// captured.
using BackwardFn = std::function<void(const std::vector<real>& grad_out,
                                      const std::vector<real>& out_value)>;

namespace detail {
struct Node {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};
}  // namespace detail

// Disables graph recording in the enclosing scope (evaluation passes,
// numeric probes inside grad_check).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_recording_enabled();

// Dense n-dimensional tensor participating in a define-by-run reverse-mode
// graph. A Tensor is a cheap shared handle; values are immutable once
// created except for (a) gradient accumulation and (b) in-place updates of
// leaf parameters between optimizer steps.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<real> value, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real v, bool requires_grad = false);
  static Tensor scalar(real v, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, real stddev = 1.0,
                      bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, real lo, real hi,
                        bool requires_grad = false);

  // Graph-building entry point used by every op. Records parents and the
  // backward hook only while grad recording is on and some parent requires
  // grad; otherwise the result is a plain constant.
  static Tensor make(Shape shape, std::vector<real> value,
                     std::vector<Tensor> parents, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  size_t rank() const { return shape().size(); }
  int64_t dim(size_t axis) const;
  int64_t numel() const;
  real item() const;

  const std::vector<real>& value() const;
  // In-place access for leaf parameter updates; never call on an interior
  // node of a live graph.
  std::vector<real>& mutable_value();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool rg);
  bool has_grad() const;
  const std::vector<real>& grad() const;
  void zero_grad() const;
  void accumulate_grad(const std::vector<real>& g) const;

  // Reverse pass from a scalar: visits each reachable node exactly once in
  // reverse topological order and accumulates into leaf grads.
  void backward();

  bool all_finite() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  detail::Node& n() const;

  std::shared_ptr<detail::Node> node_;
};

// Named leaf parameter, the unit of optimizer updates and checkpointing.
struct NamedParam {
  std::string name;
  Tensor tensor;
};

}  // namespace tlab
