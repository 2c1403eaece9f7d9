#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dircr/real.hpp"

namespace dircr {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

// One value in the autograd graph. Storage is shared so that reshapes are
// views; gradients are per node and allocated on first use.
struct Node {
  std::shared_ptr<std::vector<Real>> storage;
  Shape shape;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;

  Real* data() { return storage->data(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(storage->size()); }
  // Zero-initialized on first call.
  Real* grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor handle with reverse-mode autodiff.
///
/// Copies share the underlying node; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value) { return from_vector({}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  /// Size of axis `axis`; negative values count from the end.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return node_->numel(); }

  std::span<Real> data() { return {node_->data(), static_cast<std::size_t>(numel())}; }
  std::span<const Real> data() const { return {node_->data(), static_cast<std::size_t>(numel())}; }
  std::vector<Real> to_vector() const { return {data().begin(), data().end()}; }
  Real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; empty when nothing has flowed into this tensor.
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() { return {node_->grad_buffer(), static_cast<std::size_t>(numel())}; }
  void zero_grad() { node_->grad.clear(); }

  /// Back-propagates from a single-element tensor. The traversed graph is
  /// released afterwards; leaf gradients accumulate.
  void backward();

  /// Same storage, no graph history.
  Tensor detach() const;
  /// Fresh storage, no graph history.
  Tensor clone() const;

  detail::Node* node() const { return node_.get(); }
  const detail::NodePtr& node_ptr() const { return node_; }

 private:
  detail::NodePtr node_;
};

bool grad_enabled();

/// Disables graph recording for its lifetime (inference, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Wraps freshly computed values as an op output. The backward function is
/// attached only when recording is on and some input requires a gradient.
Tensor make_result(Shape shape, std::vector<Real> values, std::vector<Tensor> inputs,
                   BackwardFn backward);

/// View of `storage` under a new shape (same element count).
Tensor make_view(const Tensor& base, Shape shape, BackwardFn backward);

}  // namespace detail

}  // namespace dircr
