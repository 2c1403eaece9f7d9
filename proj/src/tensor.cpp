#include "dircr/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "dircr/errors.hpp"

namespace dircr {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Real* detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(storage->size(), Real{0});
  return grad.data();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real{0}, requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return from_vector(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::from_vector(Shape shape, std::vector<Real> values, bool requires_grad) {
  for (auto d : shape) {
    if (d < 0) throw ShapeMismatch("negative dimension in " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeMismatch("shape " + shape_str(shape) + " does not hold " +
                        std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->storage = std::make_shared<std::vector<Real>>(std::move(values));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw IndexOutOfRange("axis " + std::to_string(axis) + " of rank " + std::to_string(r));
  return node_->shape[static_cast<std::size_t>(a)];
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_str(shape()));
  return node_->data()[0];
}

void Tensor::backward() {
  if (numel() != 1) throw ShapeMismatch("backward() needs a single-element tensor");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order. The order holds
  // owning pointers because clearing parents below releases graph edges.
  std::vector<detail::NodePtr> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::NodePtr, std::size_t>> stack{{node_, 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::NodePtr p = n->parents[next++];
      if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += Real{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = it->get();
    if (!n->backward) continue;
    if (!n->grad.empty()) n->backward(*n);
    n->backward = nullptr;
    n->parents.clear();
    if (n != node_.get()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->storage = node_->storage;
  node->shape = node_->shape;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  return from_vector(shape(), to_vector());
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::vector<Real> values, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->storage = std::make_shared<std::vector<Real>>(std::move(values));
  node->shape = std::move(shape);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->backward = std::move(backward);
      node->parents.reserve(inputs.size());
      for (auto& t : inputs) node->parents.push_back(t.node_ptr());
    }
  }
  return Tensor(std::move(node));
}

Tensor make_view(const Tensor& base, Shape shape, BackwardFn backward) {
  if (shape_numel(shape) != base.numel()) {
    throw ShapeMismatch("cannot view " + shape_str(base.shape()) + " as " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->storage = base.node()->storage;
  node->shape = std::move(shape);
  if (g_grad_enabled && base.requires_grad()) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->parents.push_back(base.node_ptr());
  }
  return Tensor(std::move(node));
}

}  // namespace detail

}  // namespace dircr
