#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace eradiff {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Raised by any primitive whose inputs have incompatible shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline std::uint64_t& node_counter() {
  thread_local std::uint64_t counter = 0;
  return counter;
}

template <typename Scalar>
struct Node {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Array value;
  Array grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Array& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
  Array& grad_buffer() {
    if (grad.size() == 0) grad = Array::Zero(value.size());
    return grad;
  }
};

}  // namespace detail

/// Dense row-major n-d array with optional reverse-mode gradient tracking.
///
/// A Tensor is a cheap handle to a shared node. Values are immutable after
/// construction, with two exceptions: gradient accumulation, and in-place
/// updates of leaf parameters by an optimizer (`mutable_values`).
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using NodeT = detail::Node<Scalar>;

  Tensor() = default;

  Tensor(Shape shape, Array values, bool requires_grad = false)
      : node_(std::make_shared<NodeT>()) {
    if (numel(shape) != values.size())
      throw ShapeError("tensor: data length " + std::to_string(values.size()) +
                       " does not match shape " + to_string(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
    node_->seq = ++detail::node_counter();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), Array::Zero(n), requires_grad);
  }
  static Tensor constant(Shape shape, Scalar v) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), Array::Constant(n, v));
  }
  static Tensor scalar(Scalar v, bool requires_grad = false) {
    return Tensor(Shape{}, Array::Constant(1, v), requires_grad);
  }

  /// Internal constructor for primitive outputs.
  static Tensor from_op(const char* op, Shape shape, Array values,
                        std::vector<std::shared_ptr<NodeT>> parents,
                        std::function<void(NodeT&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values));
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const auto& p) { return p->requires_grad; });
    out.node_->op = op;
    out.node_->is_leaf = false;
    if (any) {
      out.node_->requires_grad = true;
      out.node_->parents = std::move(parents);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  Index size() const { return node_->value.size(); }
  const Array& values() const { return node_->value; }
  Scalar item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not scalar");
    return node_->value(0);
  }
  Scalar operator[](Index i) const { return node_->value(i); }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const Array& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0); }
  const char* op() const { return node_->op; }
  std::uint64_t sequence() const { return node_->seq; }

  /// Optimizer hook: parameters are leaves and may be updated in place.
  Array& mutable_values() {
    if (!node_->is_leaf) throw std::logic_error("mutable_values: only leaf tensors are mutable");
    return node_->value;
  }
  /// A new leaf sharing no history with this tensor.
  Tensor detach() const { return Tensor(shape(), values()); }

  const std::shared_ptr<NodeT>& node() const { return node_; }

 private:
  std::shared_ptr<NodeT> node_;
};

template <typename Scalar>
bool all_finite(const Tensor<Scalar>& t) {
  return t.values().isFinite().all();
}

template <typename Scalar>
void check_finite(const Tensor<Scalar>& t, const std::string& what) {
  if (!all_finite(t)) throw std::domain_error(what + ": non-finite value detected");
}

/// The backward-replay order: one entry per recorded op, in the order visited.
struct ComputationRecord {
  std::vector<std::uint64_t> sequence;
  std::vector<std::string> ops;
};

/// Populates grads of every requires_grad leaf reachable from `loss`.
/// Leaf gradients accumulate across calls; intermediate gradients are
/// rebuilt on every call. Ops are replayed in exact reverse creation order.
template <typename Scalar>
ComputationRecord backward(const Tensor<Scalar>& loss) {
  using NodeT = detail::Node<Scalar>;
  if (loss.size() != 1 || !loss.shape().empty())
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  ComputationRecord record;
  if (!loss.requires_grad()) return record;

  std::vector<NodeT*> nodes;
  std::unordered_set<NodeT*> seen;
  std::vector<NodeT*> stack{loss.node().get()};
  while (!stack.empty()) {
    NodeT* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    nodes.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  std::sort(nodes.begin(), nodes.end(), [](NodeT* a, NodeT* b) { return a->seq > b->seq; });
  for (NodeT* n : nodes)
    if (!n->is_leaf) n->grad.resize(0);

  loss.node()->accumulate(NodeT::Array::Ones(1));
  for (NodeT* n : nodes) {
    if (n->is_leaf || !n->backward_fn) continue;
    if (n->grad.size() == 0) n->grad = NodeT::Array::Zero(n->value.size());
    n->backward_fn(*n);
    record.sequence.push_back(n->seq);
    record.ops.emplace_back(n->op);
  }
  return record;
}

}  // namespace eradiff
