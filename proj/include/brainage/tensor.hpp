#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "brainage/error.hpp"

namespace brainage {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Rng = std::mt19937_64;

enum class Mode { Train, Infer };

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "," : "") + std::to_string(shape[i]);
  return out + "]";
}

template <typename Scalar>
struct TensorNode {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Vector data;
  Vector grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents that require it.
  std::function<void(const TensorNode&)> backward_fn;

  Vector& ensure_grad() {
    if (grad.size() != data.size()) grad = Vector::Zero(data.size());
    return grad;
  }
};

/// Shared handle to an n-dimensional row-major array with optional gradient tracking.
///
/// Copies alias the same storage. Ops that consume a tensor with requires_grad record a
/// backward closure on their output; leaves (parameters) have none.
template <typename Scalar>
class Tensor {
 public:
  using Node = TensorNode<Scalar>;
  using Vector = typename Node::Vector;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->data = Vector::Zero(numel(shape));
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }
  Tensor(Shape shape, Vector data, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    if (data.size() != numel(shape))
      fail(ErrorKind::ShapeMismatch, "data length does not match shape " + shape_string(shape));
    node_->data = std::move(data);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }
  Tensor(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false)
      : Tensor(std::move(shape), Eigen::Map<const Vector>(values.begin(), static_cast<Index>(values.size())),
               requires_grad) {}

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data().setConstant(value);
    return t;
  }

  explicit operator bool() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index size() const { return node_->data.size(); }

  Vector& data() { return node_->data; }
  const Vector& data() const { return node_->data; }
  Scalar item() const { return node_->data(0); }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  Vector& grad() { return node_->ensure_grad(); }
  const Vector& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return !node_->backward_fn; }

  /// A fresh untracked tensor holding a copy of the data.
  Tensor detach() const { return Tensor(shape(), data()); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Populates parameter gradients with d(loss)/d(param) by reverse topological traversal.
///
/// Leaf gradients accumulate across calls; interior gradients are reset first so repeated calls on
/// the same graph add exactly one more copy of the gradient to each leaf.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  using Node = TensorNode<Scalar>;
  if (!loss || !loss.requires_grad()) fail(ErrorKind::NoGraph, "loss is not produced by tracked ops");
  if (loss.size() != 1) fail(ErrorKind::ShapeMismatch, "backward needs a scalar loss");

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order)
    if (node->backward_fn) node->grad.resize(0);
  loss.node()->ensure_grad()(0) += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.size() == node->data.size()) node->backward_fn(*node);
  }
}

}  // namespace brainage
