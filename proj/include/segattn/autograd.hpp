#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "segattn/array.hpp"

namespace segattn {

// Reverse-mode autodiff handle. A Tensor wraps a shared graph node holding the
// value, the accumulated gradient, and a backward closure that scatters the
// node's gradient into its inputs. Graphs are built by the free functions in
// ops.hpp and differentiated with backward() from a scalar root.
template <typename Scalar>
class Tensor {
public:
  struct Node {
    Array<Scalar> value;
    Array<Scalar> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    std::vector<Tensor> inputs;
    std::function<void(const Array<Scalar>&)> backward;
  };

  Tensor() = default;

  static Tensor leaf(Array<Scalar> value, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->value = std::move(value);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor constant(Array<Scalar> value) {
    return leaf(std::move(value), false);
  }

  static Tensor op(Array<Scalar> value, std::vector<Tensor> inputs,
                   std::function<void(const Array<Scalar>&)> backward) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->value = std::move(value);
    bool needs = false;
    for (const Tensor& in : inputs) needs = needs || in.requires_grad();
    t.node_->requires_grad = needs;
    if (needs) {
      t.node_->inputs = std::move(inputs);
      t.node_->backward = std::move(backward);
    }
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  const Array<Scalar>& value() const { return node_->value; }
  Array<Scalar>& value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(Index i) const { return node_->value.dim(i); }

  // Accumulated gradient; empty array if none has arrived.
  const Array<Scalar>& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  void clear_grad() { node_->grad = Array<Scalar>(); }

  Scalar scalar() const {
    SEGATTN_CHECK(node_->value.size() == 1, "scalar() on non-scalar tensor");
    return node_->value[0];
  }

  // Value-sharing view cut off from the graph.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->value = node_->value;
    t.node_->requires_grad = false;
    return t;
  }

  void accumulate_grad(const Array<Scalar>& g) {
    SEGATTN_CHECK(g.same_shape(node_->value),
                  "gradient shape " << shape_str(g.shape()) << " vs value "
                                    << shape_str(node_->value.shape()));
    if (node_->grad.empty()) node_->grad = Array<Scalar>(node_->value.shape());
    node_->grad.vec() += g.vec();
  }

  // Runs reverse-mode accumulation from this node. The root must be a scalar;
  // leaf gradients accumulate until clear_grad().
  void backward() {
    SEGATTN_CHECK(node_ && node_->value.size() == 1,
                  "backward() requires a scalar root");
    if (!node_->requires_grad) return;
    accumulate_grad(Array<Scalar>({1}, Scalar(1)));

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        Node* child = n->inputs[next].node_.get();
        ++next;
        if (child != nullptr && child->requires_grad && !seen.count(child)) {
          seen.insert(child);
          stack.emplace_back(child, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(n->grad);
      // Interior gradients are scratch; free them as soon as they are used.
      if (n != node_.get() && n->backward) n->grad = Array<Scalar>();
    }
  }

  Node* node_ptr() const { return node_.get(); }

private:
  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace segattn
