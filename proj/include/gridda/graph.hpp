#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gridda/tensor.hpp"

namespace gridda::ad {

template <typename T>
class Graph;

// Trainable tensor with persistent gradient buffer. Lives outside any graph;
// bound into a graph per forward pass via Graph::leaf().
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;  // running stats of batch norm are stored untrainable

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { std::fill(grad.vec().begin(), grad.vec().end(), T(0)); }
};

template <typename T>
struct Node {
  Graph<T>* graph = nullptr;
  int id = 0;
  const char* op = "";
  Tensor<T> value;
  Tensor<T> grad;  // allocated on demand during backward
  bool grad_alloc = false;
  bool requires_grad = false;
  bool reachable = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this node's grad into its inputs' grads (accumulating).
  std::function<void(Node&)> backward_fn;
  Parameter<T>* param = nullptr;

  Tensor<T>& ensure_grad() {
    if (!grad_alloc) {
      grad = Tensor<T>(value.shape());
      grad_alloc = true;
    }
    return grad;
  }
};

// Handle to a node; what ops consume and produce.
template <typename T>
class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  const Tensor<T>& tensor() const { return n_->value; }
  const std::vector<int>& shape() const { return n_->value.shape(); }
  // Zero tensor if backward never reached this node.
  Tensor<T> grad() const { return n_->grad_alloc ? n_->grad : Tensor<T>(n_->value.shape()); }
  T item() const {
    if (n_->value.numel() != 1) throw ShapeError("item(): tensor is not scalar");
    return n_->value[0];
  }
  std::shared_ptr<Node<T>> node() const { return n_; }
  bool valid() const { return n_ != nullptr; }

 private:
  std::shared_ptr<Node<T>> n_;
};

// Records one forward pass; nodes are appended in construction order, which is
// a topological order, so backward is a reverse sweep over the tape.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Finite check after every primitive forward; NaN/Inf is an error state.
  void set_check_finite(bool b) { check_finite_ = b; }
  bool check_finite() const { return check_finite_; }

  Value<T> constant(Tensor<T> t) { return Value<T>(append("constant", std::move(t), {}, nullptr, false)); }

  Value<T> input(Tensor<T> t, bool requires_grad = false) {
    return Value<T>(append("input", std::move(t), {}, nullptr, requires_grad));
  }

  Value<T> leaf(Parameter<T>& p) {
    auto n = append("param", p.value, {}, nullptr, true);
    n->param = &p;
    return Value<T>(n);
  }

  std::shared_ptr<Node<T>> append(const char* op, Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> inputs,
                                  std::function<void(Node<T>&)> backward_fn, bool requires_grad) {
    for (const auto& in : inputs)
      if (in->graph != this) throw Error(std::string(op) + ": input belongs to a different graph");
    if (check_finite_ && !value.all_finite())
      throw NumericError(std::string(op) + ": non-finite value in forward output");
    auto n = std::make_shared<Node<T>>();
    n->graph = this;
    n->id = static_cast<int>(tape_.size());
    n->op = op;
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
    n->requires_grad = requires_grad;
    tape_.push_back(n);
    return n;
  }

  // Reverse accumulation from a scalar loss into every reachable leaf;
  // Parameter leaves accumulate into their persistent grad buffers.
  void backward(const Value<T>& loss) {
    if (backward_done_) throw Error("backward: called twice without a new forward pass");
    if (!loss.valid() || loss.node()->graph != this) throw Error("backward: loss not from this graph");
    if (loss.node()->value.numel() != 1) throw ShapeError("backward: loss must be scalar");
    backward_done_ = true;

    // Reachability sweep: ids only decrease along input edges.
    loss.node()->reachable = true;
    for (int i = loss.node()->id; i >= 0; --i) {
      Node<T>& n = *tape_[static_cast<std::size_t>(i)];
      if (!n.reachable || !n.requires_grad) continue;
      for (auto& in : n.inputs)
        if (in->requires_grad) in->reachable = true;
    }

    loss.node()->ensure_grad()[0] = T(1);
    for (int i = loss.node()->id; i >= 0; --i) {
      Node<T>& n = *tape_[static_cast<std::size_t>(i)];
      if (!n.reachable || !n.requires_grad || !n.grad_alloc) continue;
      if (n.backward_fn) n.backward_fn(n);
      if (n.param != nullptr) {
        auto& g = n.param->grad.vec();
        const auto& src = n.grad.vec();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[k];
      }
    }
  }

  std::size_t size() const { return tape_.size(); }

 private:
  std::vector<std::shared_ptr<Node<T>>> tape_;
  bool backward_done_ = false;
  bool check_finite_ = true;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;
using ValueF = Value<float>;
using ValueD = Value<double>;
using ParamF = Parameter<float>;
using ParamD = Parameter<double>;

}  // namespace gridda::ad
