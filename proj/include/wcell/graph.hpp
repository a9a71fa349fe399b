#pragma once

#include "wcell/tensor.hpp"

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace wcell {

/// A named tensor that outlives graphs: trainable weights and non-trainable buffers
/// such as batch-norm running statistics.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool trainable = true;
  /// Subject to weight decay by default (conv and transposed-conv kernels).
  bool decay = false;
};

/// Ordered registry of parameters with stable addresses and total name lookup.
template <typename Scalar>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter<Scalar>& add(std::string name, Tensor<Scalar> value, bool trainable = true, bool decay = false) {
    if (index_.count(name) != 0) throw ContractError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<Scalar>>();
    p->name = name;
    p->grad = Tensor<Scalar>::zeros_like(value);
    p->value = std::move(value);
    p->trainable = trainable;
    p->decay = decay;
    index_.emplace(std::move(name), items_.size());
    items_.push_back(std::move(p));
    return *items_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<Scalar>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter name: " + name);
    return *items_[it->second];
  }
  const Parameter<Scalar>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  std::size_t size() const { return items_.size(); }

  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& p : items_) fn(*p);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& p : items_) fn(static_cast<const Parameter<Scalar>&>(*p));
  }

  void zero_grad() {
    for (auto& p : items_) p->grad.set_zero();
  }

  /// Number of trainable scalars.
  Index trainable_count() const {
    Index n = 0;
    for (const auto& p : items_) {
      if (p->trainable) n += p->value.size();
    }
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> items_;
  std::map<std::string, std::size_t> index_;
};

template <typename Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while its graph lives.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<Scalar>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  Index dim(std::size_t axis) const { return value().dim(axis); }
};

/// Tape of executed operations. Backward visits the tape in exact reverse order.
template <typename Scalar>
class Graph {
 public:
  using ScalarType = Scalar;
  using TensorT = Tensor<Scalar>;
  /// Receives the gradient of the node's output; accumulates into its inputs via grad_of().
  using BackwardFn = std::function<void(Graph&, const TensorT& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// A value that never receives a gradient.
  Var<Scalar> constant(TensorT value) { return push(std::move(value), false, nullptr); }

  /// A free leaf that receives a gradient (used for input gradients).
  Var<Scalar> leaf(TensorT value) { return push(std::move(value), true, nullptr); }

  /// Binds a parameter; after backward its gradient is added to param.grad.
  Var<Scalar> param(Parameter<Scalar>& p) { return push(p.value, p.trainable, &p); }

  /// Records an operation output. `backward` is skipped when no input requires a gradient.
  Var<Scalar> record(TensorT value, std::initializer_list<Var<Scalar>> inputs, BackwardFn backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || requires_grad(in);
    Var<Scalar> out = push(std::move(value), needs, nullptr);
    if (needs) tape_.push_back({out.id, std::move(backward)});
    return out;
  }
  Var<Scalar> record(TensorT value, const std::vector<Var<Scalar>>& inputs, BackwardFn backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || requires_grad(in);
    Var<Scalar> out = push(std::move(value), needs, nullptr);
    if (needs) tape_.push_back({out.id, std::move(backward)});
    return out;
  }

  const TensorT& value(Var<Scalar> v) const { return node(v).value; }
  bool requires_grad(Var<Scalar> v) const { return node(v).requires_grad; }

  /// Gradient of the last backward pass w.r.t. v (zeros if v does not require a gradient).
  const TensorT& grad(Var<Scalar> v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = TensorT::zeros_like(n.value);
    return n.grad;
  }

  /// Mutable gradient accumulator for use inside backward functions.
  TensorT& grad_of(Var<Scalar> v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = TensorT::zeros_like(n.value);
    return n.grad;
  }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t op_count() const { return tape_.size(); }

  /// Populates gradients of d(loss)/d(node) and accumulates into bound parameters.
  void backward(Var<Scalar> loss) {
    if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
    const Node& ln = node(loss);
    if (ln.value.size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + to_string(ln.value.shape()));
    }
    for (auto& n : nodes_) n.grad = TensorT();
    if (!ln.requires_grad) return;
    grad_of(loss).fill(Scalar(1));
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      Node& out = nodes_[it->output];
      if (out.grad.empty()) continue;
      it->backward(*this, out.grad);
    }
    for (auto& n : nodes_) {
      if (n.param != nullptr && n.param->trainable && !n.grad.empty()) n.param->grad += n.grad;
    }
  }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    Parameter<Scalar>* param = nullptr;
    bool requires_grad = false;
  };
  struct TapeEntry {
    std::size_t output;
    BackwardFn backward;
  };

  Var<Scalar> push(TensorT value, bool requires_grad, Parameter<Scalar>* param) {
    nodes_.push_back(Node{std::move(value), TensorT(), param, requires_grad});
    return Var<Scalar>{this, nodes_.size() - 1};
  }

  Node& node(Var<Scalar> v) {
    if (v.graph != this || v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
    return nodes_[v.id];
  }
  const Node& node(Var<Scalar> v) const { return const_cast<Graph*>(this)->node(v); }

  std::deque<Node> nodes_;
  std::vector<TapeEntry> tape_;
};

/// Free-function form of Graph::backward.
template <typename Scalar>
void backward(Var<Scalar> loss) {
  if (loss.graph == nullptr) throw ContractError("backward on an unbound variable");
  loss.graph->backward(loss);
}

}  // namespace wcell
