#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hourglass/tensor.hpp"

namespace hourglass {

using NodeId = std::uint32_t;

template <typename T>
class Graph;

// A learnable tensor owned by a parameter registry. Gradients from every
// graph that reads it accumulate into `grad`.
template <typename T>
struct Parameter {
  std::string path;
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = true;

  void zero_grad() {
    if (grad.shape() != value.shape()) {
      grad = Tensor<T>(value.shape());
    } else {
      grad.fill(T(0));
    }
  }
};

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph<T>& graph() const { return *graph_; }
  NodeId id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph<T>* graph_ = nullptr;
  NodeId id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the node
// vector is already topologically sorted and backward walks it in reverse.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), {}, nullptr, false); }

  Var<T> leaf(Tensor<T> value, bool requires_grad) {
    return push(std::move(value), {}, nullptr, requires_grad);
  }

  // Binds a registry parameter; repeated binds return the same node.
  Var<T> param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
    Var<T> v = push(p.value, {}, nullptr, p.requires_grad);
    nodes_[v.id()].param = &p;
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  // Appends an op result. The node requires grad iff any input does; the
  // backward rule is dropped otherwise.
  Var<T> record(Tensor<T> value, std::vector<NodeId> inputs, BackwardFn backward) {
    bool rg = false;
    for (auto i : inputs) rg = rg || nodes_[i].requires_grad;
    if (!rg) backward = nullptr;
    return push(std::move(value), std::move(inputs), std::move(backward), rg);
  }

  // With gradients disabled every new node is recorded without a backward
  // rule, so forward-only passes keep no saved intermediates.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  const Tensor<T>& value(NodeId id) const { return nodes_[id].value; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node, allocated as zeros on first use. Returns
  // nullptr when the node does not require grad.
  Tensor<T>* grad_sink(NodeId id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return &n.grad;
  }

  // Gradient accumulated at a node by the last backward pass, or nullptr.
  const Tensor<T>* grad(Var<T> v) const {
    const Node& n = nodes_[v.id()];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  void backward(Var<T> loss) {
    if (loss.value().size() != 1) {
      throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    backward(loss, Tensor<T>(loss.shape(), T(1)));
  }

  // Seeded backward: propagates `seed` as d(out). Parameter gradients are
  // accumulated into the registry when `flush_params` is set.
  void backward(Var<T> out, const Tensor<T>& seed, bool flush_params = true) {
    if (seed.shape() != out.shape()) {
      throw DimensionError("backward seed shape " + shape_str(seed.shape()) + " != output shape " +
                           shape_str(out.shape()));
    }
    Tensor<T>* g = grad_sink(out.id());
    if (g == nullptr) return;
    for (std::size_t i = 0; i < seed.size(); ++i) (*g)[i] += seed[i];
    for (std::int64_t id = out.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, static_cast<NodeId>(id));
    }
    if (!flush_params) return;
    for (auto& n : nodes_) {
      if (n.param == nullptr || n.grad.empty() || !n.param->requires_grad) continue;
      Parameter<T>& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
      for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    }
  }

  // Clears node gradients so the tape can be reused for another seed.
  void zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor<T>();
  }

  // Words held by op outputs (excludes leaves and constants).
  std::size_t activation_words() const {
    std::size_t w = 0;
    for (const auto& n : nodes_) {
      if (!n.inputs.empty()) w += n.value.size();
    }
    return w;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  Var<T> push(Tensor<T> value, std::vector<NodeId> inputs, BackwardFn backward, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    n.requires_grad = requires_grad && grad_enabled_;
    if (!n.requires_grad) n.backward = nullptr;
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<NodeId>(nodes_.size() - 1));
  }

  std::deque<Node> nodes_;  // push_back keeps references from value() valid
  std::unordered_map<const Parameter<T>*, NodeId> param_nodes_;
  bool grad_enabled_ = true;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph_->value(id_);
}

}  // namespace hourglass
