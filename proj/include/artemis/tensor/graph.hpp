#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "artemis/tensor/tensor.hpp"

namespace artemis {

/// A trainable tensor together with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  /// Decoupled weight decay applies only to parameters with this flag set.
  bool decay = true;
};

/// Owns parameters with stable addresses, in registration order.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value, bool decay = true);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  void zero_grad();
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t numel() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::uint32_t id) : graph_(graph), id_(id) {}

  Graph* graph() const noexcept { return graph_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  const Tensor& grad() const;

 private:
  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order; backward walks them once in reverse.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf that receives a gradient (used for gradient checks on inputs).
  Var leaf(Tensor value);
  /// Leaf bound to a parameter; repeated calls return the same node.
  Var param(Parameter& p);

  Var push(const char* kind, Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward);

  const Tensor& value(std::uint32_t id) const { return nodes_.at(id).value; }
  const Tensor& grad(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_.at(id).requires_grad; }
  /// Gradient buffer of a node, allocated on first use; null if the node needs no gradient.
  double* grad_buffer(std::uint32_t id);
  const char* kind(std::uint32_t id) const { return nodes_.at(id).kind; }
  const std::vector<std::uint32_t>& inputs(std::uint32_t id) const { return nodes_.at(id).inputs; }

  /// Seeds d(loss)/d(loss) = 1 and propagates; adds leaf gradients into bound parameters.
  void backward(Var loss);

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t last_backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    const char* kind = "leaf";
    Tensor value;
    Tensor grad;
    std::vector<std::uint32_t> inputs;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // deque: values stay put while nodes are appended
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
  std::size_t visits_ = 0;
};

}  // namespace artemis
