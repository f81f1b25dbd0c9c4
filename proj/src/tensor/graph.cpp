#include "artemis/tensor/graph.hpp"

#include <stdexcept>

namespace artemis {

Parameter& ParameterSet::add(std::string name, Tensor value, bool decay) {
  if (index_.count(name) != 0) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  index_.emplace(name, params_.size());
  Tensor grad(value.shape(), 0.0);
  params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad), decay});
  return params_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) {
    p.grad.fill(0.0);
  }
}

std::size_t ParameterSet::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    n += p.value.size();
  }
  return n;
}

const Tensor& Var::value() const { return graph_->value(id_); }
const Tensor& Var::grad() const { return graph_->grad(id_); }

Var Graph::constant(Tensor value) {
  Node n;
  n.kind = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::leaf(Tensor value) {
  Node n;
  n.kind = "leaf";
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  Node n;
  n.kind = "param";
  n.value = p.value;
  n.requires_grad = grad_enabled_;
  n.param = &p;
  nodes_.push_back(std::move(n));
  auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Graph::push(const char* kind, Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (auto id : inputs) {
      if (nodes_.at(id).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) {
    n.backward = std::move(backward);
  }
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Graph::grad(std::uint32_t id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.empty()) {
    static thread_local Tensor zeros;
    zeros = Tensor(n.value.shape(), 0.0);
    return zeros;
  }
  return n.grad;
}

double* Graph::grad_buffer(std::uint32_t id) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) {
    return nullptr;
  }
  if (n.grad.empty()) {
    n.grad = Tensor(n.value.shape(), 0.0);
  }
  return n.grad.data().data();
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) {
    throw std::invalid_argument("loss belongs to a different graph");
  }
  if (nodes_.at(loss.id()).value.size() != 1) {
    throw DimensionError("backward needs a scalar loss, got shape " + shape_str(nodes_.at(loss.id()).value.shape()));
  }
  if (backward_done_) {
    throw std::logic_error("backward already ran on this graph");
  }
  backward_done_ = true;
  visits_ = 0;
  if (!nodes_[loss.id()].requires_grad) {
    return;
  }
  grad_buffer(loss.id())[0] = 1.0;
  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    ++visits_;
    if (n.grad.empty()) {
      continue;
    }
    if (n.backward) {
      n.backward(*this, id);
    }
    if (n.param != nullptr) {
      auto& dst = n.param->grad.values();
      const auto& src = n.grad.values();
      for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
      }
    }
  }
}

}  // namespace artemis
