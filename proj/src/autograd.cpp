#include "saccade/autograd.hpp"

#include <stdexcept>

namespace saccade {

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents,
                 BackwardFn fn) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || requires_grad(p);
  nodes_.push_back(
      Node{std::move(value), {}, needs, false, needs ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var>& parents,
                 BackwardFn fn) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || requires_grad(p);
  nodes_.push_back(
      Node{std::move(value), {}, needs, false, needs ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::bind(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  Var v = frozen_.contains(&p) ? constant(p.value) : variable(p.value);
  bound_.emplace(&p, v.id());
  return v;
}

void Tape::freeze(const ParameterRefs& params) {
  for (const Parameter* p : params) {
    if (bound_.contains(p)) {
      throw std::logic_error("cannot freeze already bound parameter " + p->name);
    }
    frozen_.insert(p);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (!n.has_grad) return Tensor::zeros(n.value.shape());
  return n.grad;
}

std::vector<Tensor> Tape::grads(const ParameterRefs& params) const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Parameter* p : params) {
    auto it = bound_.find(p);
    if (it == bound_.end()) {
      out.push_back(Tensor::zeros(p->value.shape()));
    } else {
      out.push_back(grad(Var(const_cast<Tape*>(this), it->second)));
    }
  }
  return out;
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_str(value(loss).shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (!requires_grad(loss)) return;
  Node& root = nodes_[loss.id()];
  root.grad = Tensor(root.value.shape(), 1.0);
  root.has_grad = true;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

Tensor* Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id());
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (Tensor* buf = grad_buffer(v)) *buf += g;
}

}  // namespace saccade
