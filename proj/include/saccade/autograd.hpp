#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "saccade/tensor.hpp"

namespace saccade {

class Tape;

// Named trainable tensor owned by a module.
struct Parameter {
  std::string name;
  Tensor value;
};

using ParameterRefs = std::vector<Parameter*>;

// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode gradient tape. Nodes are appended in evaluation order, so
// walking them backwards is a valid reverse topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Appends an op result. The backward closure is dropped when no parent
  // requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);

  // Leaf for a module parameter; repeated binds return the same node.
  // Frozen parameters bind as constants.
  Var bind(Parameter& p);
  void freeze(const ParameterRefs& params);

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

  // Gradient of the last backward() for v; zeros when v was not reached.
  Tensor grad(Var v) const;
  // Gradients for bound parameters, in the order given.
  std::vector<Tensor> grads(const ParameterRefs& params) const;

  // Throws std::invalid_argument if the loss is not a scalar.
  void backward(Var loss);

  // Adds g into v's gradient buffer; no-op when v does not require grad.
  void accumulate(Var v, const Tensor& g);
  // Writable gradient buffer, allocated to zeros on first use. Returns
  // nullptr when v does not require grad.
  Tensor* grad_buffer(Var v);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
  std::unordered_set<const Parameter*> frozen_;
};

}  // namespace saccade
