#include "pcnn/tape.hpp"

#include <stdexcept>

#include "pcnn/error.hpp"

namespace pcnn {

Param::Param(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape(), 0.0) {}

const Tensor& Var::value() const { return tape_->value(id_); }

const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Param& p) {
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape(), 0.0);
  Node n;
  n.op = "param";
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  const std::size_t id = nodes_.size();
  bool needs = false;
  for (std::size_t in : inputs) {
    if (in >= id) throw std::logic_error("tape input id must precede the node it feeds");
    needs = needs || nodes_[in].requires_grad;
  }
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, id);
}

const Tensor& Tape::grad(std::size_t id) { return grad_accumulator(id); }

Tensor& Tape::grad_accumulator(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::logic_error("loss variable belongs to another tape");
  if (backward_done_) throw std::logic_error("backward() already ran on this tape");
  if (loss.value().size() != 1)
    throw DimensionError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  backward_done_ = true;
  grad_accumulator(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
}

}  // namespace pcnn
