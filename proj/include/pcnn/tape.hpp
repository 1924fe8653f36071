#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "pcnn/tensor.hpp"

namespace pcnn {

/// Trainable tensor with its gradient accumulator. `name` is the path used
/// in checkpoints, e.g. "patchconv/weight".
struct Param {
  Param() = default;
  Param(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid as long as its tape.
class Var {
public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const noexcept { return *tape_; }
  std::size_t id() const noexcept { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t size() const { return value().size(); }
  /// Gradient after Tape::backward (zeros if the node was not reached).
  const Tensor& grad() const;

private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of operations for reverse-mode differentiation.
/// Node ids are assigned in creation order, so every input id is smaller
/// than the id of the node consuming it. Confined to one thread.
class Tape {
public:
  // Called during backward with the node id; reads grad(id) and accumulates
  // into the inputs' gradients.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(Param& p);
  /// Records an op. The backward function is kept only when some input
  /// requires a gradient.
  Var record(std::string_view op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1, runs every recorded backward in reverse order
  /// and adds leaf gradients into the bound Params.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& grad(std::size_t id);
  /// Gradient accumulator of node `id`, zero-initialised on first access.
  Tensor& grad_accumulator(std::size_t id);

  Var var(std::size_t id) { return Var(this, id); }

  /// Non-smooth ops report how far their inputs are from a kink, tie or
  /// neighbor swap; the tape keeps the smallest value (+inf if none).
  void note_margin(double margin) noexcept {
    if (margin < min_margin_) min_margin_ = margin;
  }
  double min_margin() const noexcept { return min_margin_; }

private:
  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Param* param = nullptr;
    bool requires_grad = false;
  };
  // deque keeps references to earlier nodes stable while recording.
  std::deque<Node> nodes_;
  bool backward_done_ = false;
  double min_margin_ = std::numeric_limits<double>::infinity();
};

}  // namespace pcnn
