#include "capslab/tape.hpp"

namespace capslab {

const Tensor& TRef::value() const { return tape->at(idx).value; }
const Tensor& TRef::grad() const { return tape->at(idx).grad; }
bool TRef::requires_grad() const { return tape->at(idx).requires_grad; }

TRef Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

TRef Tape::record(const char* op, Tensor value, bool requires_grad,
                  std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  n.op = op;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buf(std::int32_t i) {
  Node& n = nodes_[static_cast<std::size_t>(i)];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(TRef root) {
  if (root.tape != this) throw Error("backward: root belongs to a different tape");
  if (root.value().numel() != 1)
    throw ShapeError("backward", "root must be scalar, got " + shape_str(root.shape()));
  // make sure every requiring node ends the sweep with a populated grad
  for (std::int32_t i = 0; i <= root.idx; ++i)
    if (nodes_[static_cast<std::size_t>(i)].requires_grad) grad_buf(i);
  grad_buf(root.idx)[0] = 1.0;
  for (std::int32_t i = root.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.requires_grad && n.back) n.back(*this);
  }
}

void Tape::clear_grads() {
  for (Node& n : nodes_)
    if (!n.grad.empty()) std::fill(n.grad.values().begin(), n.grad.values().end(), 0.0);
}

}  // namespace capslab
