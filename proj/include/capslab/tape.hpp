#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "capslab/tensor.hpp"

namespace capslab {

class Tape;

// Handle to a node on a tape. Cheap to copy; owns nothing.
struct TRef {
  Tape* tape = nullptr;
  std::int32_t idx = -1;

  bool valid() const { return tape != nullptr && idx >= 0; }
  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t numel() const { return value().numel(); }
  bool requires_grad() const;
};

// Reverse-mode tape. Ops append nodes with a backward closure; backward()
// seeds a scalar root and sweeps the tape in reverse creation order.
// A tape is confined to a single worker and freed wholesale; iterative
// callers build a fresh tape per iteration.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until touched by a backward sweep
    bool requires_grad = false;
    std::function<void(Tape&)> back;  // empty for leaves
    const char* op = "leaf";
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  TRef leaf(Tensor value, bool requires_grad = false);
  TRef constant(Tensor value) { return leaf(std::move(value), false); }
  TRef scalar(double v) { return constant(Tensor::scalar(v)); }
  TRef record(const char* op, Tensor value, bool requires_grad, std::function<void(Tape&)> back);

  // Populates grads of every gradient-requiring node reachable below root.
  // root must be scalar. May be called repeatedly (e.g. one call per logit);
  // call clear_grads() in between to avoid mixing sweeps.
  void backward(TRef root);
  void clear_grads();

  Node& at(std::int32_t i) { return nodes_[static_cast<std::size_t>(i)]; }
  const Node& at(std::int32_t i) const { return nodes_[static_cast<std::size_t>(i)]; }

  // grad accumulator for node i, allocated zeroed on first use
  Tensor& grad_buf(std::int32_t i);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

}  // namespace capslab
