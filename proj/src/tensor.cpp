#include "capslab/tensor.hpp"

namespace capslab {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (const auto d : s) n *= d;
  return n;
}

std::vector<std::int64_t> shape_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : Error("shape mismatch in " + op + ": " + shape_str(a) + " vs " + shape_str(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : Error("shape error in " + op + ": " + detail) {}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), v_(static_cast<std::size_t>(shape_numel(shape_)), fill) {
  for (const auto d : shape_)
    if (d <= 0) throw ShapeError("tensor", "non-positive extent in " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, UninitTag) : shape_(std::move(shape)) {
  for (const auto d : shape_)
    if (d <= 0) throw ShapeError("tensor", "non-positive extent in " + shape_str(shape_));
  v_.resize(static_cast<std::size_t>(shape_numel(shape_)));  // default-init, no fill
}

Tensor Tensor::uninit(Shape shape) { return Tensor(std::move(shape), UninitTag{}); }

Tensor::Tensor(Shape shape, DVec values) : shape_(std::move(shape)), v_(std::move(values)) {
  if (shape_numel(shape_) != static_cast<std::int64_t>(v_.size()))
    throw ShapeError("tensor", "value count " + std::to_string(v_.size()) +
                                   " does not match shape " + shape_str(shape_));
}

double Tensor::item() const {
  if (v_.size() != 1)
    throw ShapeError("item", "expected a single element, got shape " + shape_str(shape_));
  return v_[0];
}

Tensor Tensor::reshaped(Shape s) const {
  if (shape_numel(s) != numel()) throw ShapeError("reshape", shape_, s);
  Tensor out;
  out.shape_ = std::move(s);
  out.v_ = v_;
  return out;
}

}  // namespace capslab
