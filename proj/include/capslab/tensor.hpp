#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace capslab {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// base class for every structured failure the library raises
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  ShapeError(const std::string& op, const std::string& detail);
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// vector storage that skips zero-fill on resize; ops that fully overwrite
// their output use Tensor::uninit to avoid touching memory twice
template <typename T>
struct default_init_allocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = default_init_allocator<U>;
  };
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

using DVec = std::vector<double, default_init_allocator<double>>;

// Dense row-major f64 array. Plain value type; tensors detached from any
// tape are immutable by convention and safe to share across workers.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, DVec values);

  static Tensor scalar(double v) { return Tensor({}, DVec{v}); }
  // allocated but not filled; caller promises to write every element
  static Tensor uninit(Shape shape);

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(v_.size()); }
  std::int64_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t ndim() const { return shape_.size(); }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  DVec& values() { return v_; }
  const DVec& values() const { return v_; }

  double& operator[](std::int64_t i) { return v_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return v_[static_cast<std::size_t>(i)]; }

  bool empty() const { return v_.empty(); }
  double item() const;  // value of a single-element tensor

  Tensor reshaped(Shape s) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  struct UninitTag {};
  Tensor(Shape shape, UninitTag);

  Shape shape_;
  DVec v_;
};

// row-major strides of a shape
std::vector<std::int64_t> shape_strides(const Shape& s);

}  // namespace capslab
