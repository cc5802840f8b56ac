#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tsenas/error.hpp"

namespace tsenas::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Dense row-major tensor. Extents are positive; a rank-0 shape is a scalar.
template <class S>
class BasicTensor {
 public:
  BasicTensor() : values_(1) {}

  explicit BasicTensor(Shape shape, S fill = S{})
      : shape_(std::move(shape)), values_(numel(shape_), fill) {
    check_extents();
  }

  BasicTensor(Shape shape, std::vector<S> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents();
    if (numel(shape_) != values_.size()) {
      throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " +
                       std::to_string(numel(shape_)) + " values, got " +
                       std::to_string(values_.size()));
    }
  }

  static BasicTensor scalar(S v) { return BasicTensor(Shape{}, std::vector<S>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const S> values() const { return values_; }
  std::span<S> values() { return values_; }
  const std::vector<S>& storage() const { return values_; }

  S& operator[](std::size_t i) { return values_[i]; }
  const S& operator[](std::size_t i) const { return values_[i]; }

  S item() const {
    if (values_.size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    }
    return values_[0];
  }

  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), values_);
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) = default;

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeError("zero extent in shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<S> values_;
};

using Tensor = BasicTensor<double>;

inline std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

}  // namespace tsenas::ad
