#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "veil/error.hpp"

namespace veil {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Dense row-major array with a runtime shape. Clips use T x H x W x C,
// single frames or coefficient slices use H x W x C.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                       shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  // Contiguous block along the leading axis (e.g. frame t of a clip).
  Tensor slice(std::size_t index) const {
    Shape inner(shape_.begin() + 1, shape_.end());
    const std::size_t n = shape_size(inner);
    if (index >= shape_.at(0)) throw ShapeError("slice index out of range");
    return Tensor(std::move(inner),
                  std::vector<T>(data_.begin() + index * n,
                                 data_.begin() + (index + 1) * n));
  }

  void set_slice(std::size_t index, const Tensor& block) {
    const std::size_t n = block.size();
    if (index >= shape_.at(0) || n * shape_.at(0) != data_.size()) {
      throw ShapeError("set_slice: block " + shape_string(block.shape()) +
                       " incompatible with " + shape_string(shape_));
    }
    std::copy(block.data_.begin(), block.data_.end(),
              data_.begin() + index * n);
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  Shape shape = parts.front().shape();
  shape.insert(shape.begin(), parts.size());
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < parts.size(); ++i) out.set_slice(i, parts[i]);
  return out;
}

}  // namespace veil
