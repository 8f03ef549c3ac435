#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dntm {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ", ";
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Raised when operand shapes do not conform. Carries the operation name and
// both offending shapes so callers can report them verbatim.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string op, Shape lhs, Shape rhs)
      : std::invalid_argument(op + ": shape mismatch " + to_string(lhs) + " vs " + to_string(rhs)),
        op_(std::move(op)),
        lhs_(std::move(lhs)),
        rhs_(std::move(rhs)) {}

  const std::string& op() const noexcept { return op_; }
  const Shape& lhs() const noexcept { return lhs_; }
  const Shape& rhs() const noexcept { return rhs_; }

 private:
  std::string op_;
  Shape lhs_;
  Shape rhs_;
};

// Invalid run or model configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major array. Rank-2 arrays are the common case; rank-3 arrays hold
// batched memory content as [batch, cells, width].
template <typename Real>
class Array {
 public:
  using value_type = Real;

  Array() = default;

  explicit Array(Shape shape, Real fill = Real{0})
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {
    check_dims();
  }

  Array(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("Array", shape_, Shape{data_.size()});
    }
  }

  static Array scalar(Real v) { return Array({1, 1}, std::vector<Real>{v}); }

  static Array row(std::initializer_list<Real> values) {
    return Array({1, values.size()}, std::vector<Real>(values));
  }

  static Array matrix(std::size_t rows, std::size_t cols, std::initializer_list<Real> values) {
    return Array({rows, cols}, std::vector<Real>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Leading dimension, and the product of the remaining ones.
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept { return rows() == 0 ? 0 : data_.size() / rows(); }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  Real& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  const Real& at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  std::vector<Real>& storage() noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  std::span<Real> row_span(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const Real> row_span(std::size_t r) const noexcept {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  Real item() const {
    if (data_.size() != 1) throw ShapeError("item", shape_, Shape{1, 1});
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  template <typename Other>
  Array<Other> cast() const {
    return Array<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

  bool operator==(const Array&) const = default;

 private:
  void check_dims() const {
    for (auto d : shape_) {
      if (d == 0) throw ShapeError("Array", shape_, Shape{});
    }
  }

  Shape shape_;
  std::vector<Real> data_;
};

}  // namespace dntm
