#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cadtrack {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Raised on any shape contract violation; the message names the offending shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline DimensionError dim_error(const std::string& op, const Shape& a, const Shape& b) {
  return DimensionError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

inline DimensionError dim_error(const std::string& op, const Shape& a) {
  return DimensionError(op + ": invalid shape " + shape_str(a));
}

/// Dense row-major tensor with value semantics.
///
/// Element type is a template parameter: `float` for normal runs, `double`
/// for gradient verification. Every extent is positive and
/// `numel() == product(shape())`.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(numel_of(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != numel_of(shape_)) {
      throw DimensionError("Tensor: shape " + shape_str(shape_) + " needs " +
                           std::to_string(numel_of(shape_)) + " values, got " +
                           std::to_string(data_.size()));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s), T(0)); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  static Tensor eye(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  T item() const {
    if (data_.size() != 1) throw dim_error("item", shape_);
    return data_[0];
  }

  Tensor reshaped(Shape s) const {
    if (numel_of(s) != numel()) throw dim_error("reshape", shape_, s);
    return Tensor(std::move(s), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    if (shape_.empty()) throw DimensionError("Tensor: rank-0 shapes are not used; use [1]");
    for (auto e : shape_) {
      if (e == 0) throw DimensionError("Tensor: zero extent in " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw dim_error("max_abs_diff", a.shape(), b.shape());
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// max_i |a_i - b_i| / max(|b_i|, floor)
template <typename T>
T max_rel_diff(const Tensor<T>& a, const Tensor<T>& b, T floor = T(1e-12)) {
  if (a.shape() != b.shape()) throw dim_error("max_rel_diff", a.shape(), b.shape());
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
  }
  return m;
}

}  // namespace cadtrack
