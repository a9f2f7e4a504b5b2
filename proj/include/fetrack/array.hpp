#pragma once

// DenseArray: a row-major contiguous N-d array of real values. The whole
// library runs in one of two precision modes (float for runtime, double for
// verification), so everything downstream is templated on the scalar type.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "fetrack/common.hpp"

namespace fetrack {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) {
    FETRACK_CHECK_DIM(e >= 0, "negative extent");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <typename T>
class DenseArray {
 public:
  DenseArray() = default;
  explicit DenseArray(Shape shape)
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(numel_of(shape_)), T(0)) {}
  DenseArray(Shape shape, T fill)
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(numel_of(shape_)), fill) {}
  DenseArray(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    FETRACK_CHECK_DIM(numel_of(shape_) == static_cast<std::int64_t>(data_.size()),
                      "shape/data size mismatch");
  }

  static DenseArray zeros(Shape s) { return DenseArray(std::move(s)); }
  static DenseArray full(Shape s, T v) { return DenseArray(std::move(s), v); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t extent(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at2(std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  const T& at2(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  T& at3(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  const T& at3(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  T& at4(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  const T& at4(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  bool same_shape(const DenseArray& o) const { return shape_ == o.shape_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  DenseArray<U> cast() const {
    DenseArray<U> out(shape_);
    for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
bool all_finite(const DenseArray<T>& a) {
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (!std::isfinite(a[i])) return false;
  return true;
}

// NaN/Inf is an error state, never silently propagated past a module boundary.
template <typename T>
void ensure_finite(const DenseArray<T>& a, const char* what) {
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (!std::isfinite(a[i]))
      throw NumericError(std::string("non-finite value in ") + what + " at flat index " +
                         std::to_string(i));
}

}  // namespace fetrack
