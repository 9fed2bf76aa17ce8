#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace rshaze {

/// Shape of a rank-4 tensor in batch-channel-height-width order.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense rank-4 tensor, contiguous row-major (n, c, h, w).
/// T is float for training/inference, double for verification.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s) : shape_(s), data_(s.numel(), T(0)) {}
  Tensor(int n, int c, int h, int w) : Tensor(Shape{n, c, h, w}) {}

  static Tensor full(Shape s, T value) {
    Tensor t(s);
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }
  /// Scalar tensor of shape (1,1,1,1).
  static Tensor scalar(T value) { return full({1, 1, 1, 1}, value); }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  const T& at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  /// Value at the first element; requires numel == 1 for scalar reads.
  T item() const;

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Same buffer reinterpreted under a new shape with equal element count.
  Tensor reshaped(Shape s) const;

  /// True if every element is finite.
  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

/// Debug-mode fault detection: when enabled, ops reject non-finite outputs.
/// Defaults to on in debug builds, off in release.
void set_debug_checks(bool enabled);
bool debug_checks_enabled();

/// Throws std::runtime_error naming `where` if checks are on and t has NaN/Inf.
template <typename T>
void check_finite(const Tensor<T>& t, const char* where);

}  // namespace rshaze
