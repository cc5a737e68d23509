#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "winnorm/error.hpp"

namespace winnorm {

/// Extents of a rank-4 N x C x H x W feature map.
struct Dims {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr bool operator==(const Dims&) const = default;

  std::string str() const;
};

/// Dense row-major N x C x H x W buffer; element (n,c,h,w) lives at ((n*C + c)*H + h)*W + w.
/// Matrices are stored as N x C x 1 x 1 and scalars as 1 x 1 x 1 x 1.
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Dims dims, T fill = T{0}) : dims_(dims), data_(dims.numel(), fill) {}
  Tensor4(Dims dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != dims_.numel()) {
      throw ShapeError("buffer of " + std::to_string(data_.size()) + " elements for dims " + dims_.str());
    }
  }

  static Tensor4 matrix(std::size_t rows, std::size_t cols, T fill = T{0}) {
    return Tensor4(Dims{rows, cols, 1, 1}, fill);
  }
  static Tensor4 scalar(T v) { return Tensor4(Dims{1, 1, 1, 1}, v); }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * dims_.c + c) * dims_.h + h) * dims_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h = 0, std::size_t w = 0) noexcept {
    return data_[offset(n, c, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h = 0, std::size_t w = 0) const noexcept {
    return data_[offset(n, c, h, w)];
  }

  /// Contiguous H x W plane of instance n, channel c.
  std::span<T> plane(std::size_t n, std::size_t c) noexcept {
    return std::span<T>(data_).subspan(offset(n, c, 0, 0), dims_.plane());
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const noexcept {
    return std::span<const T>(data_).subspan(offset(n, c, 0, 0), dims_.plane());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor4<U> cast() const {
    return Tensor4<U>(dims_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor4&) const = default;

 private:
  Dims dims_{};
  std::vector<T> data_;
};

/// Throws DegenerateInputError naming `where` if any element is NaN or infinite.
template <typename T>
void require_finite(std::span<const T> values, const char* where);

}  // namespace winnorm
