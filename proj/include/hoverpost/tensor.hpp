#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace hoverpost {

/// Extents of a row-major H x W x C image. Single-channel maps use C == 1.
struct Shape {
  int height = 0;
  int width = 0;
  int channels = 1;

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return pixels() * channels; }
  bool same_plane(const Shape& o) const { return height == o.height && width == o.width; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Non-owning view over a contiguous H x W x C buffer.
template <class T>
class TensorView {
 public:
  TensorView() = default;
  TensorView(T* data, Shape shape) : data_(data), shape_(shape) {}
  TensorView(T* data, int height, int width, int channels = 1)
      : data_(data), shape_{height, width, channels} {}

  const Shape& shape() const { return shape_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return shape_.size(); }
  bool empty() const { return shape_.size() == 0; }

  T* data() const { return data_; }
  std::span<T> span() const { return {data_, size()}; }
  T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(int r, int c, int k = 0) const {
    assert(r >= 0 && r < shape_.height && c >= 0 && c < shape_.width && k >= 0 && k < shape_.channels);
    return data_[(static_cast<std::size_t>(r) * shape_.width + c) * shape_.channels + k];
  }
  /// Pointer to the channel vector of pixel `i` (flat pixel index).
  T* pixel(std::size_t i) const { return data_ + i * shape_.channels; }

  operator TensorView<const T>() const
    requires(!std::is_const_v<T>)
  {
    return {data_, shape_};
  }

 private:
  T* data_ = nullptr;
  Shape shape_{};
};

/// Owning row-major H x W x C buffer with value semantics.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(int height, int width, int channels = 1, T fill = T{})
      : Tensor(Shape{height, width, channels}, fill) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    assert(data_.size() == shape_.size());
  }

  const Shape& shape() const { return shape_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T* pixel(std::size_t i) { return data_.data() + i * shape_.channels; }
  const T* pixel(std::size_t i) const { return data_.data() + i * shape_.channels; }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(int r, int c, int k = 0) { return view()(r, c, k); }
  const T& operator()(int r, int c, int k = 0) const { return view()(r, c, k); }

  TensorView<T> view() { return {data_.data(), shape_}; }
  TensorView<const T> view() const { return {data_.data(), shape_}; }
  operator TensorView<const T>() const { return view(); }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

/// Per-pixel instance labels; 0 is background, nuclei are 1..K.
using InstanceMap = Tensor<std::uint32_t>;
using InstanceView = TensorView<const std::uint32_t>;
using Mask = Tensor<std::uint8_t>;
using MaskView = TensorView<const std::uint8_t>;

inline std::string Shape::str() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

}  // namespace hoverpost
