#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hoverpost/error.hpp"
#include "hoverpost/tensor.hpp"

namespace hoverpost {

/// Element types accepted in NPY payloads. All are little-endian on disk.
enum class Dtype { kF32, kF64, kU8, kU16, kU32, kI32 };

std::size_t item_size(Dtype dtype);
/// NumPy type string, e.g. "<f4" or "|u1".
std::string_view dtype_descr(Dtype dtype);
std::string_view dtype_name(Dtype dtype);

template <class T>
constexpr Dtype dtype_of();
template <> constexpr Dtype dtype_of<float>() { return Dtype::kF32; }
template <> constexpr Dtype dtype_of<double>() { return Dtype::kF64; }
template <> constexpr Dtype dtype_of<std::uint8_t>() { return Dtype::kU8; }
template <> constexpr Dtype dtype_of<std::uint16_t>() { return Dtype::kU16; }
template <> constexpr Dtype dtype_of<std::uint32_t>() { return Dtype::kU32; }
template <> constexpr Dtype dtype_of<std::int32_t>() { return Dtype::kI32; }

/// In-memory NPY array. After loading, data is always in C order.
struct NpyArray {
  Dtype dtype = Dtype::kF32;
  std::vector<std::size_t> shape;
  bool fortran_order = false;
  std::vector<std::uint8_t> data;

  std::size_t count() const;
  std::string shape_str() const;

  template <class T>
  static NpyArray from(std::vector<std::size_t> shape, std::span<const T> values) {
    NpyArray a;
    a.dtype = dtype_of<T>();
    a.shape = std::move(shape);
    a.data.resize(values.size_bytes());
    if (!values.empty()) std::memcpy(a.data.data(), values.data(), values.size_bytes());
    if (a.count() != values.size())
      throw Error(ErrorCode::kShapeMismatch, "value count does not match shape " + a.shape_str());
    return a;
  }

  /// Element-wise conversion to T from whatever dtype is stored.
  template <class T>
  std::vector<T> cast() const;

  bool operator==(const NpyArray&) const = default;
};

NpyArray parse_npy(std::span<const std::uint8_t> bytes);
/// Serializes with a version 1.0 header.
std::vector<std::uint8_t> serialize_npy(const NpyArray& array);

NpyArray read_npy(const std::filesystem::path& path);
void write_npy(const NpyArray& array, const std::filesystem::path& path);

/// Reads a 1-D array of fixed-width unicode strings ("<U<n>"), as used for
/// per-tile tissue names. Non-ASCII code points are replaced by '?'.
std::vector<std::string> read_npy_strings(const std::filesystem::path& path);

/// Interprets (H, W) as a single-channel map and (H, W, C) as C channels.
template <class T>
Tensor<T> to_tensor(const NpyArray& array);

/// (H, W) when the tensor has one channel and `squeeze` is set, else (H, W, C).
template <class T>
NpyArray from_tensor(const Tensor<T>& tensor, bool squeeze = true) {
  std::vector<std::size_t> shape{static_cast<std::size_t>(tensor.height()),
                                 static_cast<std::size_t>(tensor.width())};
  if (!(squeeze && tensor.channels() == 1)) shape.push_back(static_cast<std::size_t>(tensor.channels()));
  return NpyArray::from<T>(std::move(shape), tensor.span());
}

}  // namespace hoverpost
