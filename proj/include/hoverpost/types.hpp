#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "hoverpost/tensor.hpp"

namespace hoverpost {

/// Instance label -> class id.
using ClassTable = std::map<std::uint32_t, int>;
/// Instance label -> probability of the assigned class.
using ProbTable = std::map<std::uint32_t, float>;

/// RGB tile, stored as an H x W x 3 byte tensor.
struct TileImage {
  Tensor<std::uint8_t> rgb;

  TileImage() = default;
  TileImage(int height, int width, std::uint8_t fill = 0) : rgb(height, width, 3, fill) {}
  explicit TileImage(Tensor<std::uint8_t> pixels);

  int height() const { return rgb.height(); }
  int width() const { return rgb.width(); }
  bool operator==(const TileImage&) const = default;
};

/// One segmented nucleus. Coordinates are (row, col); bbox is inclusive
/// [rmin, cmin, rmax, cmax].
struct NucleusRecord {
  std::uint32_t id = 0;
  int class_id = 0;
  float class_prob = 0.0f;
  std::array<float, 2> centroid{};
  std::array<int, 4> bbox{};
  std::vector<std::array<int, 2>> contour;

  bool operator==(const NucleusRecord&) const = default;
};

}  // namespace hoverpost
