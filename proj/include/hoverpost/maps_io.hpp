#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hoverpost/npy.hpp"
#include "hoverpost/types.hpp"

namespace hoverpost {

/// Converts a 2-D (or H x W x 1) label array to an InstanceMap. Floating point
/// labels must hold exact non-negative integers.
InstanceMap to_instance_map(const NpyArray& array);

/// Converts an H x W x 3 array to a tile image. Floating point inputs are
/// rounded and clamped to [0, 255].
TileImage to_tile_image(const NpyArray& array);

struct PanNukeTile {
  TileImage image;
  InstanceMap instances;
  /// Fused label -> source mask channel (0..4).
  ClassTable classes;
  std::string tissue;
};

struct PanNukeFold {
  std::vector<PanNukeTile> tiles;
  /// Pixels claimed by more than one class channel (lowest channel kept).
  std::size_t collisions = 0;
};

inline constexpr int kPanNukeClassChannels = 5;

/// Fuses one H x W x 6 PanNuke mask (channels 0..4 instance-labeled per
/// class, channel 5 background) into an InstanceMap with labels 1..K ordered
/// by (channel, source label). Returns the number of collided pixels.
std::size_t fuse_pannuke_mask(TensorView<const std::uint32_t> mask, InstanceMap& instances,
                              ClassTable& classes);

PanNukeFold fuse_pannuke_fold(const NpyArray& images, const NpyArray& masks,
                              std::vector<std::string> tissues);

PanNukeFold load_pannuke_fold(const std::filesystem::path& images_path,
                              const std::filesystem::path& masks_path,
                              const std::filesystem::path& types_path);

/// Compact instance JSON: {"version":1,"nuclei":[...]} with a fixed key order.
std::string instances_json(std::span<const NucleusRecord> records);
void write_instances_json(std::span<const NucleusRecord> records, const std::filesystem::path& path);
std::vector<NucleusRecord> read_instances_json(const std::filesystem::path& path);

/// Fixed overlay palette, indexed by class id modulo its size.
std::array<std::uint8_t, 3> class_color(int class_id);

/// Copy of `image` with every instance boundary pixel (a labeled pixel with a
/// 4-neighbour of a different label or outside the tile) painted in its
/// class colour. Labels missing from `classes` use class 0.
TileImage overlay_instances(const TileImage& image, InstanceView instances, const ClassTable& classes);

void write_png(const TileImage& image, const std::filesystem::path& path);
TileImage read_png(const std::filesystem::path& path);

void write_overlay_png(const TileImage& image, InstanceView instances, const ClassTable& classes,
                       const std::filesystem::path& path);

}  // namespace hoverpost
