#include "hoverpost/maps_io.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "json.hpp"

namespace hoverpost {

TileImage::TileImage(Tensor<std::uint8_t> pixels) : rgb(std::move(pixels)) {
  if (rgb.channels() != 3) throw Error(ErrorCode::kShapeMismatch, "tile image must have 3 channels");
}

namespace {

using json = nlohmann::json;

// Element `i` of the array payload converted to double.
double element(const NpyArray& a, std::size_t i) {
  const std::uint8_t* p = a.data.data() + i * item_size(a.dtype);
  switch (a.dtype) {
    case Dtype::kF32: { float v; std::memcpy(&v, p, 4); return v; }
    case Dtype::kF64: { double v; std::memcpy(&v, p, 8); return v; }
    case Dtype::kU8: return *p;
    case Dtype::kU16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    case Dtype::kU32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
    case Dtype::kI32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
  }
  return 0.0;
}

std::vector<std::uint32_t> exact_labels(const NpyArray& a, std::size_t begin, std::size_t count) {
  std::vector<std::uint32_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double v = element(a, begin + i);
    if (!(v >= 0.0) || v > 4294967295.0 || std::floor(v) != v) {
      throw Error(ErrorCode::kInvalidArgument,
                  "label array holds a non-integer or negative value at element " + std::to_string(begin + i));
    }
    out[i] = static_cast<std::uint32_t>(v);
  }
  return out;
}

std::vector<std::uint8_t> clamp_bytes(const NpyArray& a, std::size_t begin, std::size_t count) {
  std::vector<std::uint8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double v = std::round(element(a, begin + i));
    out[i] = static_cast<std::uint8_t>(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 255.0));
  }
  return out;
}

// Shortest decimal form of a float, re-read as double so the JSON printer
// does not expose float widening noise (0.3f -> 0.30000001192092896).
double json_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  double d = 0.0;
  std::from_chars(buf, res.ptr, d);
  return d;
}

void validate(std::span<const NucleusRecord> records) {
  std::set<std::uint32_t> ids;
  for (const auto& r : records) {
    if (r.id == 0) throw Error(ErrorCode::kInvalidArgument, "nucleus id must be positive");
    if (!ids.insert(r.id).second)
      throw Error(ErrorCode::kInvalidArgument, "duplicate nucleus id " + std::to_string(r.id));
    if (r.class_id < 0) throw Error(ErrorCode::kInvalidArgument, "negative class id");
    if (!(r.class_prob >= 0.0f && r.class_prob <= 1.0f))
      throw Error(ErrorCode::kInvalidArgument, "class_prob outside [0, 1]");
    if (r.contour.empty()) throw Error(ErrorCode::kInvalidArgument, "empty contour");
    for (const auto& [row, col] : r.contour) {
      if (row < r.bbox[0] || row > r.bbox[2] || col < r.bbox[1] || col > r.bbox[3])
        throw Error(ErrorCode::kInvalidArgument, "contour vertex outside bbox for id " + std::to_string(r.id));
    }
  }
}

}  // namespace

InstanceMap to_instance_map(const NpyArray& array) {
  const bool ok = array.shape.size() == 2 || (array.shape.size() == 3 && array.shape[2] == 1);
  if (!ok) throw Error(ErrorCode::kShapeMismatch, "instance map must be H x W, got " + array.shape_str());
  Shape s{static_cast<int>(array.shape[0]), static_cast<int>(array.shape[1]), 1};
  return InstanceMap(s, exact_labels(array, 0, array.count()));
}

TileImage to_tile_image(const NpyArray& array) {
  if (array.shape.size() != 3 || array.shape[2] != 3)
    throw Error(ErrorCode::kShapeMismatch, "tile image must be H x W x 3, got " + array.shape_str());
  Shape s{static_cast<int>(array.shape[0]), static_cast<int>(array.shape[1]), 3};
  if (s.height < 1 || s.width < 1) throw Error(ErrorCode::kShapeMismatch, "empty tile image");
  return TileImage(Tensor<std::uint8_t>(s, clamp_bytes(array, 0, array.count())));
}

std::size_t fuse_pannuke_mask(TensorView<const std::uint32_t> mask, InstanceMap& instances,
                              ClassTable& classes) {
  if (mask.channels() < kPanNukeClassChannels)
    throw Error(ErrorCode::kShapeMismatch, "mask needs at least 5 class channels, got " + mask.shape().str());
  const std::size_t n = mask.shape().pixels();
  // Winning (channel, source label) per pixel, encoded as channel << 32 | label.
  std::vector<std::uint64_t> owner(n, 0);
  std::size_t collisions = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t* px = mask.pixel(i);
    bool claimed = false;
    for (int ch = 0; ch < kPanNukeClassChannels; ++ch) {
      if (px[ch] == 0) continue;
      if (claimed) {
        ++collisions;
        break;
      }
      owner[i] = (std::uint64_t{static_cast<std::uint32_t>(ch) + 1} << 32) | px[ch];
      claimed = true;
    }
  }
  std::vector<std::uint64_t> keys(owner.begin(), owner.end());
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  if (!keys.empty() && keys.front() == 0) keys.erase(keys.begin());

  instances = InstanceMap(mask.height(), mask.width(), 1, 0);
  classes.clear();
  for (std::size_t k = 0; k < keys.size(); ++k)
    classes[static_cast<std::uint32_t>(k + 1)] = static_cast<int>(keys[k] >> 32) - 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (owner[i] == 0) continue;
    const auto it = std::lower_bound(keys.begin(), keys.end(), owner[i]);
    instances[i] = static_cast<std::uint32_t>(it - keys.begin()) + 1;
  }
  return collisions;
}

PanNukeFold fuse_pannuke_fold(const NpyArray& images, const NpyArray& masks, std::vector<std::string> tissues) {
  if (images.shape.size() != 4 || images.shape[3] != 3)
    throw Error(ErrorCode::kShapeMismatch, "images must be (N, H, W, 3), got " + images.shape_str());
  if (masks.shape.size() != 4 || masks.shape[3] != 6)
    throw Error(ErrorCode::kShapeMismatch, "masks must be (N, H, W, 6), got " + masks.shape_str());
  if (images.shape[0] != masks.shape[0] || images.shape[1] != masks.shape[1] || images.shape[2] != masks.shape[2])
    throw Error(ErrorCode::kShapeMismatch,
                "images " + images.shape_str() + " and masks " + masks.shape_str() + " disagree");
  const std::size_t n = images.shape[0];
  if (!tissues.empty() && tissues.size() != n)
    throw Error(ErrorCode::kShapeMismatch, "types has " + std::to_string(tissues.size()) + " entries, expected " +
                                               std::to_string(n));
  const int h = static_cast<int>(images.shape[1]);
  const int w = static_cast<int>(images.shape[2]);
  const std::size_t img_len = static_cast<std::size_t>(h) * w * 3;
  const std::size_t mask_len = static_cast<std::size_t>(h) * w * 6;

  PanNukeFold fold;
  fold.tiles.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    PanNukeTile tile;
    tile.image = TileImage(Tensor<std::uint8_t>(Shape{h, w, 3}, clamp_bytes(images, t * img_len, img_len)));
    const Tensor<std::uint32_t> mask(Shape{h, w, 6}, exact_labels(masks, t * mask_len, mask_len));
    fold.collisions += fuse_pannuke_mask(mask.view(), tile.instances, tile.classes);
    if (!tissues.empty()) tile.tissue = tissues[t];
    fold.tiles.push_back(std::move(tile));
  }
  return fold;
}

PanNukeFold load_pannuke_fold(const std::filesystem::path& images_path, const std::filesystem::path& masks_path,
                              const std::filesystem::path& types_path) {
  const NpyArray images = read_npy(images_path);
  const NpyArray masks = read_npy(masks_path);
  return fuse_pannuke_fold(images, masks, read_npy_strings(types_path));
}

std::string instances_json(std::span<const NucleusRecord> records) {
  validate(records);
  nlohmann::ordered_json nuclei = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    nlohmann::ordered_json contour = nlohmann::ordered_json::array();
    for (const auto& [row, col] : r.contour) contour.push_back({row, col});
    nuclei.push_back({{"id", r.id},
                      {"class_id", r.class_id},
                      {"class_prob", json_float(r.class_prob)},
                      {"centroid", {json_float(r.centroid[0]), json_float(r.centroid[1])}},
                      {"bbox", {r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]}},
                      {"contour", std::move(contour)}});
  }
  const nlohmann::ordered_json doc = {{"version", 1}, {"nuclei", std::move(nuclei)}};
  return doc.dump();
}

void write_instances_json(std::span<const NucleusRecord> records, const std::filesystem::path& path) {
  const std::string text = instances_json(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string() + " for writing");
  out << text << '\n';
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

std::vector<NucleusRecord> read_instances_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
  }
  std::vector<NucleusRecord> out;
  for (const auto& n : doc.at("nuclei")) {
    NucleusRecord r;
    r.id = n.at("id").get<std::uint32_t>();
    r.class_id = n.at("class_id").get<int>();
    r.class_prob = n.at("class_prob").get<float>();
    r.centroid = {n.at("centroid")[0].get<float>(), n.at("centroid")[1].get<float>()};
    for (int i = 0; i < 4; ++i) r.bbox[i] = n.at("bbox")[i].get<int>();
    for (const auto& v : n.at("contour")) r.contour.push_back({v[0].get<int>(), v[1].get<int>()});
    out.push_back(std::move(r));
  }
  return out;
}

std::array<std::uint8_t, 3> class_color(int class_id) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{
      {0, 255, 255},    // untyped
      {255, 0, 0},      // 1
      {0, 255, 0},      // 2
      {0, 0, 255},      // 3
      {255, 255, 0},    // 4
      {255, 165, 0},    // 5
      {255, 0, 255},    // 6
      {255, 255, 255},  // 7
  }};
  const auto n = static_cast<int>(kPalette.size());
  return kPalette[static_cast<std::size_t>(((class_id % n) + n) % n)];
}

TileImage overlay_instances(const TileImage& image, InstanceView instances, const ClassTable& classes) {
  if (!image.rgb.shape().same_plane(instances.shape()))
    throw Error(ErrorCode::kShapeMismatch,
                "image " + image.rgb.shape().str() + " vs instances " + instances.shape().str());
  TileImage out = image;
  const int h = instances.height();
  const int w = instances.width();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::uint32_t l = instances(r, c);
      if (l == 0) continue;
      const bool edge = r == 0 || c == 0 || r == h - 1 || c == w - 1 || instances(r - 1, c) != l ||
                        instances(r + 1, c) != l || instances(r, c - 1) != l || instances(r, c + 1) != l;
      if (!edge) continue;
      const auto it = classes.find(l);
      const auto color = class_color(it == classes.end() ? 0 : it->second);
      for (int k = 0; k < 3; ++k) out.rgb(r, c, k) = color[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

void write_png(const TileImage& image, const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, image.rgb.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::kIoFailure, path.string() + ": " + msg);
  }
}

TileImage read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    throw Error(ErrorCode::kIoFailure, path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  TileImage out(static_cast<int>(png.height), static_cast<int>(png.width));
  if (!png_image_finish_read(&png, nullptr, out.rgb.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::kIoFailure, path.string() + ": " + msg);
  }
  return out;
}

void write_overlay_png(const TileImage& image, InstanceView instances, const ClassTable& classes,
                       const std::filesystem::path& path) {
  write_png(overlay_instances(image, instances, classes), path);
}

}  // namespace hoverpost
