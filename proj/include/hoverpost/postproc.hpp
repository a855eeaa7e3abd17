#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "hoverpost/tensor.hpp"
#include "hoverpost/types.hpp"

namespace hoverpost {

struct PostprocConfig {
  float np_threshold = 0.5f;
  float energy_threshold = 0.4f;
  /// Foreground components and final instances below this size are dropped.
  int min_instance_size = 10;
  /// Markers below this size are dropped before flooding.
  int min_marker_size = 10;
  /// Sobel stencil radius, 1..3 (3 x 3 up to 7 x 7).
  int sobel_radius = 1;

  void validate() const;
};

/// 4-connected components of the non-zero pixels, labeled 1..K in raster
/// order of first pixel.
InstanceMap label_components(MaskView mask);

/// Zeroes components smaller than `min_size` and relabels the rest 1..K in
/// raster order.
InstanceMap remove_small(InstanceView labels, int min_size);

/// Energy landscape from the HV maps: horizontal Sobel of channel 0 and
/// vertical Sobel of channel 1. Each signed response is min-max normalized
/// over the mask and flipped into a boundary score (1 at the steepest
/// descent, e.g. where one instance's +1 meets the next one's -1);
/// energy = 1 - max of the two scores, 0 outside the mask. High in
/// nucleus interiors, low on boundaries, 1 on a flat field.
Tensor<float> sobel_energy(TensorView<const float> hv, MaskView mask, int radius = 1);

/// Marker-controlled flood: best-first by descending energy, ties in
/// insertion (FIFO) order, 4-connected, restricted to the mask. A pixel
/// takes the label of the first labeled neighbour that reaches it.
InstanceMap watershed(TensorView<const float> energy, InstanceView markers, MaskView mask);

/// NP foreground probability + HV maps -> instance map labeled 1..K.
InstanceMap instance_segment(TensorView<const float> np_probs, TensorView<const float> hv,
                             const PostprocConfig& cfg = {});

struct Classification {
  ClassTable classes;
  ProbTable probs;
};

/// Per-instance class by majority vote of per-pixel argmax over the
/// non-background channels (ties -> lower class). Instances whose pixels all
/// vote background take the non-background class with the largest summed
/// probability. The probability is the mean of the winning channel.
Classification classify_instances(InstanceView instances, TensorView<const float> tp_probs);

/// Moore-neighbour trace of the outer boundary of `label`, clockwise from
/// the topmost-then-leftmost pixel, 8-connected.
std::vector<std::array<int, 2>> trace_contour(InstanceView instances, std::uint32_t label);

/// Records for labels 1..K; every label must be in `classes` and `probs`.
std::vector<NucleusRecord> extract_records(InstanceView instances, const ClassTable& classes,
                                           const ProbTable& probs);

}  // namespace hoverpost
