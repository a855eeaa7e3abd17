#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hoverpost/tensor.hpp"
#include "hoverpost/types.hpp"

namespace hoverpost {

/// Ground-truth maps for one tile.
struct TargetMaps {
  /// 1 on nuclei, 0 on background.
  Mask np_target;
  /// H x W x 2: channel 0 horizontal, channel 1 vertical, in [-1, 1].
  Tensor<float> hv_target;
  /// Class index per pixel, 0 = background.
  Tensor<std::int32_t> tp_target;
};

/// Non-owning counterpart of TargetMaps consumed by the losses.
struct TargetView {
  MaskView np_target;
  TensorView<const float> hv_target;
  TensorView<const std::int32_t> tp_target;

  TargetView() = default;
  TargetView(const TargetMaps& t) : np_target(t.np_target), hv_target(t.hv_target), tp_target(t.tp_target) {}
  TargetView(MaskView np, TensorView<const float> hv, TensorView<const std::int32_t> tp)
      : np_target(np), hv_target(hv), tp_target(tp) {}
};

/// Throws unless labels are exactly {1..K}, each non-empty.
void check_instance_map(InstanceView instances);

/// Relabels positive labels to 1..K in raster order of first appearance.
InstanceMap renumber_labels(InstanceView instances);

/// Horizontal / vertical distance-to-centroid maps. Per instance and axis,
/// negative offsets are scaled by 1/|min| and positive ones by 1/max, so
/// each axis spans exactly [-1, 1]; single-pixel extents map to 0.
Tensor<float> gen_hv_targets(InstanceView instances);

Mask gen_np_target(InstanceView instances);

/// Class id of each instance painted over its pixels; background 0.
Tensor<std::int32_t> gen_tp_target(InstanceView instances, const ClassTable& classes);

TargetMaps gen_targets(InstanceView instances, const ClassTable& classes);

/// Inverse-frequency class weights for the weighted cross-entropy:
/// w_k proportional to sqrt(N / max(n_k, 1)), scaled so that sum(w) == C.
std::vector<float> compute_class_weights(std::span<const std::size_t> counts, int num_classes);

}  // namespace hoverpost
