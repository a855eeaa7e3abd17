#include "hoverpost/targets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hoverpost/error.hpp"

namespace hoverpost {

namespace {

struct Extent {
  int rmin = std::numeric_limits<int>::max();
  int cmin = std::numeric_limits<int>::max();
  int rmax = -1;
  int cmax = -1;
  std::size_t count = 0;
  // Coordinate sums relative to the bbox origin keep the maps exactly
  // translation-equivariant.
  double row_sum = 0.0;
  double col_sum = 0.0;
};

std::uint32_t max_label(InstanceView instances) {
  std::uint32_t m = 0;
  for (std::uint32_t l : instances.span()) m = std::max(m, l);
  return m;
}

void require_single_channel(InstanceView instances) {
  if (instances.channels() != 1)
    throw Error(ErrorCode::kShapeMismatch, "instance map must have one channel, got " + instances.shape().str());
}

}  // namespace

void check_instance_map(InstanceView instances) {
  require_single_channel(instances);
  const std::uint32_t k = max_label(instances);
  std::vector<char> seen(static_cast<std::size_t>(k) + 1, 0);
  for (std::uint32_t l : instances.span()) seen[l] = 1;
  for (std::uint32_t l = 1; l <= k; ++l) {
    if (!seen[l])
      throw Error(ErrorCode::kInvalidArgument, "instance labels are not contiguous: " + std::to_string(l) +
                                                   " missing below max label " + std::to_string(k));
  }
}

InstanceMap renumber_labels(InstanceView instances) {
  require_single_channel(instances);
  InstanceMap out(instances.shape(), 0u);
  // Sparse labels are common (e.g. 1e6-valued ids), so use a sorted lookup.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> seen;
  std::uint32_t next = 1;
  std::uint32_t last_src = 0, last_dst = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const std::uint32_t l = instances[i];
    if (l == 0) continue;
    if (l == last_src) {
      out[i] = last_dst;
      continue;
    }
    auto it = std::lower_bound(seen.begin(), seen.end(), std::make_pair(l, 0u));
    std::uint32_t dst;
    if (it != seen.end() && it->first == l) {
      dst = it->second;
    } else {
      dst = next++;
      seen.insert(it, {l, dst});
    }
    out[i] = dst;
    last_src = l;
    last_dst = dst;
  }
  return out;
}

Tensor<float> gen_hv_targets(InstanceView instances) {
  require_single_channel(instances);
  const int h = instances.height();
  const int w = instances.width();
  const std::uint32_t k = max_label(instances);
  std::vector<Extent> ext(static_cast<std::size_t>(k) + 1);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::uint32_t l = instances(r, c);
      if (l == 0) continue;
      Extent& e = ext[l];
      e.rmin = std::min(e.rmin, r);
      e.rmax = std::max(e.rmax, r);
      e.cmin = std::min(e.cmin, c);
      e.cmax = std::max(e.cmax, c);
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::uint32_t l = instances(r, c);
      if (l == 0) continue;
      Extent& e = ext[l];
      ++e.count;
      e.row_sum += r - e.rmin;
      e.col_sum += c - e.cmin;
    }
  }
  struct Scale {
    double cr = 0, cc = 0;                 // centroid, bbox-relative
    double neg_r = 0, pos_r = 0, neg_c = 0, pos_c = 0;  // extreme offsets
  };
  std::vector<Scale> sc(ext.size());
  for (std::size_t l = 1; l < ext.size(); ++l) {
    const Extent& e = ext[l];
    if (e.count == 0) continue;
    Scale& s = sc[l];
    s.cr = e.row_sum / static_cast<double>(e.count);
    s.cc = e.col_sum / static_cast<double>(e.count);
    s.neg_r = s.cr;  // offsets range over [0 - c, extent - c]
    s.pos_r = (e.rmax - e.rmin) - s.cr;
    s.neg_c = s.cc;
    s.pos_c = (e.cmax - e.cmin) - s.cc;
  }
  // The extreme offsets come from bbox edges, which always hold at least one
  // instance pixel, so the scaled values reach exactly -1 and 1.
  auto scale = [](double off, double neg, double pos) -> float {
    if (off < 0.0) return neg > 0.0 ? static_cast<float>(off / neg) : 0.0f;
    if (off > 0.0) return pos > 0.0 ? static_cast<float>(off / pos) : 0.0f;
    return 0.0f;
  };
  Tensor<float> hv(h, w, 2, 0.0f);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::uint32_t l = instances(r, c);
      if (l == 0) continue;
      const Extent& e = ext[l];
      const Scale& s = sc[l];
      hv(r, c, 0) = scale((c - e.cmin) - s.cc, s.neg_c, s.pos_c);
      hv(r, c, 1) = scale((r - e.rmin) - s.cr, s.neg_r, s.pos_r);
    }
  }
  return hv;
}

Mask gen_np_target(InstanceView instances) {
  require_single_channel(instances);
  Mask out(instances.shape(), 0);
  for (std::size_t i = 0; i < instances.size(); ++i) out[i] = instances[i] > 0 ? 1 : 0;
  return out;
}

Tensor<std::int32_t> gen_tp_target(InstanceView instances, const ClassTable& classes) {
  require_single_channel(instances);
  const std::uint32_t k = max_label(instances);
  std::vector<std::int32_t> lut(static_cast<std::size_t>(k) + 1, -1);
  lut[0] = 0;
  for (const auto& [label, cls] : classes) {
    if (label <= k && label > 0) lut[label] = cls;
  }
  Tensor<std::int32_t> out(instances.shape(), 0);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const std::int32_t v = lut[instances[i]];
    if (v < 0) throw Error(ErrorCode::kMissingClass, "no class for label " + std::to_string(instances[i]));
    out[i] = v;
  }
  return out;
}

TargetMaps gen_targets(InstanceView instances, const ClassTable& classes) {
  return {gen_np_target(instances), gen_hv_targets(instances), gen_tp_target(instances, classes)};
}

std::vector<float> compute_class_weights(std::span<const std::size_t> counts, int num_classes) {
  if (num_classes < 1 || counts.size() != static_cast<std::size_t>(num_classes))
    throw Error(ErrorCode::kInvalidArgument, "counts length must equal class count >= 1");
  double total = 0.0;
  for (std::size_t n : counts) total += static_cast<double>(n);
  if (total == 0.0) throw Error(ErrorCode::kAllZeroCounts, "all class counts are zero");
  std::vector<double> omega(counts.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    omega[k] = std::sqrt(total / static_cast<double>(std::max<std::size_t>(counts[k], 1)));
    sum += omega[k];
  }
  std::vector<float> w(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) w[k] = static_cast<float>(omega[k] / sum * num_classes);
  return w;
}

}  // namespace hoverpost
