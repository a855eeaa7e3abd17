#include "hoverpost/postproc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <queue>

#include "hoverpost/error.hpp"

namespace hoverpost {

namespace {

void require_plane(const Shape& a, const Shape& b, const char* what) {
  if (!a.same_plane(b)) throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": " + a.str() + " vs " + b.str());
}

// Binomial smoothing and derivative taps of a (2r+1)-wide Sobel operator.
std::pair<std::vector<double>, std::vector<double>> sobel_taps(int radius) {
  const int k = 2 * radius + 1;
  std::vector<double> smooth{1.0};
  for (int i = 1; i < k; ++i) {
    std::vector<double> next(smooth.size() + 1, 0.0);
    for (std::size_t j = 0; j < smooth.size(); ++j) {
      next[j] += smooth[j];
      next[j + 1] += smooth[j];
    }
    smooth = std::move(next);
  }
  std::vector<double> base{1.0};
  for (int i = 1; i < k - 2; ++i) {
    std::vector<double> next(base.size() + 1, 0.0);
    for (std::size_t j = 0; j < base.size(); ++j) {
      next[j] += base[j];
      next[j + 1] += base[j];
    }
    base = std::move(next);
  }
  std::vector<double> deriv(static_cast<std::size_t>(k), 0.0);
  for (std::size_t j = 0; j < base.size(); ++j) {
    deriv[j] -= base[j];
    deriv[j + 2] += base[j];
  }
  return {smooth, deriv};
}

// Separable correlation of one channel with clamped borders: `along_x` taps
// run along columns, `along_y` taps along rows.
std::vector<double> correlate(TensorView<const float> src, int channel, const std::vector<double>& along_x,
                              const std::vector<double>& along_y) {
  const int h = src.height();
  const int w = src.width();
  const int r = static_cast<int>(along_x.size()) / 2;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w), out(tmp.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -r; t <= r; ++t) {
        const int xx = std::clamp(x + t, 0, w - 1);
        acc += along_x[static_cast<std::size_t>(t + r)] * src(y, xx, channel);
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -r; t <= r; ++t) {
        const int yy = std::clamp(y + t, 0, h - 1);
        acc += along_y[static_cast<std::size_t>(t + r)] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

// Min-max normalizes |v| over the mask in place; a flat response maps to 0.
// Signed response -> boundary score in [0, 1]: 1 at the most negative
// response over the mask, 0 at the most positive. Flat responses score 0.
void boundary_score(std::vector<double>& v, MaskView mask) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!mask[i]) continue;
    lo = std::min(lo, v[i]);
    hi = std::max(hi, v[i]);
  }
  const double range = hi - lo;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (mask[i] && range > 0.0) ? (hi - v[i]) / range : 0.0;
}

struct FloodItem {
  float energy;
  std::uint32_t seq;
  std::uint32_t index;
};

struct FloodOrder {
  // Max-heap on energy; among equal energies the earliest insertion first.
  bool operator()(const FloodItem& a, const FloodItem& b) const {
    if (a.energy != b.energy) return a.energy < b.energy;
    return a.seq > b.seq;
  }
};

constexpr std::array<std::array<int, 2>, 8> kMoore{{
    {0, -1}, {-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1},
}};

int moore_index(int dr, int dc) {
  for (int i = 0; i < 8; ++i) {
    if (kMoore[static_cast<std::size_t>(i)][0] == dr && kMoore[static_cast<std::size_t>(i)][1] == dc) return i;
  }
  return 0;
}

std::vector<std::array<int, 2>> trace_from(InstanceView inst, std::uint32_t label, int r0, int c0,
                                           std::size_t pixel_count) {
  const int h = inst.height();
  const int w = inst.width();
  auto inside = [&](int r, int c) { return r >= 0 && r < h && c >= 0 && c < w && inst(r, c) == label; };
  struct Step {
    int r, c, back;
    bool ok;
  };
  // Scan clockwise from the backtrack direction; the new backtrack is the
  // last background neighbour examined, expressed relative to the new pixel.
  auto advance = [&](int r, int c, int back) -> Step {
    for (int i = 1; i <= 8; ++i) {
      const int d = (back + i) % 8;
      const int nr = r + kMoore[static_cast<std::size_t>(d)][0];
      const int nc = c + kMoore[static_cast<std::size_t>(d)][1];
      if (!inside(nr, nc)) continue;
      const int pd = (d + 7) % 8;
      const int pr = r + kMoore[static_cast<std::size_t>(pd)][0];
      const int pc = c + kMoore[static_cast<std::size_t>(pd)][1];
      return {nr, nc, moore_index(pr - nr, pc - nc), true};
    }
    return {r, c, back, false};
  };

  std::vector<std::array<int, 2>> contour{{r0, c0}};
  const Step first = advance(r0, c0, 0);
  if (!first.ok) return contour;
  Step cur = first;
  const std::size_t limit = 4 * pixel_count + 16;
  while (contour.size() < limit) {
    if (cur.r == r0 && cur.c == c0) {
      const Step peek = advance(cur.r, cur.c, cur.back);
      if (peek.r == first.r && peek.c == first.c) break;
    }
    contour.push_back({cur.r, cur.c});
    cur = advance(cur.r, cur.c, cur.back);
  }
  return contour;
}

}  // namespace

void PostprocConfig::validate() const {
  if (!(np_threshold > 0.0f && np_threshold < 1.0f))
    throw Error(ErrorCode::kInvalidArgument, "np threshold must lie in (0, 1)");
  if (!(energy_threshold > 0.0f && energy_threshold < 1.0f))
    throw Error(ErrorCode::kInvalidArgument, "energy threshold must lie in (0, 1)");
  if (min_instance_size < 0 || min_marker_size < 0)
    throw Error(ErrorCode::kInvalidArgument, "minimum sizes must be >= 0");
  if (sobel_radius < 1 || sobel_radius > 3) throw Error(ErrorCode::kInvalidArgument, "sobel radius must be 1..3");
}

InstanceMap label_components(MaskView mask) {
  const int h = mask.height();
  const int w = mask.width();
  InstanceMap out(h, w, 1, 0u);
  std::vector<std::uint32_t> stack;
  std::uint32_t next = 0;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || out[start]) continue;
    ++next;
    out[start] = next;
    stack.assign(1, static_cast<std::uint32_t>(start));
    while (!stack.empty()) {
      const std::uint32_t i = stack.back();
      stack.pop_back();
      const int r = static_cast<int>(i / static_cast<std::uint32_t>(w));
      const int c = static_cast<int>(i % static_cast<std::uint32_t>(w));
      auto visit = [&](int rr, int cc) {
        const std::size_t j = static_cast<std::size_t>(rr) * w + cc;
        if (mask[j] && !out[j]) {
          out[j] = next;
          stack.push_back(static_cast<std::uint32_t>(j));
        }
      };
      if (r > 0) visit(r - 1, c);
      if (r + 1 < h) visit(r + 1, c);
      if (c > 0) visit(r, c - 1);
      if (c + 1 < w) visit(r, c + 1);
    }
  }
  return out;
}

InstanceMap remove_small(InstanceView labels, int min_size) {
  std::uint32_t k = 0;
  for (std::uint32_t l : labels.span()) k = std::max(k, l);
  std::vector<std::size_t> size(static_cast<std::size_t>(k) + 1, 0);
  for (std::uint32_t l : labels.span()) ++size[l];
  std::vector<std::uint32_t> remap(size.size(), 0);
  InstanceMap out(labels.shape(), 0u);
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::uint32_t l = labels[i];
    if (l == 0 || size[l] < static_cast<std::size_t>(min_size)) continue;
    if (!remap[l]) remap[l] = ++next;
    out[i] = remap[l];
  }
  return out;
}

Tensor<float> sobel_energy(TensorView<const float> hv, MaskView mask, int radius) {
  if (hv.channels() != 2) throw Error(ErrorCode::kShapeMismatch, "hv must have 2 channels, got " + hv.shape().str());
  require_plane(hv.shape(), mask.shape(), "sobel_energy");
  if (radius < 1 || radius > 3) throw Error(ErrorCode::kInvalidArgument, "sobel radius must be 1..3");
  Tensor<float> energy(hv.height(), hv.width(), 1, 0.0f);
  if (hv.empty()) return energy;
  const auto [smooth, deriv] = sobel_taps(radius);
  std::vector<double> gx = correlate(hv, 0, deriv, smooth);
  std::vector<double> gy = correlate(hv, 1, smooth, deriv);
  boundary_score(gx, mask);
  boundary_score(gy, mask);
  for (std::size_t i = 0; i < energy.size(); ++i) {
    if (mask[i]) energy[i] = static_cast<float>(1.0 - std::max(gx[i], gy[i]));
  }
  return energy;
}

InstanceMap watershed(TensorView<const float> energy, InstanceView markers, MaskView mask) {
  require_plane(energy.shape(), markers.shape(), "watershed markers");
  require_plane(energy.shape(), mask.shape(), "watershed mask");
  const int h = energy.height();
  const int w = energy.width();
  InstanceMap out(markers.shape(), 0u);
  for (std::size_t i = 0; i < markers.size(); ++i) {
    if (!markers[i]) continue;
    if (!mask[i]) {
      throw Error(ErrorCode::kMarkerOutsideMask,
                  "marker at (" + std::to_string(i / w) + ", " + std::to_string(i % w) + ")");
    }
    out[i] = markers[i];
  }

  std::vector<FloodItem> storage;
  storage.reserve(static_cast<std::size_t>(h) * w / 4);
  std::priority_queue<FloodItem, std::vector<FloodItem>, FloodOrder> heap(FloodOrder{}, std::move(storage));
  std::uint32_t seq = 0;
  auto expand = [&](std::size_t i) {
    const std::uint32_t label = out[i];
    const int r = static_cast<int>(i / static_cast<std::size_t>(w));
    const int c = static_cast<int>(i % static_cast<std::size_t>(w));
    auto claim = [&](std::size_t j) {
      if (mask[j] && !out[j]) {
        out[j] = label;
        heap.push({energy[j], seq++, static_cast<std::uint32_t>(j)});
      }
    };
    if (r > 0) claim(i - static_cast<std::size_t>(w));
    if (c > 0) claim(i - 1);
    if (c + 1 < w) claim(i + 1);
    if (r + 1 < h) claim(i + static_cast<std::size_t>(w));
  };
  for (std::size_t i = 0; i < markers.size(); ++i) {
    if (markers[i]) expand(i);
  }
  while (!heap.empty()) {
    const FloodItem top = heap.top();
    heap.pop();
    expand(top.index);
  }
  return out;
}

InstanceMap instance_segment(TensorView<const float> np_probs, TensorView<const float> hv, const PostprocConfig& cfg) {
  cfg.validate();
  if (np_probs.channels() != 1)
    throw Error(ErrorCode::kShapeMismatch, "np probabilities must be single-channel, got " + np_probs.shape().str());
  if (hv.channels() != 2) throw Error(ErrorCode::kShapeMismatch, "hv must have 2 channels, got " + hv.shape().str());
  require_plane(np_probs.shape(), hv.shape(), "instance_segment");

  Mask fg(np_probs.shape(), 0);
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = np_probs[i] > cfg.np_threshold ? 1 : 0;
  const InstanceMap blobs = remove_small(label_components(fg.view()).view(), cfg.min_instance_size);
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = blobs[i] ? 1 : 0;

  const Tensor<float> energy = sobel_energy(hv, fg.view(), cfg.sobel_radius);
  Mask seeds(fg.shape(), 0);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = fg[i] && energy[i] > cfg.energy_threshold ? 1 : 0;
  const InstanceMap markers = remove_small(label_components(seeds.view()).view(), cfg.min_marker_size);

  const InstanceMap flooded = watershed(energy.view(), markers.view(), fg.view());
  return remove_small(flooded.view(), cfg.min_instance_size);
}

Classification classify_instances(InstanceView instances, TensorView<const float> tp_probs) {
  require_plane(instances.shape(), tp_probs.shape(), "classify_instances");
  const int c = tp_probs.channels();
  if (c < 2) throw Error(ErrorCode::kShapeMismatch, "tp probabilities need at least 2 channels");
  std::uint32_t k = 0;
  for (std::uint32_t l : instances.span()) k = std::max(k, l);
  const std::size_t stride = static_cast<std::size_t>(c);
  std::vector<std::uint32_t> votes((static_cast<std::size_t>(k) + 1) * stride, 0);
  std::vector<double> sums(votes.size(), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(k) + 1, 0);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const std::uint32_t l = instances[i];
    if (!l) continue;
    const float* p = tp_probs.pixel(i);
    int best = 0;
    for (int j = 1; j < c; ++j) {
      if (p[j] > p[best]) best = j;
    }
    const std::size_t base = l * stride;
    ++votes[base + static_cast<std::size_t>(best)];
    for (int j = 0; j < c; ++j) sums[base + static_cast<std::size_t>(j)] += p[j];
    ++count[l];
  }
  Classification out;
  for (std::uint32_t l = 1; l <= k; ++l) {
    if (!count[l]) continue;
    const std::size_t base = l * stride;
    int cls = 0;
    for (int j = 1; j < c; ++j) {
      if (votes[base + static_cast<std::size_t>(j)] > (cls ? votes[base + static_cast<std::size_t>(cls)] : 0u))
        cls = j;
    }
    if (cls == 0) {
      cls = 1;
      for (int j = 2; j < c; ++j) {
        if (sums[base + static_cast<std::size_t>(j)] > sums[base + static_cast<std::size_t>(cls)]) cls = j;
      }
    }
    out.classes[l] = cls;
    out.probs[l] = static_cast<float>(
        std::clamp(sums[base + static_cast<std::size_t>(cls)] / static_cast<double>(count[l]), 0.0, 1.0));
  }
  return out;
}

std::vector<std::array<int, 2>> trace_contour(InstanceView instances, std::uint32_t label) {
  std::size_t n = 0;
  int r0 = -1, c0 = -1;
  for (int r = 0; r < instances.height(); ++r) {
    for (int c = 0; c < instances.width(); ++c) {
      if (instances(r, c) != label) continue;
      if (r0 < 0) {
        r0 = r;
        c0 = c;
      }
      ++n;
    }
  }
  if (r0 < 0) return {};
  return trace_from(instances, label, r0, c0, n);
}

std::vector<NucleusRecord> extract_records(InstanceView instances, const ClassTable& classes, const ProbTable& probs) {
  std::uint32_t k = 0;
  for (std::uint32_t l : instances.span()) k = std::max(k, l);
  struct Acc {
    std::size_t n = 0;
    double rs = 0, cs = 0;
    int rmin = std::numeric_limits<int>::max(), cmin = std::numeric_limits<int>::max(), rmax = -1, cmax = -1;
    int r0 = -1, c0 = -1;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(k) + 1);
  for (int r = 0; r < instances.height(); ++r) {
    for (int c = 0; c < instances.width(); ++c) {
      const std::uint32_t l = instances(r, c);
      if (!l) continue;
      Acc& a = acc[l];
      if (a.n == 0) {
        a.r0 = r;
        a.c0 = c;
      }
      ++a.n;
      a.rs += r;
      a.cs += c;
      a.rmin = std::min(a.rmin, r);
      a.rmax = std::max(a.rmax, r);
      a.cmin = std::min(a.cmin, c);
      a.cmax = std::max(a.cmax, c);
    }
  }
  std::vector<NucleusRecord> out;
  for (std::uint32_t l = 1; l <= k; ++l) {
    const Acc& a = acc[l];
    if (!a.n) continue;
    const auto cls = classes.find(l);
    const auto prob = probs.find(l);
    if (cls == classes.end() || prob == probs.end())
      throw Error(ErrorCode::kMissingClass, "no class for label " + std::to_string(l));
    NucleusRecord rec;
    rec.id = l;
    rec.class_id = cls->second;
    rec.class_prob = prob->second;
    rec.centroid = {static_cast<float>(a.rs / static_cast<double>(a.n)),
                    static_cast<float>(a.cs / static_cast<double>(a.n))};
    rec.bbox = {a.rmin, a.cmin, a.rmax, a.cmax};
    rec.contour = trace_from(instances, l, a.r0, a.c0, a.n);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace hoverpost
