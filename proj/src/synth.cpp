#include "hoverpost/synth.hpp"

#include <algorithm>
#include <vector>

namespace hoverpost {

namespace {

struct Ellipse {
  double cy, cx, a, b, theta;

  bool contains(double y, double x) const {
    const double dy = y - cy;
    const double dx = x - cx;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double u = dx * ct + dy * st;
    const double v = -dx * st + dy * ct;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

std::vector<std::size_t> rasterize(const Ellipse& e, int h, int w) {
  const double r = std::max(e.a, e.b);
  const int r0 = std::max(0, static_cast<int>(std::floor(e.cy - r)));
  const int r1 = std::min(h - 1, static_cast<int>(std::ceil(e.cy + r)));
  const int c0 = std::max(0, static_cast<int>(std::floor(e.cx - r)));
  const int c1 = std::min(w - 1, static_cast<int>(std::ceil(e.cx + r)));
  std::vector<std::size_t> px;
  for (int y = r0; y <= r1; ++y) {
    for (int x = c0; x <= c1; ++x) {
      if (e.contains(y, x)) px.push_back(static_cast<std::size_t>(y) * w + x);
    }
  }
  return px;
}

bool clear_of(const InstanceMap& m, const std::vector<std::size_t>& px, int gap) {
  const int h = m.height();
  const int w = m.width();
  for (std::size_t i : px) {
    const int y = static_cast<int>(i / static_cast<std::size_t>(w));
    const int x = static_cast<int>(i % static_cast<std::size_t>(w));
    for (int dy = -gap; dy <= gap; ++dy) {
      for (int dx = -gap; dx <= gap; ++dx) {
        const int yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < h && xx >= 0 && xx < w && m(yy, xx)) return false;
      }
    }
  }
  return true;
}

}  // namespace

InstanceMap synth_ellipses(int height, int width, const EllipseOptions& opts, Rng& rng) {
  InstanceMap m(height, width, 1, 0u);
  const int target = rng.integer(opts.min_count, opts.max_count);
  std::uint32_t placed = 0;
  for (int attempt = 0; attempt < opts.max_attempts && static_cast<int>(placed) < target; ++attempt) {
    Ellipse e;
    e.a = rng.uniform(opts.min_radius, opts.max_radius);
    e.b = rng.uniform(std::max(opts.min_radius, 0.6 * e.a), e.a);
    e.theta = rng.uniform(0.0, M_PI);
    const double margin = e.a + 1.0;
    if (2 * margin >= std::min(height, width)) continue;
    e.cy = rng.uniform(margin, height - 1 - margin);
    e.cx = rng.uniform(margin, width - 1 - margin);
    const auto px = rasterize(e, height, width);
    if (px.empty() || !clear_of(m, px, opts.min_gap)) continue;
    ++placed;
    for (std::size_t i : px) m[i] = placed;
  }
  return m;
}

InstanceMap synth_touching_pair(int height, int width, Rng& rng) {
  InstanceMap m(height, width, 1, 0u);
  const double r = rng.uniform(7.0, 12.0);
  const double overlap = rng.uniform(1.5, 0.5 * r);
  const double angle = rng.uniform(0.0, M_PI);
  const double d = 2.0 * r - overlap;
  const double cy = height / 2.0, cx = width / 2.0;
  const double ay = cy - 0.5 * d * std::sin(angle), ax = cx - 0.5 * d * std::cos(angle);
  const double by = cy + 0.5 * d * std::sin(angle), bx = cx + 0.5 * d * std::cos(angle);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double da = std::hypot(y - ay, x - ax);
      const double db = std::hypot(y - by, x - bx);
      if (da <= r || db <= r) m(y, x) = da <= db ? 1u : 2u;
    }
  }
  return m;
}

InstanceMap synth_dense_field(int height, int width, int spacing, Rng& rng) {
  InstanceMap m(height, width, 1, 0u);
  std::uint32_t next = 0;
  const double rmax = 0.5 * spacing - 1.5;
  for (int gy = 0; gy + spacing <= height; gy += spacing) {
    for (int gx = 0; gx + spacing <= width; gx += spacing) {
      Ellipse e;
      e.a = rng.uniform(0.6 * rmax, rmax);
      e.b = rng.uniform(0.6 * e.a, e.a);
      e.theta = rng.uniform(0.0, M_PI);
      const double slack = 0.5 * spacing - e.a - 1.0;
      e.cy = gy + 0.5 * spacing + rng.uniform(-slack, slack);
      e.cx = gx + 0.5 * spacing + rng.uniform(-slack, slack);
      const auto px = rasterize(e, height, width);
      if (px.empty()) continue;
      ++next;
      for (std::size_t i : px) m[i] = next;
    }
  }
  return m;
}

ClassTable synth_classes(InstanceView instances, int num_classes, Rng& rng) {
  std::uint32_t k = 0;
  for (std::uint32_t l : instances.span()) k = std::max(k, l);
  ClassTable t;
  for (std::uint32_t l = 1; l <= k; ++l) t[l] = rng.integer(1, num_classes);
  return t;
}

Tensor<float> synth_np_probs(InstanceView instances, float margin) {
  // softmax([-m, m]) for foreground, mirrored for background.
  const float fg = 1.0f / (1.0f + std::exp(-2.0f * margin));
  Tensor<float> p(instances.height(), instances.width(), 1, 0.0f);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = instances[i] ? fg : 1.0f - fg;
  return p;
}

Tensor<float> synth_tp_probs(InstanceView instances, const ClassTable& classes, int num_classes, float margin) {
  const int c = num_classes + 1;
  Tensor<float> p(instances.height(), instances.width(), c, 0.0f);
  const double hi = std::exp(static_cast<double>(margin));
  const double lo = std::exp(-static_cast<double>(margin));
  const double z = hi + (c - 1) * lo;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const std::uint32_t l = instances[i];
    const int cls = l ? classes.at(l) : 0;
    for (int k = 0; k < c; ++k) p[i * c + k] = static_cast<float>((k == cls ? hi : lo) / z);
  }
  return p;
}

}  // namespace hoverpost
