#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "hoverpost/tensor.hpp"
#include "hoverpost/types.hpp"

namespace hoverpost {

/// Seeded generator. Only the engine comes from <random>; the conversions are
/// written out so sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  int integer(int lo, int hi) {
    return lo + static_cast<int>(uniform() * static_cast<double>(hi - lo + 1));
  }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 engine_;
};

struct EllipseOptions {
  int min_count = 5;
  int max_count = 25;
  double min_radius = 5.0;
  double max_radius = 12.0;
  /// Minimum pixel gap between distinct instances (Chebyshev distance).
  int min_gap = 2;
  int max_attempts = 2000;
};

/// Random non-overlapping ellipses labeled 1..K in placement order. May
/// return fewer than min_count if placement keeps failing.
InstanceMap synth_ellipses(int height, int width, const EllipseOptions& opts, Rng& rng);

/// Two overlapping discs split along their bisector, so the instances share
/// a straight boundary. Labels 1 and 2.
InstanceMap synth_touching_pair(int height, int width, Rng& rng);

/// Dense field of small ellipses on a jittered grid with `spacing` pixel
/// pitch; about (H / spacing) * (W / spacing) instances.
InstanceMap synth_dense_field(int height, int width, int spacing, Rng& rng);

/// Random class in 1..num_classes for every instance.
ClassTable synth_classes(InstanceView instances, int num_classes, Rng& rng);

/// Foreground probability from a soft one-hot NP logit pair (+/- margin).
Tensor<float> synth_np_probs(InstanceView instances, float margin = 2.0f);

/// TP probabilities: softmax of a soft one-hot over classes 0..num_classes.
Tensor<float> synth_tp_probs(InstanceView instances, const ClassTable& classes, int num_classes,
                             float margin = 2.0f);

}  // namespace hoverpost
