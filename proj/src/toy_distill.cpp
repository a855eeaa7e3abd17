#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <vector>

#include "json.hpp"

#include "hoverpost/commands.hpp"

namespace hoverpost {

namespace {

constexpr int kTileSize = 64;
constexpr int kToyClasses = 4;  // TP channels = kToyClasses + 1
constexpr double kTeacherMargin = 6.0;
constexpr double kMomentum = 0.9;

struct ToyScene {
  InstanceMap instances;
  TargetMaps gt;
  PredictionMaps<double> teacher;
  /// Pixel-major feature matrix, num_features per pixel, standardized.
  std::vector<double> features;
  int num_features = 0;
};

// Separable box blur with clamped borders.
std::vector<double> box_blur(const std::vector<double>& v, int h, int w, int r) {
  std::vector<double> tmp(v.size()), out(v.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += v[static_cast<std::size_t>(y) * w + std::clamp(x + d, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = s / (2 * r + 1);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += tmp[static_cast<std::size_t>(std::clamp(y + d, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = s / (2 * r + 1);
    }
  }
  return out;
}

ToyScene make_scene(std::uint64_t seed) {
  Rng rng(seed);
  ToyScene s;
  EllipseOptions eo;
  eo.min_count = 6;
  eo.max_count = 10;
  eo.min_radius = 4.0;
  eo.max_radius = 8.0;
  s.instances = synth_ellipses(kTileSize, kTileSize, eo, rng);
  const ClassTable classes = synth_classes(s.instances.view(), kToyClasses, rng);
  s.gt = gen_targets(s.instances.view(), classes);

  const int h = kTileSize, w = kTileSize, n = h * w, c = kToyClasses + 1;
  s.teacher = PredictionMaps<double>(h, w, c);
  for (int i = 0; i < n; ++i) {
    const bool fg = s.gt.np_target[i] != 0;
    s.teacher.np_logits[2 * i] = (fg ? -kTeacherMargin : kTeacherMargin) + 0.5 * rng.normal();
    s.teacher.np_logits[2 * i + 1] = (fg ? kTeacherMargin : -kTeacherMargin) + 0.5 * rng.normal();
    for (int k = 0; k < 2; ++k) s.teacher.hv[2 * i + k] = s.gt.hv_target[2 * i + k] + 0.05 * rng.normal();
    for (int k = 0; k < c; ++k)
      s.teacher.tp_logits[i * c + k] = (k == s.gt.tp_target[i] ? kTeacherMargin : -kTeacherMargin) + 0.5 * rng.normal();
  }

  // Stained tile: pale background, darker nuclei tinted by class.
  static constexpr std::array<std::array<double, 3>, kToyClasses + 1> kStain{{
      {0.92, 0.82, 0.88}, {0.35, 0.15, 0.45}, {0.20, 0.20, 0.55}, {0.45, 0.25, 0.30}, {0.30, 0.40, 0.35}}};
  std::array<std::vector<double>, 3> rgb;
  for (auto& ch : rgb) ch.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<double> gray(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& stain = kStain[static_cast<std::size_t>(s.gt.tp_target[i])];
    for (int k = 0; k < 3; ++k) rgb[k][i] = stain[k] + 0.04 * rng.normal();
    gray[i] = (rgb[0][i] + rgb[1][i] + rgb[2][i]) / 3.0;
  }
  const auto blur1 = box_blur(gray, h, w, 1);
  const auto blur3 = box_blur(gray, h, w, 3);
  std::vector<double> gx(static_cast<std::size_t>(n)), gy(gx);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto at = [&](int yy, int xx) {
        return blur3[static_cast<std::size_t>(std::clamp(yy, 0, h - 1)) * w + std::clamp(xx, 0, w - 1)];
      };
      gx[static_cast<std::size_t>(y) * w + x] = at(y, x + 1) - at(y, x - 1);
      gy[static_cast<std::size_t>(y) * w + x] = at(y + 1, x) - at(y - 1, x);
    }
  }

  const std::vector<const std::vector<double>*> cols{&rgb[0], &rgb[1], &rgb[2], &gray, &blur1, &blur3, &gx, &gy};
  s.num_features = static_cast<int>(cols.size());
  s.features.assign(static_cast<std::size_t>(n) * s.num_features, 0.0);
  for (int f = 0; f < s.num_features; ++f) {
    const auto& v = *cols[static_cast<std::size_t>(f)];
    double mean = 0.0, var = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / n);
    for (int i = 0; i < n; ++i)
      s.features[static_cast<std::size_t>(i) * s.num_features + f] = sd > 0 ? (v[i] - mean) / sd : 0.0;
  }
  return s;
}

// Per-pixel affine model: out[o] = bias[o] + sum_f weight[o][f] * feature[f].
struct AffineStudent {
  int outputs = 0;
  int inputs = 0;
  std::vector<double> params;  // outputs x (inputs + 1), bias last

  AffineStudent(int o, int f) : outputs(o), inputs(f), params(static_cast<std::size_t>(o) * (f + 1), 0.0) {}

  void forward(const ToyScene& s, PredictionMaps<double>& out) const {
    const int c = out.tp_logits.channels();
    const std::size_t n = s.instances.size();
    std::vector<double> y(static_cast<std::size_t>(outputs));
    for (std::size_t i = 0; i < n; ++i) {
      const double* f = s.features.data() + i * inputs;
      for (int o = 0; o < outputs; ++o) {
        const double* p = params.data() + static_cast<std::size_t>(o) * (inputs + 1);
        double v = p[inputs];
        for (int k = 0; k < inputs; ++k) v += p[k] * f[k];
        y[o] = v;
      }
      out.np_logits[2 * i] = y[0];
      out.np_logits[2 * i + 1] = y[1];
      out.hv[2 * i] = y[2];
      out.hv[2 * i + 1] = y[3];
      for (int k = 0; k < c; ++k) out.tp_logits[i * c + k] = y[4 + k];
    }
  }

  std::vector<double> backward(const ToyScene& s, const LossGrad<double>& g) const {
    const int c = g.d_tp_logits.channels();
    std::vector<double> grad(params.size(), 0.0);
    std::vector<double> dy(static_cast<std::size_t>(outputs));
    for (std::size_t i = 0; i < s.instances.size(); ++i) {
      dy[0] = g.d_np_logits[2 * i];
      dy[1] = g.d_np_logits[2 * i + 1];
      dy[2] = g.d_hv[2 * i];
      dy[3] = g.d_hv[2 * i + 1];
      for (int k = 0; k < c; ++k) dy[4 + k] = g.d_tp_logits[i * c + k];
      const double* f = s.features.data() + i * inputs;
      for (int o = 0; o < outputs; ++o) {
        double* p = grad.data() + static_cast<std::size_t>(o) * (inputs + 1);
        for (int k = 0; k < inputs; ++k) p[k] += dy[o] * f[k];
        p[inputs] += dy[o];
      }
    }
    return grad;
  }
};

double agreement(const Tensor<double>& a, const Tensor<double>& b, const Mask* within = nullptr) {
  const auto la = argmax_channels<double>(a.view());
  const auto lb = argmax_channels<double>(b.view());
  std::size_t same = 0, total = 0;
  for (std::size_t i = 0; i < la.size(); ++i) {
    if (within && !(*within)[i]) continue;
    ++total;
    same += la[i] == lb[i] ? 1 : 0;
  }
  return total ? static_cast<double>(same) / static_cast<double>(total) : 1.0;
}

}  // namespace

ToyDistillReport run_toy_distill(const ToyDistillArgs& args) {
  const auto start = std::chrono::steady_clock::now();
  const ToyScene scene = make_scene(args.seed);
  LossConfig cfg;
  cfg.alpha = args.alpha;
  cfg.temperature = args.temperature;
  cfg.validate();

  const int c = kToyClasses + 1;
  AffineStudent model(4 + c, scene.num_features);
  PredictionMaps<double> student(kTileSize, kTileSize, c);
  std::vector<double> velocity(model.params.size(), 0.0);
  const TargetView gt(scene.gt);

  ToyDistillReport rep;
  rep.steps = args.steps;
  for (std::uint32_t l : scene.instances.span()) rep.instances = std::max(rep.instances, static_cast<int>(l));
  for (int step = 0; step <= args.steps; ++step) {
    model.forward(scene, student);
    if (step == args.steps) {
      const LossBreakdown b = combined_loss<double>(student.view(), gt, scene.teacher.view(), cfg);
      rep.final_loss = b.combined;
      rep.final_student = b.student_total;
      rep.final_distill = b.distill_total;
      break;
    }
    auto [b, g] = combined_loss_grad<double>(student.view(), gt, scene.teacher.view(), cfg);
    if (step == 0) {
      rep.initial_loss = b.combined;
      rep.initial_student = b.student_total;
      rep.initial_distill = b.distill_total;
    }
    const std::vector<double> grad = model.backward(scene, g);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      velocity[i] = kMomentum * velocity[i] - args.learning_rate * grad[i];
      model.params[i] += velocity[i];
    }
  }

  Mask teacher_fg(kTileSize, kTileSize, 1, 0);
  const auto np_labels = argmax_channels<double>(scene.teacher.np_logits.view());
  for (std::size_t i = 0; i < teacher_fg.size(); ++i) teacher_fg[i] = np_labels[i] == 1;
  rep.np_agreement = agreement(student.np_logits, scene.teacher.np_logits);
  rep.tp_agreement = agreement(student.tp_logits, scene.teacher.tp_logits, &teacher_fg);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

std::string toy_report_json(const ToyDistillReport& r) {
  const nlohmann::json doc = {{"steps", r.steps},
                              {"instances", r.instances},
                              {"initial_loss", r.initial_loss},
                              {"final_loss", r.final_loss},
                              {"initial_student", r.initial_student},
                              {"final_student", r.final_student},
                              {"initial_distill", r.initial_distill},
                              {"final_distill", r.final_distill},
                              {"np_agreement", r.np_agreement},
                              {"tp_agreement", r.tp_agreement},
                              {"passed", r.passed()}};
  return doc.dump();
}

int cmd_toy_distill(const ToyDistillArgs& args, std::ostream& out) {
  const ToyDistillReport r = run_toy_distill(args);
  out << toy_report_json(r) << '\n';
  return r.passed() ? kExitOk : kExitCheckFailed;
}

}  // namespace hoverpost
