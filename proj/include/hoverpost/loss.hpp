#pragma once

// Student / distillation losses over the three output heads (NP, HV, TP) and
// their analytic gradients with respect to the student outputs.
//
// Every kernel accumulates in double. Kernels that take a `grad` view add
// `scale * d(term)/dx` into it, so a caller can sum weighted terms into a
// single gradient buffer without temporaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include "hoverpost/error.hpp"
#include "hoverpost/targets.hpp"
#include "hoverpost/tensor.hpp"

namespace hoverpost {

inline constexpr double kLogClamp = 1e-12;

template <class Real>
struct PredictionView {
  TensorView<const Real> np_logits;  // H x W x 2
  TensorView<const Real> hv;         // H x W x 2
  TensorView<const Real> tp_logits;  // H x W x C
};

template <class Real>
struct PredictionMaps {
  Tensor<Real> np_logits;
  Tensor<Real> hv;
  Tensor<Real> tp_logits;

  PredictionMaps() = default;
  PredictionMaps(int height, int width, int num_classes)
      : np_logits(height, width, 2), hv(height, width, 2), tp_logits(height, width, num_classes) {}

  PredictionView<Real> view() const { return {np_logits, hv, tp_logits}; }
  operator PredictionView<Real>() const { return view(); }
};

template <class Real>
struct LossGrad {
  Tensor<Real> d_np_logits;
  Tensor<Real> d_hv;
  Tensor<Real> d_tp_logits;
};

/// Multipliers for the six terms of one branch sum.
struct TermScales {
  double hv_mse = 1.0;
  double hv_msge = 1.0;
  double np_ce = 1.0;
  double np_aux = 1.0;  // dice (student) or KLD (distill)
  double tp_ce = 1.0;
  double tp_aux = 1.0;
};

struct LossConfig {
  double alpha = 0.5;
  double temperature = 1.0;
  std::vector<float> np_weights{1.0f, 1.0f};
  /// Empty means uniform weights over the TP classes.
  std::vector<float> tp_weights;
  TermScales student_scales;
  TermScales distill_scales;
  double dice_epsilon = 1e-3;
  /// Distillation CE against the teacher's softmax instead of its argmax.
  bool soft_distill_ce = false;

  void validate() const;
};

/// Unscaled term values of one branch sum plus the scaled total.
struct BranchTerms {
  double hv_mse = 0.0;
  double hv_msge = 0.0;
  double np_ce = 0.0;
  double np_dice_or_kld = 0.0;
  double tp_ce = 0.0;
  double tp_dice_or_kld = 0.0;
  double total = 0.0;
};

struct LossBreakdown {
  BranchTerms student;
  BranchTerms distill;
  double student_total = 0.0;
  double distill_total = 0.0;
  double combined = 0.0;
};

std::vector<double> softmax_with_temperature(std::span<const double> logits, double temperature);

namespace detail {

inline void check_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": " + a.str() + " vs " + b.str());
}

// Writes softmax(v / T) into `out` (length C); returns log-sum-exp of v / T.
template <class Real>
double softmax_row(const Real* v, int c, double temperature, double* out) {
  double m = static_cast<double>(v[0]) / temperature;
  for (int k = 1; k < c; ++k) m = std::max(m, static_cast<double>(v[k]) / temperature);
  double z = 0.0;
  for (int k = 0; k < c; ++k) {
    out[k] = std::exp(static_cast<double>(v[k]) / temperature - m);
    z += out[k];
  }
  for (int k = 0; k < c; ++k) out[k] /= z;
  return m + std::log(z);
}

template <class Label>
void check_label(Label label, int c) {
  bool negative = false;
  if constexpr (std::is_signed_v<Label>) negative = label < 0;
  if (negative || static_cast<long long>(label) >= c)
    throw Error(ErrorCode::kLabelOutOfRange,
                "label " + std::to_string(static_cast<long long>(label)) + " with " + std::to_string(c) + " classes");
}

inline std::span<const float> weights_or_uniform(std::span<const float> weights, int c,
                                                 std::vector<float>& storage) {
  if (!weights.empty()) {
    if (weights.size() != static_cast<std::size_t>(c))
      throw Error(ErrorCode::kShapeMismatch,
                  "expected " + std::to_string(c) + " class weights, got " + std::to_string(weights.size()));
    return weights;
  }
  storage.assign(static_cast<std::size_t>(c), 1.0f);
  return storage;
}

}  // namespace detail

/// Per-pixel argmax over channels; ties go to the lower channel.
template <class Real>
Tensor<std::int32_t> argmax_channels(TensorView<const Real> logits) {
  Tensor<std::int32_t> out(logits.height(), logits.width(), 1, 0);
  const int c = logits.channels();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real* v = logits.pixel(i);
    int best = 0;
    for (int k = 1; k < c; ++k) {
      if (v[k] > v[best]) best = k;
    }
    out[i] = best;
  }
  return out;
}

/// One-hot encoding of class labels into H x W x C.
template <class Real, class Label>
Tensor<Real> one_hot(TensorView<const Label> labels, int num_classes) {
  Tensor<Real> out(labels.height(), labels.width(), num_classes, Real{0});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    detail::check_label(labels[i], num_classes);
    out[i * num_classes + static_cast<std::size_t>(labels[i])] = Real{1};
  }
  return out;
}

template <class Real>
Tensor<Real> softmax_channels(TensorView<const Real> logits, double temperature = 1.0) {
  Tensor<Real> out(logits.shape());
  std::vector<double> p(static_cast<std::size_t>(logits.channels()));
  for (std::size_t i = 0; i < logits.shape().pixels(); ++i) {
    detail::softmax_row(logits.pixel(i), logits.channels(), temperature, p.data());
    for (int k = 0; k < logits.channels(); ++k) out[i * logits.channels() + k] = static_cast<Real>(p[k]);
  }
  return out;
}

/// Mean of (x - y)^2 over every entry.
template <class Real, class Ref>
double mse_hv(TensorView<const Real> x, TensorView<const Ref> y, TensorView<Real> grad = {}, double scale = 1.0) {
  detail::check_same(x.shape(), y.shape(), "mse_hv");
  if (x.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    sum += d * d;
    if (grad.data()) grad[i] += static_cast<Real>(scale * 2.0 * d * inv_n);
  }
  return sum * inv_n;
}

/// Mean squared error between the horizontal derivative of channel 0 and the
/// vertical derivative of channel 1 of x and y, over masked pixels. The
/// derivative is a central difference in the interior and one-sided at the
/// tile border; an axis of extent 1 contributes no terms. Empty mask -> 0.
template <class Real, class Ref>
double msge_hv(TensorView<const Real> x, TensorView<const Ref> y, MaskView mask, TensorView<Real> grad = {},
               double scale = 1.0) {
  detail::check_same(x.shape(), y.shape(), "msge_hv");
  if (x.channels() != 2) throw Error(ErrorCode::kShapeMismatch, "msge_hv expects 2 channels, got " + x.shape().str());
  if (!mask.shape().same_plane(x.shape()) || mask.channels() != 1)
    throw Error(ErrorCode::kShapeMismatch, "msge_hv mask " + mask.shape().str() + " vs " + x.shape().str());
  const int h = x.height();
  const int w = x.width();
  std::size_t masked = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) masked += mask[i] ? 1 : 0;
  const std::size_t terms = (w >= 2 ? masked : 0) + (h >= 2 ? masked : 0);
  if (terms == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(terms);

  auto diff = [&](int r, int c, int k) {
    return static_cast<double>(x(r, c, k)) - static_cast<double>(y(r, c, k));
  };
  // Stencil along one axis: (lo, hi, weight) with derivative = weight * (v[hi] - v[lo]).
  auto stencil = [](int i, int n) {
    if (i == 0) return std::make_tuple(0, 1, 1.0);
    if (i == n - 1) return std::make_tuple(n - 2, n - 1, 1.0);
    return std::make_tuple(i - 1, i + 1, 0.5);
  };

  double sum = 0.0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c)) continue;
      if (w >= 2) {
        const auto [lo, hi, wt] = stencil(c, w);
        const double d = wt * (diff(r, hi, 0) - diff(r, lo, 0));
        sum += d * d;
        if (grad.data()) {
          const double g = scale * 2.0 * d * inv_n * wt;
          grad(r, hi, 0) += static_cast<Real>(g);
          grad(r, lo, 0) -= static_cast<Real>(g);
        }
      }
      if (h >= 2) {
        const auto [lo, hi, wt] = stencil(r, h);
        const double d = wt * (diff(hi, c, 1) - diff(lo, c, 1));
        sum += d * d;
        if (grad.data()) {
          const double g = scale * 2.0 * d * inv_n * wt;
          grad(hi, c, 1) += static_cast<Real>(g);
          grad(lo, c, 1) -= static_cast<Real>(g);
        }
      }
    }
  }
  return sum * inv_n;
}

/// Pixel mean of -w[k] * log softmax(x)[k] with k the hard label; the
/// probability is clamped below at 1e-12.
template <class Real, class Label>
double weighted_ce(TensorView<const Real> x, TensorView<const Label> labels, std::span<const float> weights,
                   TensorView<Real> grad = {}, double scale = 1.0) {
  if (!labels.shape().same_plane(x.shape()) || labels.channels() != 1)
    throw Error(ErrorCode::kShapeMismatch, "weighted_ce labels " + labels.shape().str() + " vs " + x.shape().str());
  const int c = x.channels();
  std::vector<float> uniform;
  weights = detail::weights_or_uniform(weights, c, uniform);
  const std::size_t n = x.shape().pixels();
  if (n == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double log_floor = std::log(kLogClamp);
  std::vector<double> p(static_cast<std::size_t>(c));
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Label lab = labels[i];
    detail::check_label(lab, c);
    const auto k = static_cast<int>(lab);
    const Real* v = x.pixel(i);
    const double lse = detail::softmax_row(v, c, 1.0, p.data());
    const double logp = static_cast<double>(v[k]) - lse;
    const double wk = weights[static_cast<std::size_t>(k)];
    if (logp > log_floor) {
      sum -= wk * logp;
      if (grad.data()) {
        Real* g = grad.pixel(i);
        for (int j = 0; j < c; ++j) g[j] += static_cast<Real>(scale * wk * (p[j] - (j == k ? 1.0 : 0.0)) * inv_n);
      }
    } else {
      sum -= wk * log_floor;
    }
  }
  return sum * inv_n;
}

/// Soft-label form: pixel mean of -sum_k w[k] q[k] log p[k].
template <class Real, class Ref>
double weighted_ce_soft(TensorView<const Real> x, TensorView<const Ref> q, std::span<const float> weights,
                        TensorView<Real> grad = {}, double scale = 1.0) {
  detail::check_same(x.shape(), q.shape(), "weighted_ce");
  const int c = x.channels();
  std::vector<float> uniform;
  weights = detail::weights_or_uniform(weights, c, uniform);
  const std::size_t n = x.shape().pixels();
  if (n == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double log_floor = std::log(kLogClamp);
  std::vector<double> p(static_cast<std::size_t>(c));
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real* v = x.pixel(i);
    const Ref* t = q.pixel(i);
    const double lse = detail::softmax_row(v, c, 1.0, p.data());
    double wq_active = 0.0;  // sum of w*q over unclamped classes
    for (int k = 0; k < c; ++k) {
      const double logp = static_cast<double>(v[k]) - lse;
      const double wq = weights[static_cast<std::size_t>(k)] * static_cast<double>(t[k]);
      sum -= wq * std::max(logp, log_floor);
      if (logp > log_floor) wq_active += wq;
    }
    if (grad.data()) {
      Real* g = grad.pixel(i);
      for (int j = 0; j < c; ++j) {
        const double logp = static_cast<double>(v[j]) - lse;
        const double own = logp > log_floor ? weights[static_cast<std::size_t>(j)] * static_cast<double>(t[j]) : 0.0;
        g[j] += static_cast<Real>(scale * (p[j] * wq_active - own) * inv_n);
      }
    }
  }
  return sum * inv_n;
}

/// Mean over classes of 1 - (2 sum p q + eps) / (sum p + sum q + eps), p = softmax(x).
template <class Real, class Ref>
double dice_loss(TensorView<const Real> x, TensorView<const Ref> y, double epsilon, TensorView<Real> grad = {},
                 double scale = 1.0) {
  detail::check_same(x.shape(), y.shape(), "dice_loss");
  const int c = x.channels();
  const std::size_t n = x.shape().pixels();
  std::vector<double> probs(n * static_cast<std::size_t>(c));
  std::vector<double> inter(static_cast<std::size_t>(c), 0.0), psum(inter), qsum(inter);
  for (std::size_t i = 0; i < n; ++i) {
    double* p = probs.data() + i * c;
    detail::softmax_row(x.pixel(i), c, 1.0, p);
    const Ref* q = y.pixel(i);
    for (int k = 0; k < c; ++k) {
      inter[k] += p[k] * static_cast<double>(q[k]);
      psum[k] += p[k];
      qsum[k] += static_cast<double>(q[k]);
    }
  }
  double loss = 0.0;
  for (int k = 0; k < c; ++k) loss += 1.0 - (2.0 * inter[k] + epsilon) / (psum[k] + qsum[k] + epsilon);
  loss /= c;
  if (grad.data()) {
    std::vector<double> g(static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = probs.data() + i * c;
      const Ref* q = y.pixel(i);
      // dL/dp_k, then through the softmax Jacobian.
      double dot = 0.0;
      for (int k = 0; k < c; ++k) {
        const double den = psum[k] + qsum[k] + epsilon;
        g[k] = -(2.0 * static_cast<double>(q[k]) * den - (2.0 * inter[k] + epsilon)) / (den * den) / c;
        dot += g[k] * p[k];
      }
      Real* out = grad.pixel(i);
      for (int j = 0; j < c; ++j) out[j] += static_cast<Real>(scale * p[j] * (g[j] - dot));
    }
  }
  return loss;
}

/// (1/T^2) * pixel mean of KL(softmax(y/T) || softmax(x/T)); y is the reference.
template <class Real, class Ref>
double kld_temp(TensorView<const Real> x, TensorView<const Ref> y, double temperature, TensorView<Real> grad = {},
                double scale = 1.0) {
  detail::check_same(x.shape(), y.shape(), "kld_temp");
  if (!(temperature > 0.0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be positive");
  const int c = x.channels();
  const std::size_t n = x.shape().pixels();
  if (n == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double t2 = temperature * temperature;
  std::vector<double> p(static_cast<std::size_t>(c)), q(p);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real* xv = x.pixel(i);
    const Ref* yv = y.pixel(i);
    const double lse_x = detail::softmax_row(xv, c, temperature, p.data());
    const double lse_y = detail::softmax_row(yv, c, temperature, q.data());
    double kl = 0.0;
    for (int k = 0; k < c; ++k) {
      if (q[k] <= 0.0) continue;
      const double log_q = static_cast<double>(yv[k]) / temperature - lse_y;
      const double log_p = static_cast<double>(xv[k]) / temperature - lse_x;
      kl += q[k] * (log_q - log_p);
    }
    sum += std::max(kl, 0.0);
    if (grad.data()) {
      Real* g = grad.pixel(i);
      for (int k = 0; k < c; ++k) g[k] += static_cast<Real>(scale * (p[k] - q[k]) / (temperature * t2) * inv_n);
    }
  }
  return sum * inv_n / t2;
}

namespace detail {

template <class Real>
void check_prediction(PredictionView<Real> x, const char* who) {
  const Shape& s = x.np_logits.shape();
  if (s.channels != 2) throw Error(ErrorCode::kShapeMismatch, std::string(who) + ": np_logits must have 2 channels");
  if (x.hv.shape() != s)
    throw Error(ErrorCode::kShapeMismatch, std::string(who) + ": hv " + x.hv.shape().str() + " vs np " + s.str());
  if (!x.tp_logits.shape().same_plane(s) || x.tp_logits.channels() < 2)
    throw Error(ErrorCode::kShapeMismatch,
                std::string(who) + ": tp_logits " + x.tp_logits.shape().str() + " vs np " + s.str());
  for (const TensorView<const Real>& view : {x.np_logits, x.hv, x.tp_logits}) {
    for (std::size_t i = 0; i < view.size(); ++i) {
      if (!std::isfinite(static_cast<double>(view[i])))
        throw Error(ErrorCode::kNonFinite, std::string(who) + ": non-finite prediction value");
    }
  }
}

inline double scaled_total(const BranchTerms& t, const TermScales& s) {
  return s.hv_mse * t.hv_mse + s.hv_msge * t.hv_msge + s.np_ce * t.np_ce + s.np_aux * t.np_dice_or_kld +
         s.tp_ce * t.tp_ce + s.tp_aux * t.tp_dice_or_kld;
}

}  // namespace detail

/// Student branch sum against generated ground truth:
/// MSE + MSGE on HV, weighted CE + dice on NP and TP.
template <class Real>
BranchTerms student_loss(PredictionView<Real> x, TargetView gt, const LossConfig& cfg, LossGrad<Real>* grad = nullptr,
                         double grad_scale = 1.0) {
  cfg.validate();
  detail::check_prediction(x, "student_loss");
  const Shape& s = x.np_logits.shape();
  if (!gt.np_target.shape().same_plane(s) || !gt.tp_target.shape().same_plane(s) || gt.hv_target.shape() != s)
    throw Error(ErrorCode::kShapeMismatch, "student_loss: targets do not match prediction " + s.str());
  const int c = x.tp_logits.channels();
  const TermScales& sc = cfg.student_scales;
  TensorView<Real> g_np, g_hv, g_tp;
  if (grad) {
    g_np = grad->d_np_logits.view();
    g_hv = grad->d_hv.view();
    g_tp = grad->d_tp_logits.view();
  }
  const Tensor<Real> np_onehot = one_hot<Real>(gt.np_target, 2);
  const Tensor<Real> tp_onehot = one_hot<Real>(gt.tp_target, c);

  BranchTerms t;
  t.hv_mse = mse_hv(x.hv, gt.hv_target, g_hv, grad_scale * sc.hv_mse);
  t.hv_msge = msge_hv(x.hv, gt.hv_target, gt.np_target, g_hv, grad_scale * sc.hv_msge);
  t.np_ce = weighted_ce(x.np_logits, gt.np_target, cfg.np_weights, g_np, grad_scale * sc.np_ce);
  t.np_dice_or_kld = dice_loss(x.np_logits, np_onehot.view(), cfg.dice_epsilon, g_np, grad_scale * sc.np_aux);
  t.tp_ce = weighted_ce(x.tp_logits, gt.tp_target, cfg.tp_weights, g_tp, grad_scale * sc.tp_ce);
  t.tp_dice_or_kld = dice_loss(x.tp_logits, tp_onehot.view(), cfg.dice_epsilon, g_tp, grad_scale * sc.tp_aux);
  t.total = detail::scaled_total(t, sc);
  return t;
}

/// Distillation branch sum against the teacher: MSE + MSGE on HV (mask =
/// teacher NP argmax), weighted CE (teacher argmax labels) + temperature
/// KLD on NP and TP.
template <class Real>
BranchTerms distill_loss(PredictionView<Real> x, PredictionView<Real> teacher, const LossConfig& cfg,
                         LossGrad<Real>* grad = nullptr, double grad_scale = 1.0) {
  cfg.validate();
  detail::check_prediction(x, "distill_loss");
  detail::check_prediction(teacher, "distill_loss(teacher)");
  detail::check_same(x.np_logits.shape(), teacher.np_logits.shape(), "distill_loss np");
  detail::check_same(x.tp_logits.shape(), teacher.tp_logits.shape(), "distill_loss tp");
  const TermScales& sc = cfg.distill_scales;
  const double temp = cfg.temperature;
  TensorView<Real> g_np, g_hv, g_tp;
  if (grad) {
    g_np = grad->d_np_logits.view();
    g_hv = grad->d_hv.view();
    g_tp = grad->d_tp_logits.view();
  }
  const Tensor<std::int32_t> np_labels = argmax_channels(teacher.np_logits);
  const Tensor<std::int32_t> tp_labels = argmax_channels(teacher.tp_logits);
  Mask fg(np_labels.shape(), 0);
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = np_labels[i] == 1 ? 1 : 0;

  BranchTerms t;
  t.hv_mse = mse_hv(x.hv, teacher.hv, g_hv, grad_scale * sc.hv_mse);
  t.hv_msge = msge_hv(x.hv, teacher.hv, fg.view(), g_hv, grad_scale * sc.hv_msge);
  if (cfg.soft_distill_ce) {
    const Tensor<Real> np_soft = softmax_channels(teacher.np_logits);
    const Tensor<Real> tp_soft = softmax_channels(teacher.tp_logits);
    t.np_ce = weighted_ce_soft(x.np_logits, np_soft.view(), cfg.np_weights, g_np, grad_scale * sc.np_ce);
    t.tp_ce = weighted_ce_soft(x.tp_logits, tp_soft.view(), cfg.tp_weights, g_tp, grad_scale * sc.tp_ce);
  } else {
    t.np_ce = weighted_ce(x.np_logits, np_labels.view(), cfg.np_weights, g_np, grad_scale * sc.np_ce);
    t.tp_ce = weighted_ce(x.tp_logits, tp_labels.view(), cfg.tp_weights, g_tp, grad_scale * sc.tp_ce);
  }
  t.np_dice_or_kld = kld_temp(x.np_logits, teacher.np_logits, temp, g_np, grad_scale * sc.np_aux);
  t.tp_dice_or_kld = kld_temp(x.tp_logits, teacher.tp_logits, temp, g_tp, grad_scale * sc.tp_aux);
  t.total = detail::scaled_total(t, sc);
  return t;
}

namespace detail {

template <class Real>
LossBreakdown combine(PredictionView<Real> x, TargetView gt, PredictionView<Real> teacher, const LossConfig& cfg,
                      LossGrad<Real>* grad) {
  LossBreakdown b;
  b.student = student_loss(x, gt, cfg, grad, cfg.alpha);
  b.distill = distill_loss(x, teacher, cfg, grad, 1.0 - cfg.alpha);
  b.student_total = b.student.total;
  b.distill_total = b.distill.total;
  b.combined = cfg.alpha * b.student_total + (1.0 - cfg.alpha) * b.distill_total;
  return b;
}

}  // namespace detail

/// alpha * student + (1 - alpha) * distill.
template <class Real>
LossBreakdown combined_loss(PredictionView<Real> x, TargetView gt, PredictionView<Real> teacher,
                            const LossConfig& cfg) {
  return detail::combine<Real>(x, gt, teacher, cfg, nullptr);
}

template <class Real>
std::pair<LossBreakdown, LossGrad<Real>> combined_loss_grad(PredictionView<Real> x, TargetView gt,
                                                            PredictionView<Real> teacher, const LossConfig& cfg) {
  LossGrad<Real> g{Tensor<Real>(x.np_logits.shape(), Real{0}), Tensor<Real>(x.hv.shape(), Real{0}),
                   Tensor<Real>(x.tp_logits.shape(), Real{0})};
  LossBreakdown b = detail::combine<Real>(x, gt, teacher, cfg, &g);
  return {b, std::move(g)};
}

}  // namespace hoverpost
