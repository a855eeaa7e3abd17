#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include <string>

#include "hoverpost/loss.hpp"
#include "hoverpost/metrics.hpp"
#include "hoverpost/postproc.hpp"
#include "hoverpost/targets.hpp"

namespace py = pybind11;
using namespace hoverpost;

namespace {

// H x W -> 1 channel, H x W x C -> C channels. No copies, no casts.
template <class T>
TensorView<const T> view_of(const py::array& a, const char* name, int channels = 0) {
  if (!py::isinstance<py::array_t<T>>(a) || !a.dtype().is(py::dtype::of<T>()))
    throw py::type_error(std::string(name) + ": expected dtype " + std::string(py::str(py::dtype::of<T>())) +
                         ", got " + std::string(py::str(a.dtype())));
  if (!(a.flags() & py::array::c_style)) throw py::value_error(std::string(name) + ": array must be C-contiguous");
  if (a.ndim() != 2 && a.ndim() != 3)
    throw py::value_error(std::string(name) + ": expected 2 or 3 dimensions, got " + std::to_string(a.ndim()));
  const Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1};
  if (channels && s.channels != channels)
    throw py::value_error(std::string(name) + ": expected " + std::to_string(channels) + " channels, got shape " +
                          s.str());
  return {static_cast<const T*>(a.data()), s};
}

template <class T>
py::array_t<T> to_array(const Tensor<T>& t, bool squeeze = true) {
  std::vector<py::ssize_t> shape{t.height(), t.width()};
  if (!(squeeze && t.channels() == 1)) shape.push_back(t.channels());
  py::array_t<T> out(shape);
  std::copy(t.span().begin(), t.span().end(), out.mutable_data());
  return out;
}

PredictionView<double> prediction(const py::array& np_logits, const py::array& hv, const py::array& tp_logits) {
  return {view_of<double>(np_logits, "np_logits", 2), view_of<double>(hv, "hv", 2),
          view_of<double>(tp_logits, "tp_logits")};
}

py::dict branch_dict(const BranchTerms& t) {
  py::dict d;
  d["hv_mse"] = t.hv_mse;
  d["hv_msge"] = t.hv_msge;
  d["np_ce"] = t.np_ce;
  d["np_aux"] = t.np_dice_or_kld;
  d["tp_ce"] = t.tp_ce;
  d["tp_aux"] = t.tp_dice_or_kld;
  d["total"] = t.total;
  return d;
}

py::dict breakdown_dict(const LossBreakdown& b) {
  py::dict d;
  d["student"] = branch_dict(b.student);
  d["distill"] = branch_dict(b.distill);
  d["student_total"] = b.student_total;
  d["distill_total"] = b.distill_total;
  d["combined"] = b.combined;
  return d;
}

LossConfig loss_config(double alpha, double temperature, std::vector<float> np_weights,
                       std::vector<float> tp_weights) {
  LossConfig cfg;
  cfg.alpha = alpha;
  cfg.temperature = temperature;
  if (!np_weights.empty()) cfg.np_weights = std::move(np_weights);
  cfg.tp_weights = std::move(tp_weights);
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "HoVer-map post-processing, distillation losses and metrics";

  static py::exception<Error> hp_error(m, "HoverpostError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(hp_error.ptr(), e.what());
    }
  });

  m.def(
      "instance_segment",
      [](const py::array& np_probs, const py::array& hv, float np_threshold, float energy_threshold, int min_size,
         int min_marker_size, int sobel_radius) {
        PostprocConfig cfg;
        cfg.np_threshold = np_threshold;
        cfg.energy_threshold = energy_threshold;
        cfg.min_instance_size = min_size;
        cfg.min_marker_size = min_marker_size;
        cfg.sobel_radius = sobel_radius;
        cfg.validate();
        const auto np_view = view_of<float>(np_probs, "np_probs", 1);
        const auto hv_view = view_of<float>(hv, "hv", 2);
        InstanceMap out;
        {
          py::gil_scoped_release release;
          out = instance_segment(np_view, hv_view, cfg);
        }
        return to_array(out);
      },
      py::arg("np_probs"), py::arg("hv"), py::arg("np_threshold") = 0.5f, py::arg("energy_threshold") = 0.4f,
      py::arg("min_size") = 10, py::arg("min_marker_size") = 10, py::arg("sobel_radius") = 1,
      "float32 H x W foreground probabilities and H x W x 2 HV maps -> uint32 instance map");

  m.def(
      "sobel_energy",
      [](const py::array& hv, const py::array& mask, int radius) {
        return to_array(sobel_energy(view_of<float>(hv, "hv", 2), view_of<std::uint8_t>(mask, "mask", 1), radius));
      },
      py::arg("hv"), py::arg("mask"), py::arg("radius") = 1);

  m.def(
      "classify_instances",
      [](const py::array& instances, const py::array& tp_probs) {
        const Classification c =
            classify_instances(view_of<std::uint32_t>(instances, "instances", 1), view_of<float>(tp_probs, "tp_probs"));
        py::dict out;
        for (const auto& [label, cls] : c.classes) out[py::int_(label)] = py::make_tuple(cls, c.probs.at(label));
        return out;
      },
      py::arg("instances"), py::arg("tp_probs"), "-> {label: (class, probability)}");

  m.def(
      "gen_targets",
      [](const py::array& instances, const ClassTable& classes) {
        const auto inst = view_of<std::uint32_t>(instances, "instances", 1);
        check_instance_map(inst);
        const TargetMaps t = gen_targets(inst, classes);
        return py::make_tuple(to_array(t.np_target), to_array(t.hv_target), to_array(t.tp_target));
      },
      py::arg("instances"), py::arg("classes"), "-> (np uint8 H x W, hv float32 H x W x 2, tp int32 H x W)");

  m.def(
      "combined_loss",
      [](const py::array& s_np, const py::array& s_hv, const py::array& s_tp, const py::array& t_np,
         const py::array& t_hv, const py::array& t_tp, const py::array& gt_np, const py::array& gt_hv,
         const py::array& gt_tp, double alpha, double temperature, std::vector<float> np_weights,
         std::vector<float> tp_weights, bool with_grad) -> py::object {
        const LossConfig cfg = loss_config(alpha, temperature, std::move(np_weights), std::move(tp_weights));
        const PredictionView<double> x = prediction(s_np, s_hv, s_tp);
        const PredictionView<double> teacher = prediction(t_np, t_hv, t_tp);
        const TargetView gt(view_of<std::uint8_t>(gt_np, "gt_np", 1), view_of<float>(gt_hv, "gt_hv", 2),
                            view_of<std::int32_t>(gt_tp, "gt_tp", 1));
        if (!with_grad) return breakdown_dict(combined_loss<double>(x, gt, teacher, cfg));
        auto [b, g] = combined_loss_grad<double>(x, gt, teacher, cfg);
        py::dict grads;
        grads["np_logits"] = to_array(g.d_np_logits, false);
        grads["hv"] = to_array(g.d_hv, false);
        grads["tp_logits"] = to_array(g.d_tp_logits, false);
        return py::make_tuple(breakdown_dict(b), grads);
      },
      py::arg("student_np"), py::arg("student_hv"), py::arg("student_tp"), py::arg("teacher_np"),
      py::arg("teacher_hv"), py::arg("teacher_tp"), py::arg("gt_np"), py::arg("gt_hv"), py::arg("gt_tp"),
      py::arg("alpha") = 0.5, py::arg("temperature") = 1.0, py::arg("np_weights") = std::vector<float>{},
      py::arg("tp_weights") = std::vector<float>{}, py::arg("with_grad") = false,
      "alpha * student + (1 - alpha) * distill over float64 logits; with_grad adds d/d(student)");

  m.def(
      "panoptic_quality",
      [](const py::array& gt, const py::array& pred) {
        const PanopticScores s =
            panoptic_quality(view_of<std::uint32_t>(gt, "gt", 1), view_of<std::uint32_t>(pred, "pred", 1));
        py::dict d;
        d["pq"] = s.pq;
        d["dq"] = s.dq;
        d["sq"] = s.sq;
        d["tp"] = s.tp;
        d["fp"] = s.fp;
        d["fn"] = s.fn;
        return d;
      },
      py::arg("gt"), py::arg("pred"));

  m.def(
      "match_instances",
      [](const py::array& gt, const py::array& pred) {
        const MatchSet ms =
            match_instances(iou_matrix(view_of<std::uint32_t>(gt, "gt", 1), view_of<std::uint32_t>(pred, "pred", 1)));
        py::list out;
        for (const auto& p : ms.pairs) out.append(py::make_tuple(p.gt, p.pred, p.iou));
        return out;
      },
      py::arg("gt"), py::arg("pred"), "-> [(gt_label, pred_label, iou)] for pairs with IoU > 0.5");
}
