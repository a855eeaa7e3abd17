#include "hoverpost/loss.hpp"

namespace hoverpost {

namespace {

void check_scales(const TermScales& s, const char* which) {
  for (double v : {s.hv_mse, s.hv_msge, s.np_ce, s.np_aux, s.tp_ce, s.tp_aux}) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw Error(ErrorCode::kInvalidArgument, std::string(which) + " term scales must be finite and >= 0");
  }
}

void check_weights(const std::vector<float>& w, const char* which) {
  for (float v : w) {
    if (!(v > 0.0f) || !std::isfinite(v))
      throw Error(ErrorCode::kInvalidArgument, std::string(which) + " class weights must be positive");
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must lie in [0, 1]");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw Error(ErrorCode::kInvalidArgument, "temperature must be positive");
  if (!(dice_epsilon > 0.0)) throw Error(ErrorCode::kInvalidArgument, "dice epsilon must be positive");
  if (np_weights.size() != 2) throw Error(ErrorCode::kInvalidArgument, "np weights need exactly 2 entries");
  check_weights(np_weights, "np");
  check_weights(tp_weights, "tp");
  check_scales(student_scales, "student");
  check_scales(distill_scales, "distill");
}

std::vector<double> softmax_with_temperature(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw Error(ErrorCode::kInvalidArgument, "temperature must be positive");
  if (logits.empty()) throw Error(ErrorCode::kInvalidArgument, "empty logit vector");
  for (double v : logits) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "non-finite logit");
  }
  std::vector<double> p(logits.size());
  detail::softmax_row(logits.data(), static_cast<int>(logits.size()), temperature, p.data());
  return p;
}

}  // namespace hoverpost
