// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// 0 only if every selected criterion passes.
//
//   acceptance                 all criteria
//   acceptance --criterion 3   a single one (1..6, 7a, 7b, 8)

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "hoverpost/commands.hpp"
#include "hoverpost/npy.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hoverpost;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... v) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, v...);
  return buf;
}

// Gradient check: central differences, h = 1e-4, 20 random 8x8 fixtures, C = 5.
Outcome gradient_check() {
  LossCheckArgs args;
  args.seed = 2024;
  args.size = 8;
  args.num_classes = 5;
  args.fixtures = 20;
  args.step = 1e-4;

  // every fixture must have foreground so the masked gradient term is active
  Rng probe(args.seed);
  std::size_t min_fg = SIZE_MAX;
  for (int n = 0; n < args.fixtures; ++n) {
    const LossFixture f = make_loss_fixture(args.size, args.num_classes, probe);
    std::size_t fg = 0;
    for (auto v : f.gt.np_target.span()) fg += v != 0;
    min_fg = std::min(min_fg, fg);
  }

  const LossCheckReport r = run_loss_check(args);
  const double worst = std::max({r.max_rel_np, r.max_rel_hv, r.max_rel_tp});
  const bool ok = worst <= 1e-4 && r.seconds < 10.0 && min_fg > 0;
  return {ok, fmt("max rel err %.3e (np %.2e hv %.2e tp %.2e) <= 1e-4, %.2f s < 10 s, min fg %zu px", worst,
                  r.max_rel_np, r.max_rel_hv, r.max_rel_tp, r.seconds, min_fg)};
}

// combined = alpha * student + (1 - alpha) * distill
Outcome affine_identity() {
  Rng rng(7);
  double worst = 0.0;
  bool endpoints = true, branches = true;
  for (int n = 0; n < 10; ++n) {
    LossFixture f = make_loss_fixture(16, 5, rng);
    const TargetView gt(f.gt);
    const double s = student_loss<double>(f.student.view(), gt, f.config).total;
    const double d = distill_loss<double>(f.student.view(), f.teacher.view(), f.config).total;
    for (double alpha : {0.0, 0.25, 0.5, 1.0}) {
      f.config.alpha = alpha;
      const LossBreakdown b = combined_loss<double>(f.student.view(), gt, f.teacher.view(), f.config);
      branches = branches && b.student_total == s && b.distill_total == d;
      const double expect = alpha * s + (1.0 - alpha) * d;
      worst = std::max(worst, std::abs(b.combined - expect));
      if (alpha == 0.0) endpoints = endpoints && b.combined == d;
      if (alpha == 1.0) endpoints = endpoints && b.combined == s;
    }
  }
  return {worst <= 1e-12 && endpoints && branches,
          fmt("max |combined - affine| %.3e <= 1e-12, endpoints exact: %s, branches alpha-free: %s", worst,
              endpoints ? "yes" : "no", branches ? "yes" : "no")};
}

InstanceMap segment_from_targets(const InstanceMap& inst) {
  const Mask np = gen_np_target(inst.view());
  Tensor<float> prob(np.shape(), 0.0f);
  for (std::size_t i = 0; i < np.size(); ++i) prob[i] = np[i] ? 1.0f : 0.0f;
  const Tensor<float> hv = gen_hv_targets(inst.view());
  return instance_segment(prob.view(), hv.view());
}

std::size_t count_labels(const InstanceMap& m) { return oracle::labels(m.view()).size(); }

Outcome round_trip() {
  Rng rng(11);
  EllipseOptions eo;
  eo.min_count = 5;
  eo.max_count = 25;
  eo.min_gap = 2;
  double worst = 1.0;
  int below = 0;
  std::size_t min_inst = SIZE_MAX, max_inst = 0;
  for (int t = 0; t < 50; ++t) {
    const InstanceMap gt = synth_ellipses(256, 256, eo, rng);
    min_inst = std::min(min_inst, count_labels(gt));
    max_inst = std::max(max_inst, count_labels(gt));
    const double pq = panoptic_quality(gt.view(), segment_from_targets(gt).view()).pq;
    worst = std::min(worst, pq);
    below += pq < 0.95;
  }
  int correct = 0;
  const int pairs = 50;
  for (int t = 0; t < pairs; ++t) {
    const InstanceMap gt = synth_touching_pair(256, 256, rng);
    correct += count_labels(segment_from_targets(gt)) == count_labels(gt);
  }
  const double frac = static_cast<double>(correct) / pairs;
  return {below == 0 && frac >= 0.9 && min_inst >= 5,
          fmt("min binary PQ %.4f >= 0.95 over 50 tiles (%zu..%zu nuclei), touching pairs split %d/%d (%.0f%% >= 90%%)",
              worst, min_inst, max_inst, correct, pairs, 100.0 * frac)};
}

Outcome matching_oracle() {
  Rng rng(13);
  int pair_mismatch = 0, pq_mismatch = 0;
  for (int t = 0; t < 200; ++t) {
    const InstanceMap gt = oracle::random_rect_map(16, 5, rng);
    const InstanceMap pred = (t % 3 == 0) ? oracle::random_rect_map(16, 5, rng) : oracle::jitter(gt, rng);
    const oracle::Match ref = oracle::brute_force_match(gt.view(), pred.view());
    const MatchSet got = match_instances(iou_matrix(gt.view(), pred.view()));
    std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (const auto& p : got.pairs) pairs.insert({p.gt, p.pred});
    pair_mismatch += pairs != ref.pairs;
    pq_mismatch += panoptic_quality(got).pq != ref.pq();
  }
  return {pair_mismatch == 0 && pq_mismatch == 0,
          fmt("200 random 16x16 pairs: %d match mismatches, %d PQ mismatches vs exhaustive search", pair_mismatch,
              pq_mismatch)};
}

Outcome kld_law() {
  Rng rng(17);
  double worst = 0.0, worst_zero = 0.0;
  for (double temp : {1.0, 3.0, 5.0}) {
    for (int t = 0; t < 20; ++t) {
      const int c = rng.integer(2, 6);
      Tensor<double> x(4, 5, c), y(4, 5, c);
      for (double& v : x.span()) v = 3.0 * rng.normal();
      for (double& v : y.span()) v = 3.0 * rng.normal();
      double ref = 0.0;
      for (std::size_t i = 0; i < x.shape().pixels(); ++i) {
        const auto p = softmax_with_temperature({x.pixel(i), static_cast<std::size_t>(c)}, temp);
        const auto q = softmax_with_temperature({y.pixel(i), static_cast<std::size_t>(c)}, temp);
        double kl = 0.0;
        for (int k = 0; k < c; ++k) kl += q[k] * std::log(q[k] / p[k]);
        ref += kl;
      }
      ref = ref / static_cast<double>(x.shape().pixels()) / (temp * temp);
      const double got = kld_temp<double, double>(x.view(), y.view(), temp);
      worst = std::max(worst, std::abs(got - ref));
      worst_zero = std::max(worst_zero, std::abs(kld_temp<double, double>(x.view(), x.view(), temp)));
    }
  }
  return {worst <= 1e-10 && worst_zero == 0.0,
          fmt("T in {1,3,5}: max |kld - KL/T^2| %.3e <= 1e-10, max kld(x, x) %.1e", worst, worst_zero)};
}

Outcome toy_distill() {
  const ToyDistillArgs args;
  const auto t0 = Clock::now();
  const ToyDistillReport a = run_toy_distill(args);
  const double secs = seconds_since(t0);
  const ToyDistillReport b = run_toy_distill(args);
  const bool same = toy_report_json(a) == toy_report_json(b);
  const double reduction = 1.0 - a.final_loss / a.initial_loss;
  return {reduction >= 0.5 && a.np_agreement >= 0.9 && same && secs < 30.0,
          fmt("loss %.4f -> %.4f (%.1f%% reduction >= 50%%), NP agreement %.1f%% >= 90%%, deterministic: %s, "
              "%.2f s < 30 s",
              a.initial_loss, a.final_loss, 100.0 * reduction, 100.0 * a.np_agreement, same ? "yes" : "no", secs)};
}

Outcome latency() {
  const BenchTile tile = make_bench_tile(1000, 0);
  const std::size_t nuclei = count_labels(tile.truth);
  double best = 1e300;
  std::size_t found = 0;
  for (int r = 0; r < 3; ++r) {
    const auto t0 = Clock::now();
    const InstanceMap inst = instance_segment(tile.np_probs.view(), tile.hv.view());
    const Classification cls = classify_instances(inst.view(), tile.tp_probs.view());
    best = std::min(best, 1000.0 * seconds_since(t0));
    found = cls.classes.size();
  }
  return {best < 500.0 && nuclei >= 500,
          fmt("1000x1000 tile, %zu nuclei (>= 500), %zu found, segment + classify %.1f ms < 500 ms single-thread",
              nuclei, found, best)};
}

Outcome throughput() {
  BenchArgs args;
  args.sizes = {1000};
  args.repetitions = 1;
  args.threads = 4;
  args.tiles = 16;
  const BenchReport r = run_bench(args);
  return {r.speedup() >= 3.0,
          fmt("4 workers %.2f tiles/s vs 1 worker %.2f tiles/s: speedup %.2fx >= 3x (hardware threads: %u)",
              r.multi_throughput, r.single_throughput, r.speedup(), std::thread::hardware_concurrency())};
}

NpyArray random_array(Rng& rng) {
  static constexpr Dtype kTypes[] = {Dtype::kF32, Dtype::kF64, Dtype::kU8, Dtype::kU16, Dtype::kU32, Dtype::kI32};
  NpyArray a;
  a.dtype = kTypes[rng.integer(0, 5)];
  const int nd = rng.integer(0, 4);
  for (int d = 0; d < nd; ++d) a.shape.push_back(static_cast<std::size_t>(rng.integer(0, 7)));
  a.data.resize(a.count() * item_size(a.dtype));
  for (auto& b : a.data) b = static_cast<std::uint8_t>(rng.integer(0, 255));
  return a;
}

Outcome npy_and_report() {
  Rng rng(19);
  const test::TempDir dir;
  int lossy = 0;
  for (int i = 0; i < 1000; ++i) {
    const NpyArray a = random_array(rng);
    const auto bytes = serialize_npy(a);
    const NpyArray b = parse_npy(bytes);
    const auto path = dir.path / "a.npy";
    write_npy(a, path);
    const NpyArray c = read_npy(path);
    lossy += !(a == b) || !(a == c) || serialize_npy(c) != bytes;
  }

  // evaluate run twice over the same directories, then with 4 threads
  const auto gt_dir = dir.path / "gt", pred_dir = dir.path / "pred";
  std::filesystem::create_directories(gt_dir);
  std::filesystem::create_directories(pred_dir);
  for (int t = 0; t < 12; ++t) {
    EllipseOptions eo;
    eo.max_count = 12;
    const InstanceMap gt = synth_ellipses(96, 96, eo, rng);
    const ClassTable classes = synth_classes(gt.view(), 5, rng);
    const InstanceMap pred = segment_from_targets(gt);
    auto stacked = [&](const InstanceMap& m, const InstanceMap& ref) {
      Tensor<std::int32_t> out(m.height(), m.width(), 2, 0);
      for (std::size_t i = 0; i < m.size(); ++i) {
        out[2 * i] = static_cast<std::int32_t>(m[i]);
        out[2 * i + 1] = ref[i] ? classes.at(ref[i]) : 0;
      }
      return from_tensor(out);
    };
    const std::string name = fmt("tile_%02d.npy", t);
    write_npy(stacked(gt, gt), gt_dir / name);
    write_npy(stacked(pred, gt), pred_dir / name);
  }
  std::vector<std::string> reports;
  int exit_codes = 0;
  for (int threads : {1, 1, 4}) {
    EvaluateArgs ev;
    ev.gt_dir = gt_dir;
    ev.pred_dir = pred_dir;
    ev.report = dir.path / fmt("report_%zu.json", reports.size());
    ev.threads = threads;
    std::ostringstream out, err;
    exit_codes += cmd_evaluate(ev, out, err);
    reports.push_back(test::read_bytes(ev.report));
  }
  const bool stable = exit_codes == 0 && !reports[0].empty() && reports[0] == reports[1] && reports[0] == reports[2];
  return {lossy == 0 && stable, fmt("1000 random arrays, %d lossy round trips; evaluate report byte-stable: %s "
                                    "(%zu bytes)",
                                    lossy, stable ? "yes" : "no", reports[0].size())};
}

struct Criterion {
  const char* id;
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {"1", "loss gradients", gradient_check},        {"2", "combined loss affine", affine_identity},
      {"3", "segmentation round trip", round_trip},   {"4", "matching vs brute force", matching_oracle},
      {"5", "KLD temperature law", kld_law},          {"6", "toy distillation", toy_distill},
      {"7a", "single-thread latency", latency},       {"7b", "multi-thread throughput", throughput},
      {"8", "NPY round trip, stable report", npy_and_report},
  };
  std::string only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--criterion ID]\n";
      return 2;
    }
  }
  bool any = false, ok = true;
  for (const auto& c : all) {
    if (!only.empty() && only != c.id) continue;
    any = true;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.title << ": " << o.detail << std::endl;
    ok = ok && o.pass;
  }
  if (!any) {
    std::cerr << "unknown criterion " << only << '\n';
    return 2;
  }
  return ok ? 0 : 1;
}
