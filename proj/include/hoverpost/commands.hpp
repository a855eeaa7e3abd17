#pragma once

// Command implementations behind the `hoverpost` CLI. Each returns the
// process exit code: 0 success, 1 check/threshold failure, 2 input or
// format error.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hoverpost/loss.hpp"
#include "hoverpost/metrics.hpp"
#include "hoverpost/postproc.hpp"
#include "hoverpost/synth.hpp"
#include "hoverpost/targets.hpp"

namespace hoverpost {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitInputError = 2;

struct PostprocessArgs {
  std::filesystem::path np;
  std::filesystem::path hv;
  std::optional<std::filesystem::path> tp;
  /// Writes <out>.npy (instances) and <out>.json (records).
  std::filesystem::path out;
  std::optional<std::filesystem::path> overlay;
  /// H x W x 3 tile drawn under the overlay; black when absent.
  std::optional<std::filesystem::path> image;
  /// Treat 2-channel NP and the TP array as probabilities instead of logits.
  bool probs = false;
  PostprocConfig config;
};

int cmd_postprocess(const PostprocessArgs& args, std::ostream& out, std::ostream& err);

struct EvaluateArgs {
  std::filesystem::path gt_dir;
  std::filesystem::path pred_dir;
  std::filesystem::path report;
  /// none | pannuke | consep: class scheme of the ground truth.
  std::string remap = "none";
  /// Scheme of the predictions; defaults to `remap`.
  std::optional<std::string> pred_remap;
  /// 0 = infer from the data.
  int num_classes = 0;
  double radius = kDetectionRadius;
  int threads = 1;
};

int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err);

/// Loads a tile: <name>.npy holding H x W instances (classes from an
/// optional <name>.json record file) or H x W x 2 (instances, type map).
EvalTile load_eval_tile(const std::filesystem::path& npy, bool& has_classes);

struct GenTargetsArgs {
  /// H x W instances or H x W x 2 (instances, type map).
  std::optional<std::filesystem::path> instances;
  /// PanNuke fold: images.npy, masks.npy, types.npy.
  std::vector<std::filesystem::path> fold;
  /// Prefix for single-map mode, directory for fold mode.
  std::filesystem::path out;
};

int cmd_gen_targets(const GenTargetsArgs& args, std::ostream& out, std::ostream& err);

struct LossCheckArgs {
  std::uint64_t seed = 0;
  int size = 8;
  int num_classes = 5;
  int fixtures = 20;
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Test hook: perturb one analytic gradient entry.
  bool corrupt_gradient = false;
};

struct LossCheckReport {
  double max_rel_np = 0.0;
  double max_rel_hv = 0.0;
  double max_rel_tp = 0.0;
  double seconds = 0.0;
};

/// Relative error used by the gradient check: |a - f| / max(|a|, |f|, floor).
inline constexpr double kGradCheckFloor = 1e-6;

LossCheckReport run_loss_check(const LossCheckArgs& args);
int cmd_loss_check(const LossCheckArgs& args, std::ostream& out);

/// Random loss fixture shared by the gradient checks.
struct LossFixture {
  PredictionMaps<double> student;
  PredictionMaps<double> teacher;
  TargetMaps gt;
  LossConfig config;
};

LossFixture make_loss_fixture(int size, int num_classes, Rng& rng);

struct ToyDistillArgs {
  std::uint64_t seed = 0;
  int steps = 500;
  double alpha = 0.5;
  double temperature = 3.0;
  double learning_rate = 0.5;
};

struct ToyDistillReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double initial_student = 0.0;
  double final_student = 0.0;
  double initial_distill = 0.0;
  double final_distill = 0.0;
  double np_agreement = 0.0;
  double tp_agreement = 0.0;
  int steps = 0;
  int instances = 0;
  double seconds = 0.0;

  bool passed() const { return final_loss <= 0.5 * initial_loss && np_agreement >= 0.9; }
};

ToyDistillReport run_toy_distill(const ToyDistillArgs& args);
/// Deterministic JSON (timing excluded).
std::string toy_report_json(const ToyDistillReport& report);
int cmd_toy_distill(const ToyDistillArgs& args, std::ostream& out);

struct BenchArgs {
  std::vector<int> sizes{256, 1000};
  int repetitions = 5;
  int threads = 1;
  int tiles = 8;
  std::uint64_t seed = 0;
  PostprocConfig config;
};

struct BenchSize {
  int size = 0;
  int instances = 0;
  int found = 0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
};

struct BenchReport {
  std::vector<BenchSize> sizes;
  int threads = 1;
  int tiles = 0;
  /// Tiles per second over `tiles` 1000 x 1000 tiles on one worker vs `threads` workers.
  double single_throughput = 0.0;
  double multi_throughput = 0.0;
  double speedup() const { return single_throughput > 0.0 ? multi_throughput / single_throughput : 0.0; }
};

/// Synthetic dense tile and its post-processing inputs.
struct BenchTile {
  InstanceMap truth;
  Tensor<float> np_probs;
  Tensor<float> hv;
  Tensor<float> tp_probs;
};

BenchTile make_bench_tile(int size, std::uint64_t seed);
BenchReport run_bench(const BenchArgs& args);
int cmd_bench(const BenchArgs& args, std::ostream& out);

/// --threads fallback: HOVERPOST_THREADS or 1.
int default_threads();

}  // namespace hoverpost
