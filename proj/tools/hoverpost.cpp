#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "hoverpost/commands.hpp"

using namespace hoverpost;

namespace {

void add_postproc_flags(CLI::App* cmd, PostprocConfig& cfg) {
  cmd->add_option("--np-threshold", cfg.np_threshold, "Foreground probability threshold")->capture_default_str();
  cmd->add_option("--energy-threshold", cfg.energy_threshold, "Marker energy threshold")->capture_default_str();
  cmd->add_option("--min-size", cfg.min_instance_size, "Minimum instance size in pixels")->capture_default_str();
  cmd->add_option("--min-marker-size", cfg.min_marker_size, "Minimum marker size in pixels")->capture_default_str();
  cmd->add_option("--sobel-radius", cfg.sobel_radius, "Sobel stencil radius (1..3)")->capture_default_str();
}

// Runs `cmd` with stdout captured, echoes it, and copies it to `path` if set.
template <class F>
int with_report(const std::optional<std::string>& path, F&& cmd) {
  std::ostringstream buf;
  const int rc = cmd(buf);
  std::cout << buf.str();
  if (path) {
    std::ofstream f(*path, std::ios::binary);
    f << buf.str();
    if (!f) {
      std::cerr << "cannot write " << *path << '\n';
      return kExitInputError;
    }
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HoVer-map post-processing, distillation losses and evaluation"};
  app.require_subcommand(1);
  const int env_threads = default_threads();

  PostprocessArgs pp;
  auto* post = app.add_subcommand("postprocess", "NP/HV/TP maps -> instances, records, overlay");
  post->add_option("--np", pp.np, "NP map (.npy): H x W probabilities or H x W x 2 logits")->required();
  post->add_option("--hv", pp.hv, "HV map (.npy), H x W x 2")->required();
  post->add_option("--tp", pp.tp, "TP map (.npy), H x W x C logits");
  post->add_option("--out", pp.out, "Output prefix: writes PREFIX.npy and PREFIX.json")->required();
  post->add_option("--overlay", pp.overlay, "Boundary overlay PNG");
  post->add_option("--image", pp.image, "H x W x 3 tile (.npy) under the overlay");
  post->add_flag("--probs", pp.probs, "NP (2-channel) and TP inputs are probabilities, not logits");
  add_postproc_flags(post, pp.config);

  EvaluateArgs ev;
  ev.threads = env_threads;
  auto* eval = app.add_subcommand("evaluate", "Score predicted tiles against ground truth");
  eval->add_option("gt_dir", ev.gt_dir, "Ground-truth tiles")->required();
  eval->add_option("pred_dir", ev.pred_dir, "Predicted tiles")->required();
  eval->add_option("--out", ev.report, "Report JSON")->required();
  eval->add_option("--remap", ev.remap, "Class scheme of the tiles: pannuke, consep or none")->capture_default_str();
  eval->add_option("--pred-remap", ev.pred_remap, "Class scheme of the predictions (default: --remap)");
  eval->add_option("--num-classes", ev.num_classes, "Number of classes (0: infer)");
  eval->add_option("--radius", ev.radius, "Detection radius in pixels")->capture_default_str();
  eval->add_option("--threads", ev.threads, "Worker threads")->check(CLI::PositiveNumber);

  GenTargetsArgs gt;
  auto* gen = app.add_subcommand("gen-targets", "Instance maps or a PanNuke fold -> NP/HV/TP targets");
  gen->add_option("instances", gt.instances, "Instance map (.npy), H x W or H x W x 2 with types");
  gen->add_option("--fold", gt.fold, "PanNuke fold: IMAGES MASKS TYPES")->expected(3);
  gen->add_option("--out", gt.out, "Output prefix (single map) or directory (fold)")->required();

  LossCheckArgs lc;
  auto* loss = app.add_subcommand("loss-check", "Finite-difference check of the loss gradients");
  loss->add_option("--seed", lc.seed)->capture_default_str();
  loss->add_option("--size", lc.size, "Fixture side length")->capture_default_str()->check(CLI::Range(2, 64));
  loss->add_option("--classes", lc.num_classes, "TP channels")->capture_default_str()->check(CLI::Range(2, 32));
  loss->add_option("--fixtures", lc.fixtures)->capture_default_str()->check(CLI::PositiveNumber);
  std::optional<std::string> report_out;
  loss->add_option("--out", report_out, "Also write the report to this file");
  loss->add_flag("--corrupt-gradient", lc.corrupt_gradient)->group("");

  ToyDistillArgs td;
  auto* toy = app.add_subcommand("toy-distill", "Train a per-pixel affine student against a synthetic teacher");
  toy->add_option("--seed", td.seed)->capture_default_str();
  toy->add_option("--steps", td.steps)->capture_default_str()->check(CLI::NonNegativeNumber);
  toy->add_option("--alpha", td.alpha, "Student weight in the combined loss")->capture_default_str()->check(
      CLI::Range(0.0, 1.0));
  toy->add_option("--temperature", td.temperature, "Distillation temperature")->capture_default_str()->check(
      CLI::PositiveNumber);
  toy->add_option("--lr", td.learning_rate, "Learning rate")->capture_default_str();
  toy->add_option("--out", report_out, "Also write the JSON report to this file");

  BenchArgs bn;
  bn.threads = env_threads;
  auto* bench = app.add_subcommand("bench", "Time post-processing on synthetic dense tiles");
  bench->add_option("--sizes", bn.sizes, "Tile sides")->capture_default_str();
  bench->add_option("--repetitions", bn.repetitions)->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--tiles", bn.tiles, "Tiles for the throughput run (0: skip)")->capture_default_str();
  bench->add_option("--threads", bn.threads, "Workers for the throughput run")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bn.seed)->capture_default_str();
  bench->add_option("--out", report_out, "Also write the JSON report to this file");
  add_postproc_flags(bench, bn.config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInputError;
  }

  if (post->parsed()) return cmd_postprocess(pp, std::cout, std::cerr);
  if (eval->parsed()) return cmd_evaluate(ev, std::cout, std::cerr);
  if (gen->parsed()) return cmd_gen_targets(gt, std::cout, std::cerr);
  try {
    if (loss->parsed()) return with_report(report_out, [&](std::ostream& o) { return cmd_loss_check(lc, o); });
    if (toy->parsed()) return with_report(report_out, [&](std::ostream& o) { return cmd_toy_distill(td, o); });
    if (bench->parsed()) return with_report(report_out, [&](std::ostream& o) { return cmd_bench(bn, o); });
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return kExitInputError;
  }
  return kExitInputError;
}
