#include "hoverpost/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "hoverpost/maps_io.hpp"
#include "hoverpost/npy.hpp"

namespace hoverpost {

namespace fs = std::filesystem;

int default_threads() {
  if (const char* env = std::getenv("HOVERPOST_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1 && v <= 1024) return static_cast<int>(v);
  }
  return 1;
}

namespace {

Tensor<float> softmax_f(const Tensor<float>& logits) { return softmax_channels<float>(logits.view()); }

// H x W probabilities, or H x W x 2 logits (probabilities with `probs`).
Tensor<float> load_np(const fs::path& path, bool probs) {
  Tensor<float> t = to_tensor<float>(read_npy(path));
  if (t.channels() == 1) return t;
  if (t.channels() != 2) throw Error(ErrorCode::kShapeMismatch, "np map must be H x W or H x W x 2, got " + t.shape().str());
  const Tensor<float> p = probs ? t : softmax_f(t);
  Tensor<float> fg(t.height(), t.width(), 1, 0.0f);
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = p[i * 2 + 1];
  return fg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw Error(ErrorCode::kIoFailure, "write failed: " + path.string());
}

fs::path with_suffix(const fs::path& prefix, const std::string& suffix) {
  return fs::path(prefix.string() + suffix);
}

// Majority non-zero type per instance; ties -> lower type, no votes -> 0.
ClassTable vote_types(InstanceView instances, TensorView<const std::int32_t> types) {
  std::map<std::uint32_t, std::map<int, std::size_t>> votes;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!instances[i]) continue;
    auto& v = votes[instances[i]];
    if (types[i] > 0) ++v[types[i]];
  }
  ClassTable out;
  for (const auto& [label, v] : votes) {
    int best = 0;
    std::size_t most = 0;
    for (const auto& [t, n] : v) {
      if (n > most) best = t, most = n;
    }
    out[label] = best;
  }
  return out;
}

std::pair<InstanceMap, Tensor<std::int32_t>> split_instances_types(const NpyArray& array) {
  if (array.shape.size() != 3 || array.shape[2] != 2)
    throw Error(ErrorCode::kShapeMismatch, "expected H x W x 2 (instances, types), got " + array.shape_str());
  const Tensor<double> t = to_tensor<double>(array);
  InstanceMap inst(t.height(), t.width(), 1, 0u);
  Tensor<std::int32_t> types(t.height(), t.width(), 1, 0);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    const double l = t[i * 2], c = t[i * 2 + 1];
    if (l < 0 || l != std::floor(l) || c < 0 || c != std::floor(c))
      throw Error(ErrorCode::kUnsupportedDtype, "instance and type values must be non-negative integers");
    inst[i] = static_cast<std::uint32_t>(l);
    types[i] = static_cast<std::int32_t>(c);
  }
  return {std::move(inst), std::move(types)};
}

std::optional<ClassScheme> parse_scheme(const std::string& name) {
  if (name == "none") return std::nullopt;
  if (name == "pannuke") return ClassScheme::kPanNuke;
  if (name == "consep") return ClassScheme::kCoNSeP;
  throw Error(ErrorCode::kInvalidArgument, "unknown remap scheme '" + name + "' (pannuke, consep, none)");
}

}  // namespace

int cmd_postprocess(const PostprocessArgs& args, std::ostream& out, std::ostream& err) {
  try {
    args.config.validate();
    const Tensor<float> np = load_np(args.np, args.probs);
    const Tensor<float> hv = to_tensor<float>(read_npy(args.hv));
    if (!hv.shape().same_plane(np.shape()) || hv.channels() != 2)
      throw Error(ErrorCode::kShapeMismatch, "np " + np.shape().str() + " and hv " + hv.shape().str() + " do not match");
    const InstanceMap inst = instance_segment(np.view(), hv.view(), args.config);

    Classification cls;
    if (args.tp) {
      Tensor<float> tp = to_tensor<float>(read_npy(*args.tp));
      if (!tp.shape().same_plane(np.shape()))
        throw Error(ErrorCode::kShapeMismatch, "np " + np.shape().str() + " and tp " + tp.shape().str() + " do not match");
      if (!args.probs) tp = softmax_f(tp);
      cls = classify_instances(inst.view(), tp.view());
    } else {
      // Class 0 with the mean foreground probability.
      std::map<std::uint32_t, std::pair<double, std::size_t>> acc;
      for (std::size_t i = 0; i < inst.size(); ++i) {
        if (!inst[i]) continue;
        auto& a = acc[inst[i]];
        a.first += np[i];
        ++a.second;
      }
      for (const auto& [l, a] : acc) {
        cls.classes[l] = 0;
        cls.probs[l] = static_cast<float>(a.first / static_cast<double>(a.second));
      }
    }

    const auto records = extract_records(inst.view(), cls.classes, cls.probs);
    write_npy(from_tensor(inst), with_suffix(args.out, ".npy"));
    write_instances_json(records, with_suffix(args.out, ".json"));
    if (args.overlay) {
      TileImage image(np.height(), np.width());
      if (args.image) {
        image = to_tile_image(read_npy(*args.image));
        if (image.height() != np.height() || image.width() != np.width())
          throw Error(ErrorCode::kShapeMismatch, "image " + image.rgb.shape().str() + " and np " + np.shape().str() +
                                                     " do not match");
      }
      write_overlay_png(image, inst.view(), cls.classes, *args.overlay);
    }
    out << records.size() << " nuclei\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "postprocess: " << e.what() << '\n';
    return kExitInputError;
  }
}

EvalTile load_eval_tile(const fs::path& npy, bool& has_classes) {
  EvalTile tile;
  const NpyArray a = read_npy(npy);
  InstanceMap inst;
  ClassTable classes;
  if (a.shape.size() == 3 && a.shape[2] == 2) {
    auto [m, types] = split_instances_types(a);
    classes = vote_types(m.view(), types.view());
    inst = std::move(m);
    has_classes = true;
  } else {
    inst = to_instance_map(a);
    fs::path sidecar = npy;
    sidecar.replace_extension(".json");
    has_classes = fs::exists(sidecar);
    if (has_classes) {
      for (const auto& r : read_instances_json(sidecar)) classes[r.id] = r.class_id;
    }
  }
  // Labels need not be contiguous on disk; classes follow the renumbering.
  const InstanceMap renum = renumber_labels(inst.view());
  ClassTable renum_classes;
  for (std::size_t i = 0; i < inst.size(); ++i) {
    if (!inst[i] || renum_classes.count(renum[i])) continue;
    auto it = classes.find(inst[i]);
    if (has_classes && it == classes.end())
      throw Error(ErrorCode::kMissingClass, npy.string() + ": no class for label " + std::to_string(inst[i]));
    renum_classes[renum[i]] = has_classes ? it->second : 0;
  }
  tile.name = npy.stem().string();
  tile.gt = renum;
  tile.gt_classes = std::move(renum_classes);
  return tile;
}

int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const auto gt_scheme = parse_scheme(args.remap);
    const auto pred_scheme = args.pred_remap ? parse_scheme(*args.pred_remap) : gt_scheme;
    if (gt_scheme.has_value() != pred_scheme.has_value())
      throw Error(ErrorCode::kInvalidArgument, "remap must be set for both gt and pred or neither");
    if (!fs::is_directory(args.gt_dir)) throw Error(ErrorCode::kIoFailure, "not a directory: " + args.gt_dir.string());
    if (!fs::is_directory(args.pred_dir))
      throw Error(ErrorCode::kIoFailure, "not a directory: " + args.pred_dir.string());

    std::vector<fs::path> names;
    for (const auto& e : fs::directory_iterator(args.gt_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".npy") names.push_back(e.path().filename());
    }
    std::sort(names.begin(), names.end());
    std::vector<std::string> missing;
    for (const auto& n : names) {
      if (!fs::exists(args.pred_dir / n)) missing.push_back(n.string());
    }
    for (const auto& e : fs::directory_iterator(args.pred_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".npy" && !fs::exists(args.gt_dir / e.path().filename()))
        missing.push_back(e.path().filename().string() + " (no ground truth)");
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw Error(ErrorCode::kIoFailure, "missing counterpart tiles: " + list);
    }
    if (names.empty()) throw Error(ErrorCode::kIoFailure, "no .npy tiles in " + args.gt_dir.string());

    std::vector<EvalTile> tiles(names.size());
    bool all_classes = true;
    int max_class = 0;
    const ClassMapping mapping = ClassMapping::to_common();
    for (std::size_t i = 0; i < names.size(); ++i) {
      bool gt_cls = false, pred_cls = false;
      EvalTile gt = load_eval_tile(args.gt_dir / names[i], gt_cls);
      EvalTile pred = load_eval_tile(args.pred_dir / names[i], pred_cls);
      if (!gt.gt.shape().same_plane(pred.gt.shape()))
        throw Error(ErrorCode::kShapeMismatch, names[i].string() + ": gt " + gt.gt.shape().str() + " vs pred " +
                                                   pred.gt.shape().str());
      all_classes = all_classes && gt_cls && pred_cls;
      if (gt_scheme) {
        gt.gt_classes = remap_classes({*gt_scheme, gt.gt_classes}, mapping).classes;
        pred.gt_classes = remap_classes({*pred_scheme, pred.gt_classes}, mapping).classes;
      }
      for (const auto* t : {&gt.gt_classes, &pred.gt_classes}) {
        for (const auto& [l, c] : *t) max_class = std::max(max_class, c);
      }
      tiles[i].name = gt.name;
      tiles[i].gt = std::move(gt.gt);
      tiles[i].gt_classes = std::move(gt.gt_classes);
      tiles[i].pred = std::move(pred.gt);
      tiles[i].pred_classes = std::move(pred.gt_classes);
    }

    EvalOptions opts;
    opts.radius = args.radius;
    opts.threads = std::max(args.threads, 1);
    if (all_classes) opts.num_classes = args.num_classes > 0 ? args.num_classes : gt_scheme ? 4 : max_class;
    const DatasetReport report = evaluate_dataset(tiles, opts);
    write_text(args.report, report_json(report) + "\n");

    out << std::fixed << std::setprecision(4) << "tiles " << report.tiles.size() << "  pq_b " << report.mean.pq_b;
    if (report.mean.pq_m) out << "  pq_m " << *report.mean.pq_m;
    out << "  f_d " << report.mean.f_d << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "evaluate: " << e.what() << '\n';
    return kExitInputError;
  }
}

namespace {

void write_targets(const TargetMaps& t, const fs::path& prefix) {
  write_npy(from_tensor(t.np_target), with_suffix(prefix, "_np.npy"));
  write_npy(from_tensor(t.hv_target), with_suffix(prefix, "_hv.npy"));
  write_npy(from_tensor(t.tp_target), with_suffix(prefix, "_tp.npy"));
}

std::string weights_json(const std::vector<std::size_t>& counts, const std::vector<float>& weights) {
  std::ostringstream s;
  s << "{\"counts\":[";
  for (std::size_t i = 0; i < counts.size(); ++i) s << (i ? "," : "") << counts[i];
  s << "],\"weights\":[";
  for (std::size_t i = 0; i < weights.size(); ++i) s << (i ? "," : "") << std::setprecision(9) << weights[i];
  s << "]}\n";
  return s.str();
}

}  // namespace

int cmd_gen_targets(const GenTargetsArgs& args, std::ostream& out, std::ostream& err) {
  try {
    if (args.instances.has_value() == !args.fold.empty())
      throw Error(ErrorCode::kInvalidArgument, "give either an instance map or --fold IMAGES MASKS TYPES");
    if (args.instances) {
      const NpyArray a = read_npy(*args.instances);
      InstanceMap inst;
      ClassTable classes;
      if (a.shape.size() == 3 && a.shape[2] == 2) {
        auto [m, types] = split_instances_types(a);
        classes = vote_types(m.view(), types.view());
        inst = std::move(m);
      } else {
        inst = to_instance_map(a);
        for (std::uint32_t l : inst.span()) {
          if (l) classes[l] = 1;
        }
      }
      const InstanceMap renum = renumber_labels(inst.view());
      ClassTable renum_classes;
      for (std::size_t i = 0; i < inst.size(); ++i) {
        if (inst[i]) renum_classes[renum[i]] = classes.at(inst[i]);
      }
      write_targets(gen_targets(renum.view(), renum_classes), args.out);
      out << renum_classes.size() << " instances\n";
      return kExitOk;
    }

    if (args.fold.size() != 3) throw Error(ErrorCode::kInvalidArgument, "--fold takes IMAGES MASKS TYPES");
    const PanNukeFold fold = load_pannuke_fold(args.fold[0], args.fold[1], args.fold[2]);
    if (fold.collisions > 0)
      err << "gen-targets: warning: " << fold.collisions << " pixels claimed by more than one class channel\n";
    fs::create_directories(args.out);
    std::vector<std::size_t> counts(kPanNukeClassChannels + 1, 0);
    for (std::size_t i = 0; i < fold.tiles.size(); ++i) {
      const PanNukeTile& tile = fold.tiles[i];
      ClassTable types;
      for (const auto& [l, ch] : tile.classes) types[l] = ch + 1;
      const TargetMaps t = gen_targets(tile.instances.view(), types);
      for (std::int32_t v : t.tp_target.span()) ++counts[static_cast<std::size_t>(v)];
      std::ostringstream name;
      name << "tile_" << std::setw(5) << std::setfill('0') << i;
      write_targets(t, args.out / name.str());
      write_npy(from_tensor(tile.instances), args.out / (name.str() + "_inst.npy"));
    }
    const auto weights = compute_class_weights(counts, static_cast<int>(counts.size()));
    write_text(args.out / "class_weights.json", weights_json(counts, weights));
    out << fold.tiles.size() << " tiles\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "gen-targets: " << e.what() << '\n';
    return kExitInputError;
  }
}

LossFixture make_loss_fixture(int size, int num_classes, Rng& rng) {
  LossFixture f{PredictionMaps<double>(size, size, num_classes), PredictionMaps<double>(size, size, num_classes), {}, {}};
  for (auto* t : {&f.student.np_logits, &f.student.tp_logits, &f.teacher.np_logits, &f.teacher.tp_logits}) {
    for (double& v : t->span()) v = 1.5 * rng.normal();
  }
  for (auto* t : {&f.student.hv, &f.teacher.hv}) {
    for (double& v : t->span()) v = rng.uniform(-1.0, 1.0);
  }

  // A few axis-aligned blobs so the masked gradient term has support.
  InstanceMap inst(size, size, 1, 0u);
  const int blobs = rng.integer(1, 3);
  for (int b = 1; b <= blobs; ++b) {
    const int h = rng.integer(2, std::max(2, size / 2)), w = rng.integer(2, std::max(2, size / 2));
    const int r0 = rng.integer(0, size - h), c0 = rng.integer(0, size - w);
    for (int r = r0; r < r0 + h; ++r) {
      for (int c = c0; c < c0 + w; ++c) inst(r, c) = static_cast<std::uint32_t>(b);
    }
  }
  const InstanceMap renum = renumber_labels(inst.view());
  ClassTable classes;
  for (std::uint32_t l : renum.span()) {
    if (l && !classes.count(l)) classes[l] = rng.integer(1, num_classes - 1);
  }
  f.gt = gen_targets(renum.view(), classes);

  f.config.alpha = rng.uniform(0.2, 0.8);
  f.config.temperature = 1.0 + 4.0 * rng.uniform();
  f.config.np_weights = {static_cast<float>(rng.uniform(0.5, 1.5)), static_cast<float>(rng.uniform(0.5, 1.5))};
  f.config.tp_weights.clear();
  for (int k = 0; k < num_classes; ++k) f.config.tp_weights.push_back(static_cast<float>(rng.uniform(0.5, 1.5)));
  return f;
}

LossCheckReport run_loss_check(const LossCheckArgs& args) {
  const auto start = std::chrono::steady_clock::now();
  LossCheckReport rep;
  Rng rng(args.seed);
  const double h = args.step;
  for (int n = 0; n < args.fixtures; ++n) {
    LossFixture f = make_loss_fixture(args.size, args.num_classes, rng);
    const TargetView gt(f.gt);
    auto [base, grad] = combined_loss_grad<double>(f.student.view(), gt, f.teacher.view(), f.config);
    if (args.corrupt_gradient && n == 0) grad.d_hv[0] += 1e-2;

    auto check = [&](Tensor<double>& param, const Tensor<double>& analytic, double& worst) {
      for (std::size_t i = 0; i < param.size(); ++i) {
        const double keep = param[i];
        param[i] = keep + h;
        const double up = combined_loss<double>(f.student.view(), gt, f.teacher.view(), f.config).combined;
        param[i] = keep - h;
        const double down = combined_loss<double>(f.student.view(), gt, f.teacher.view(), f.config).combined;
        param[i] = keep;
        const double fd = (up - down) / (2.0 * h);
        const double a = analytic[i];
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), kGradCheckFloor});
        worst = std::max(worst, rel);
      }
    };
    check(f.student.np_logits, grad.d_np_logits, rep.max_rel_np);
    check(f.student.hv, grad.d_hv, rep.max_rel_hv);
    check(f.student.tp_logits, grad.d_tp_logits, rep.max_rel_tp);
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

int cmd_loss_check(const LossCheckArgs& args, std::ostream& out) {
  const LossCheckReport rep = run_loss_check(args);
  const auto line = [&](const char* head, double v) {
    out << head << "  max_rel_err " << std::scientific << std::setprecision(3) << v << "  "
        << (v <= args.tolerance ? "ok" : "FAIL") << '\n';
  };
  line("np", rep.max_rel_np);
  line("hv", rep.max_rel_hv);
  line("tp", rep.max_rel_tp);
  const bool ok = std::max({rep.max_rel_np, rep.max_rel_hv, rep.max_rel_tp}) <= args.tolerance;
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace hoverpost
