#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "hoverpost/error.hpp"
#include "hoverpost/commands.hpp"
#include "hoverpost/maps_io.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace hoverpost;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Streams {
  std::ostringstream out, err;
};

void save(const fs::path& p, const InstanceMap& m) { write_npy(from_tensor(m), p); }

// Instances plus per-pixel types, H x W x 2.
void save_typed(const fs::path& p, const InstanceMap& m, const ClassTable& classes) {
  Tensor<std::int32_t> t(m.height(), m.width(), 2, 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    t[2 * i] = static_cast<std::int32_t>(m[i]);
    t[2 * i + 1] = m[i] ? classes.at(m[i]) : 0;
  }
  write_npy(from_tensor(t), p);
}

json read_json(const fs::path& p) { return json::parse(test::read_bytes(p)); }

}  // namespace

TEST(Postprocess, ZeroNpMap) {
  test::TempDir d;
  write_npy(from_tensor(Tensor<float>(32, 32, 1, 0.0f)), d.path / "np.npy");
  write_npy(from_tensor(Tensor<float>(32, 32, 2, 0.0f)), d.path / "hv.npy");
  PostprocessArgs a{d.path / "np.npy", d.path / "hv.npy", std::nullopt, d.path / "out"};
  Streams s;
  ASSERT_EQ(cmd_postprocess(a, s.out, s.err), kExitOk) << s.err.str();
  EXPECT_EQ(test::read_bytes(d.path / "out.json"), "{\"version\":1,\"nuclei\":[]}\n");
  EXPECT_EQ(to_instance_map(read_npy(d.path / "out.npy")), InstanceMap(32, 32, 1, 0u));
}

TEST(Postprocess, RoundTripFixture) {
  test::TempDir d;
  Rng rng(3);
  const InstanceMap truth = synth_ellipses(96, 96, {}, rng);
  const ClassTable classes = synth_classes(truth.view(), 3, rng);
  write_npy(from_tensor(synth_np_probs(truth.view())), d.path / "np.npy");
  write_npy(from_tensor(gen_hv_targets(truth.view())), d.path / "hv.npy");
  write_npy(from_tensor(synth_tp_probs(truth.view(), classes, 3)), d.path / "tp.npy");
  PostprocessArgs a{d.path / "np.npy", d.path / "hv.npy", d.path / "tp.npy", d.path / "out"};
  a.probs = true;
  a.overlay = d.path / "overlay.png";
  Streams s;
  ASSERT_EQ(cmd_postprocess(a, s.out, s.err), kExitOk) << s.err.str();
  // identical up to a relabeling
  const InstanceMap got = to_instance_map(read_npy(d.path / "out.npy"));
  std::map<std::uint32_t, std::uint32_t> to_truth, from_truth;
  for (std::size_t i = 0; i < got.size(); ++i) {
    ASSERT_EQ(got[i] == 0, truth[i] == 0) << i;
    if (!got[i]) continue;
    EXPECT_EQ(to_truth.emplace(got[i], truth[i]).first->second, truth[i]);
    EXPECT_EQ(from_truth.emplace(truth[i], got[i]).first->second, got[i]);
  }
  const auto recs = read_instances_json(d.path / "out.json");
  ASSERT_EQ(recs.size(), classes.size());
  for (const auto& r : recs) EXPECT_EQ(r.class_id, classes.at(to_truth.at(r.id)));
  EXPECT_EQ(read_png(d.path / "overlay.png").height(), 96);
}

TEST(Postprocess, LogitInputs) {
  test::TempDir d;
  InstanceMap m(24, 24, 1, 0u);
  test::fill_rect(m, 4, 4, 8, 8, 1);
  Tensor<float> np(24, 24, 2, 0.0f);
  for (std::size_t i = 0; i < m.size(); ++i) np[2 * i + 1] = m[i] ? 3.0f : -3.0f;
  write_npy(from_tensor(np), d.path / "np.npy");
  write_npy(from_tensor(gen_hv_targets(m.view())), d.path / "hv.npy");
  PostprocessArgs a{d.path / "np.npy", d.path / "hv.npy", std::nullopt, d.path / "out"};
  Streams s;
  ASSERT_EQ(cmd_postprocess(a, s.out, s.err), kExitOk) << s.err.str();
  EXPECT_EQ(to_instance_map(read_npy(d.path / "out.npy")), m);
}

TEST(Postprocess, MismatchedShapes) {
  test::TempDir d;
  write_npy(from_tensor(Tensor<float>(16, 16, 1, 0.0f)), d.path / "np.npy");
  write_npy(from_tensor(Tensor<float>(16, 20, 2, 0.0f)), d.path / "hv.npy");
  PostprocessArgs a{d.path / "np.npy", d.path / "hv.npy", std::nullopt, d.path / "out"};
  Streams s;
  EXPECT_EQ(cmd_postprocess(a, s.out, s.err), kExitInputError);
  EXPECT_NE(s.err.str().find("16x16"), std::string::npos) << s.err.str();
  EXPECT_NE(s.err.str().find("16x20"), std::string::npos) << s.err.str();
}

TEST(Postprocess, BadFile) {
  test::TempDir d;
  std::ofstream(d.path / "np.npy") << "not an npy file";
  PostprocessArgs a{d.path / "np.npy", d.path / "np.npy", std::nullopt, d.path / "out"};
  Streams s;
  EXPECT_EQ(cmd_postprocess(a, s.out, s.err), kExitInputError);
  EXPECT_NE(s.err.str().find("BadMagic"), std::string::npos) << s.err.str();
}

class EvaluateDirs : public ::testing::Test {
 protected:
  test::TempDir d;
  fs::path gt = d.path / "gt", pred = d.path / "pred";
  void SetUp() override {
    fs::create_directories(gt);
    fs::create_directories(pred);
  }
};

TEST_F(EvaluateDirs, PerfectPrediction) {
  Rng rng(6);
  for (int i = 0; i < 3; ++i) {
    const InstanceMap m = synth_ellipses(64, 64, {}, rng);
    const ClassTable c = synth_classes(m.view(), 3, rng);
    save_typed(gt / ("tile" + std::to_string(i) + ".npy"), m, c);
    save_typed(pred / ("tile" + std::to_string(i) + ".npy"), m, c);
  }
  EvaluateArgs a{gt, pred, d.path / "report.json"};
  Streams s;
  ASSERT_EQ(cmd_evaluate(a, s.out, s.err), kExitOk) << s.err.str();
  const json r = read_json(d.path / "report.json");
  EXPECT_EQ(r["mean"]["pq_b"], 1.0);
  EXPECT_EQ(r["mean"]["pq_m"], 1.0);
  EXPECT_EQ(r["mean"]["f_d"], 1.0);
  for (const auto& [k, v] : r["mean"]["per_class_f"].items()) EXPECT_EQ(v, 1.0) << k;
  EXPECT_EQ(r["tiles"].size(), 3u);
  EXPECT_EQ(r["tiles"][0]["name"], "tile0");
}

TEST_F(EvaluateDirs, ConstructedPq) {
  InstanceMap g(16, 16, 1, 0u), p(16, 16, 1, 0u);
  test::fill_rect(g, 2, 2, 1, 10, 1);
  test::fill_rect(p, 2, 2, 1, 6, 1);
  save(gt / "a.npy", g);
  save(pred / "a.npy", p);
  EvaluateArgs a{gt, pred, d.path / "report.json"};
  Streams s;
  ASSERT_EQ(cmd_evaluate(a, s.out, s.err), kExitOk) << s.err.str();
  const json r = read_json(d.path / "report.json");
  EXPECT_NEAR(r["mean"]["pq_b"].get<double>(), 0.6, 1e-12);
  EXPECT_TRUE(r["mean"]["pq_m"].is_null());
}

TEST_F(EvaluateDirs, MissingCounterpart) {
  InstanceMap g(8, 8, 1, 0u);
  save(gt / "a.npy", g);
  save(gt / "b.npy", g);
  save(pred / "a.npy", g);
  EvaluateArgs a{gt, pred, d.path / "report.json"};
  Streams s;
  EXPECT_EQ(cmd_evaluate(a, s.out, s.err), kExitInputError);
  EXPECT_NE(s.err.str().find("b.npy"), std::string::npos);
}

TEST_F(EvaluateDirs, ConsepRemap) {
  // Fibroblast and muscle in the ground truth, "other" in the prediction:
  // all three are Miscellaneous after remapping.
  InstanceMap m(32, 32, 1, 0u);
  test::fill_rect(m, 2, 2, 6, 6, 1);
  test::fill_rect(m, 15, 15, 6, 6, 2);
  save_typed(gt / "a.npy", m, {{1, 5}, {2, 6}});
  save_typed(pred / "a.npy", m, {{1, 1}, {2, 1}});
  EvaluateArgs a{gt, pred, d.path / "raw.json"};
  Streams s;
  ASSERT_EQ(cmd_evaluate(a, s.out, s.err), kExitOk) << s.err.str();
  EXPECT_LT(read_json(d.path / "raw.json")["mean"]["pq_m"].get<double>(), 1.0);
  a.report = d.path / "remapped.json";
  a.remap = "consep";
  ASSERT_EQ(cmd_evaluate(a, s.out, s.err), kExitOk) << s.err.str();
  const json r = read_json(d.path / "remapped.json");
  EXPECT_EQ(r["mean"]["pq_m"], 1.0);
  EXPECT_EQ(r["mean"]["per_class_pq"], json({{"4", 1.0}}));
}

TEST_F(EvaluateDirs, ReportIsByteStable) {
  Rng rng(8);
  for (int i = 0; i < 4; ++i) {
    const InstanceMap m = synth_ellipses(64, 64, {}, rng);
    save_typed(gt / ("t" + std::to_string(i) + ".npy"), m, synth_classes(m.view(), 4, rng));
    const InstanceMap q = synth_ellipses(64, 64, {}, rng);
    save_typed(pred / ("t" + std::to_string(i) + ".npy"), q, synth_classes(q.view(), 4, rng));
  }
  Streams s;
  EvaluateArgs a{gt, pred, d.path / "r1.json"};
  ASSERT_EQ(cmd_evaluate(a, s.out, s.err), kExitOk);
  a.report = d.path / "r2.json";
  a.threads = 3;
  ASSERT_EQ(cmd_evaluate(a, s.out, s.err), kExitOk);
  EXPECT_EQ(test::read_bytes(d.path / "r1.json"), test::read_bytes(d.path / "r2.json"));
}

TEST_F(EvaluateDirs, RecordSidecarsSupplyClasses) {
  InstanceMap m(16, 16, 1, 0u);
  test::fill_rect(m, 1, 1, 4, 4, 7);
  save(gt / "a.npy", m);
  save(pred / "a.npy", m);
  NucleusRecord r;
  r.id = 7;
  r.class_id = 2;
  r.class_prob = 1.0f;
  r.bbox = {1, 1, 4, 4};
  r.contour = {{1, 1}};
  const std::vector<NucleusRecord> recs{r};
  write_instances_json(recs, gt / "a.json");
  write_instances_json(recs, pred / "a.json");
  EvaluateArgs a{gt, pred, d.path / "report.json"};
  Streams s;
  ASSERT_EQ(cmd_evaluate(a, s.out, s.err), kExitOk) << s.err.str();
  EXPECT_EQ(read_json(d.path / "report.json")["mean"]["per_class_pq"], json({{"2", 1.0}}));
}

TEST(GenTargets, SingleMap) {
  test::TempDir d;
  InstanceMap m(12, 12, 1, 0u);
  test::fill_rect(m, 1, 1, 1, 5, 4);
  save(d.path / "inst.npy", m);
  GenTargetsArgs a;
  a.instances = d.path / "inst.npy";
  a.out = d.path / "t";
  Streams s;
  ASSERT_EQ(cmd_gen_targets(a, s.out, s.err), kExitOk) << s.err.str();
  const Tensor<float> hv = to_tensor<float>(read_npy(d.path / "t_hv.npy"));
  EXPECT_EQ(hv(1, 1, 0), -1.0f);
  EXPECT_EQ(hv(1, 5, 0), 1.0f);
  const Tensor<std::int32_t> tp = to_tensor<std::int32_t>(read_npy(d.path / "t_tp.npy"));
  EXPECT_EQ(tp(1, 3), 1);
}

TEST(GenTargets, PanNukeFold) {
  test::TempDir d;
  const std::size_t n = 2, h = 16, w = 16;
  std::vector<std::uint8_t> img(n * h * w * 3, 128);
  std::vector<double> masks(n * h * w * 6, 0.0);
  auto at = [&](std::size_t t, std::size_t r, std::size_t c, std::size_t k) -> double& {
    return masks[((t * h + r) * w + c) * 6 + k];
  };
  for (std::size_t r = 2; r < 5; ++r) {
    for (std::size_t c = 2; c < 5; ++c) at(0, r, c, 1) = 11;
  }
  at(1, 8, 8, 0) = 3;
  at(1, 8, 8, 4) = 4;  // collision
  write_npy(NpyArray::from<std::uint8_t>({n, h, w, 3}, img), d.path / "images.npy");
  write_npy(NpyArray::from<double>({n, h, w, 6}, masks), d.path / "masks.npy");
  GenTargetsArgs a;
  a.fold = {d.path / "images.npy", d.path / "masks.npy", d.path / "missing_types.npy"};
  a.out = d.path / "out";
  Streams s;
  EXPECT_EQ(cmd_gen_targets(a, s.out, s.err), kExitInputError);
  a.fold[2] = d.path / "types.npy";
  test::write_unicode_npy(d.path / "types.npy", {"Breast", "Colon"}, 6);
  Streams s2;
  ASSERT_EQ(cmd_gen_targets(a, s2.out, s2.err), kExitOk) << s2.err.str();
  EXPECT_NE(s2.err.str().find("1 pixels"), std::string::npos) << s2.err.str();
  const Tensor<std::int32_t> tp = to_tensor<std::int32_t>(read_npy(d.path / "out" / "tile_00000_tp.npy"));
  EXPECT_EQ(tp(3, 3), 2);
  EXPECT_TRUE(fs::exists(d.path / "out" / "class_weights.json"));
}

TEST(ToyDistill, DeterministicAndPasses) {
  const ToyDistillReport a = run_toy_distill({});
  const ToyDistillReport b = run_toy_distill({});
  EXPECT_TRUE(a.passed());
  EXPECT_EQ(toy_report_json(a), toy_report_json(b));
}

TEST(ToyDistill, AlphaOneIsStudentOnly) {
  ToyDistillArgs args;
  args.alpha = 1.0;
  args.steps = 20;
  const ToyDistillReport r = run_toy_distill(args);
  EXPECT_EQ(r.initial_loss, r.initial_student);
  EXPECT_EQ(r.final_loss, r.final_student);
  EXPECT_GT(r.final_distill, 0.0);
}

TEST(Bench, EmptyAndSmallTiles) {
  BenchArgs args;
  args.sizes = {16, 256};
  args.repetitions = 2;
  args.tiles = 0;
  const BenchReport r = run_bench(args);
  ASSERT_EQ(r.sizes.size(), 2u);
  EXPECT_EQ(r.sizes[0].instances, 0);
  EXPECT_EQ(r.sizes[0].found, 0);
  EXPECT_EQ(r.sizes[1].found, r.sizes[1].instances);
  EXPECT_GT(r.sizes[1].p50_ms, 0.0);
}

TEST(Threads, EnvironmentFallback) {
  ::setenv("HOVERPOST_THREADS", "3", 1);
  EXPECT_EQ(default_threads(), 3);
  ::setenv("HOVERPOST_THREADS", "zero", 1);
  EXPECT_EQ(default_threads(), 1);
  ::unsetenv("HOVERPOST_THREADS");
  EXPECT_EQ(default_threads(), 1);
}
