#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "json.hpp"

#include "hoverpost/commands.hpp"
#include "hoverpost/parallel.hpp"

namespace hoverpost {

namespace {

constexpr int kBenchClasses = 5;
constexpr int kBenchSpacing = 40;

using Clock = std::chrono::steady_clock;

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

int process(const BenchTile& t, const PostprocConfig& cfg) {
  const InstanceMap inst = instance_segment(t.np_probs.view(), t.hv.view(), cfg);
  const Classification cls = classify_instances(inst.view(), t.tp_probs.view());
  return static_cast<int>(cls.classes.size());
}

}  // namespace

BenchTile make_bench_tile(int size, std::uint64_t seed) {
  Rng rng(seed);
  BenchTile t;
  t.truth = size >= kBenchSpacing ? synth_dense_field(size, size, kBenchSpacing, rng) : InstanceMap(size, size, 1, 0u);
  const ClassTable classes = synth_classes(t.truth.view(), kBenchClasses, rng);
  t.np_probs = synth_np_probs(t.truth.view());
  t.hv = gen_hv_targets(t.truth.view());
  t.tp_probs = synth_tp_probs(t.truth.view(), classes, kBenchClasses);
  return t;
}

BenchReport run_bench(const BenchArgs& args) {
  BenchReport rep;
  rep.threads = std::max(args.threads, 1);
  for (int size : args.sizes) {
    const BenchTile tile = make_bench_tile(size, args.seed);
    BenchSize s;
    s.size = size;
    for (std::uint32_t l : tile.truth.span()) s.instances = std::max(s.instances, static_cast<int>(l));
    std::vector<double> ms;
    for (int r = 0; r < std::max(args.repetitions, 1); ++r) {
      const auto t0 = Clock::now();
      s.found = process(tile, args.config);
      ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    s.p50_ms = percentile(ms, 0.5);
    s.p95_ms = percentile(ms, 0.95);
    rep.sizes.push_back(s);
  }

  if (args.tiles > 0) {
    const int size = args.sizes.empty() ? 1000 : *std::max_element(args.sizes.begin(), args.sizes.end());
    std::vector<BenchTile> tiles;
    for (int i = 0; i < args.tiles; ++i) tiles.push_back(make_bench_tile(size, args.seed + 1 + i));
    rep.tiles = args.tiles;
    auto throughput = [&](int workers) {
      const auto t0 = Clock::now();
      parallel_for(tiles.size(), workers, [&](std::size_t i) { process(tiles[i], args.config); });
      return static_cast<double>(tiles.size()) / std::chrono::duration<double>(Clock::now() - t0).count();
    };
    rep.single_throughput = throughput(1);
    rep.multi_throughput = rep.threads > 1 ? throughput(rep.threads) : rep.single_throughput;
  }
  return rep;
}

int cmd_bench(const BenchArgs& args, std::ostream& out) {
  const BenchReport rep = run_bench(args);
  nlohmann::json sizes = nlohmann::json::array();
  for (const auto& s : rep.sizes) {
    sizes.push_back({{"size", s.size}, {"instances", s.instances}, {"found", s.found}, {"p50_ms", s.p50_ms},
                     {"p95_ms", s.p95_ms}});
  }
  const nlohmann::json doc = {{"sizes", sizes},
                              {"threads", rep.threads},
                              {"tiles", rep.tiles},
                              {"single_tiles_per_s", rep.single_throughput},
                              {"multi_tiles_per_s", rep.multi_throughput},
                              {"speedup", rep.speedup()}};
  out << doc.dump(2) << '\n';
  return kExitOk;
}

}  // namespace hoverpost
