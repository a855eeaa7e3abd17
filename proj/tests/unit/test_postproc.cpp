#include <gtest/gtest.h>

#include <set>

#include "hoverpost/error.hpp"
#include "hoverpost/metrics.hpp"
#include "hoverpost/postproc.hpp"
#include "hoverpost/synth.hpp"
#include "hoverpost/targets.hpp"
#include "test_util.hpp"

using namespace hoverpost;

namespace {

std::uint32_t max_label(InstanceView m) {
  std::uint32_t k = 0;
  for (std::uint32_t l : m.span()) k = std::max(k, l);
  return k;
}

InstanceMap disk(int size, double radius) {
  InstanceMap m(size, size, 1, 0u);
  const double c = (size - 1) / 2.0;
  for (int r = 0; r < size; ++r) {
    for (int q = 0; q < size; ++q) {
      if ((r - c) * (r - c) + (q - c) * (q - c) <= radius * radius) m(r, q) = 1;
    }
  }
  return m;
}

}  // namespace

TEST(Components, FourConnectivity) {
  Mask m(3, 3, 1, 0);
  m(0, 0) = m(1, 1) = m(2, 1) = m(2, 2) = 1;
  const InstanceMap l = label_components(m.view());
  EXPECT_EQ(l, test::make_map({{1, 0, 0}, {0, 2, 0}, {0, 2, 2}}));
}

TEST(Components, RemoveSmallRelabels) {
  const InstanceMap m = test::make_map({{3, 3, 0, 5}, {0, 0, 0, 0}, {7, 7, 7, 0}});
  EXPECT_EQ(remove_small(m.view(), 2), test::make_map({{1, 1, 0, 0}, {0, 0, 0, 0}, {2, 2, 2, 0}}));
}

TEST(Energy, FlatFieldIsOneOnMask) {
  Tensor<float> hv(7, 7, 2, 0.3f);
  Mask mask(7, 7, 1, 0);
  for (int r = 1; r < 6; ++r) {
    for (int c = 1; c < 6; ++c) mask(r, c) = 1;
  }
  const Tensor<float> e = sobel_energy(hv.view(), mask.view());
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_EQ(e[i], mask[i] ? 1.0f : 0.0f);
}

TEST(Energy, EmptyMask) {
  Tensor<float> hv(5, 5, 2, 0.0f);
  hv(2, 2, 0) = 1.0f;
  EXPECT_EQ(sobel_energy(hv.view(), Mask(5, 5, 1, 0).view()), Tensor<float>(5, 5, 1, 0.0f));
}

TEST(Energy, PeaksInsideDisk) {
  const InstanceMap m = disk(9, 3.6);
  const Tensor<float> hv = gen_hv_targets(m.view());
  const Mask mask = gen_np_target(m.view());
  for (int radius = 1; radius <= 3; ++radius) {
    const Tensor<float> e = sobel_energy(hv.view(), mask.view(), radius);
    float best = -1.0f;
    int br = -1, bc = -1;
    float rim = 2.0f;
    for (int r = 0; r < 9; ++r) {
      for (int c = 0; c < 9; ++c) {
        if (!mask(r, c)) continue;
        const bool interior = mask(r - 1, c) && mask(r + 1, c) && mask(r, c - 1) && mask(r, c + 1);
        if (e(r, c) > best) best = e(r, c), br = r, bc = c;
        if (!interior) rim = std::min(rim, e(r, c));
      }
    }
    EXPECT_TRUE(mask(br - 1, bc) && mask(br + 1, bc) && mask(br, bc - 1) && mask(br, bc + 1)) << radius;
    EXPECT_LT(rim, best);
    EXPECT_FLOAT_EQ(best, 1.0f);
  }
}

TEST(Watershed, OneMarkerFloodsComponent) {
  Mask mask(5, 6, 1, 0);
  for (int r = 1; r < 4; ++r) {
    for (int c = 0; c < 5; ++c) mask(r, c) = 1;
  }
  mask(0, 5) = 1;  // separate component, no marker
  InstanceMap markers(5, 6, 1, 0u);
  markers(2, 2) = 4;
  Tensor<float> energy(5, 6, 1, 0.5f);
  const InstanceMap out = watershed(energy.view(), markers.view(), mask.view());
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], mask[i] && i != 5 ? 4u : 0u);
}

TEST(Watershed, RidgeTieRule) {
  const float e[] = {0.9f, 0.8f, 0.1f, 0.05f, 0.1f, 0.8f, 0.9f};
  Tensor<float> energy(Shape{1, 7, 1}, std::vector<float>(e, e + 7));
  InstanceMap markers(1, 7, 1, 0u);
  markers[0] = 1;
  markers[6] = 2;
  const Mask mask(1, 7, 1, 1);
  const InstanceMap out = watershed(energy.view(), markers.view(), mask.view());
  EXPECT_EQ(out, test::make_map({{1, 1, 1, 1, 2, 2, 2}}));
}

TEST(Watershed, EmptyMarkers) {
  const Mask mask(4, 4, 1, 1);
  EXPECT_EQ(watershed(Tensor<float>(4, 4, 1, 1.0f).view(), InstanceMap(4, 4, 1, 0u).view(), mask.view()),
            InstanceMap(4, 4, 1, 0u));
}

TEST(Watershed, MarkerOutsideMask) {
  InstanceMap markers(3, 3, 1, 0u);
  markers(0, 0) = 1;
  try {
    watershed(Tensor<float>(3, 3, 1, 1.0f).view(), markers.view(), Mask(3, 3, 1, 0).view());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMarkerOutsideMask);
  }
}

TEST(Segment, ZeroProbabilities) {
  const InstanceMap out =
      instance_segment(Tensor<float>(16, 16, 1, 0.0f).view(), Tensor<float>(16, 16, 2, 0.0f).view());
  EXPECT_EQ(max_label(out.view()), 0u);
}

TEST(Segment, UniformHvGivesOneInstance) {
  const InstanceMap m = disk(15, 5.5);
  const Tensor<float> np = synth_np_probs(m.view());
  const InstanceMap out = instance_segment(np.view(), Tensor<float>(15, 15, 2, 0.25f).view());
  EXPECT_EQ(out, m);
}

TEST(Segment, TouchingPairSplits) {
  Rng rng(17);
  for (int t = 0; t < 10; ++t) {
    const InstanceMap m = synth_touching_pair(48, 48, rng);
    const InstanceMap out =
        instance_segment(synth_np_probs(m.view()).view(), gen_hv_targets(m.view()).view());
    ASSERT_EQ(max_label(out.view()), 2u) << t;
    const IouTable table = iou_matrix(m.view(), out.view());
    const MatchSet match = match_instances(table);
    ASSERT_EQ(match.pairs.size(), 2u);
    for (const auto& p : match.pairs) EXPECT_GE(p.iou, 0.9);
  }
}

TEST(Segment, SmallBlobsDropped) {
  InstanceMap m(20, 20, 1, 0u);
  test::fill_rect(m, 2, 2, 2, 2, 1);
  test::fill_rect(m, 10, 10, 6, 6, 2);
  const InstanceMap out =
      instance_segment(synth_np_probs(m.view()).view(), gen_hv_targets(m.view()).view());
  EXPECT_EQ(out(2, 2), 0u);
  EXPECT_EQ(out(12, 12), 1u);
  PostprocConfig cfg;
  cfg.min_instance_size = 0;
  cfg.min_marker_size = 0;
  const InstanceMap keep = instance_segment(synth_np_probs(m.view()).view(), gen_hv_targets(m.view()).view(), cfg);
  EXPECT_EQ(keep(2, 2), 1u);
}

TEST(Segment, RejectsMismatchedShapes) {
  try {
    instance_segment(Tensor<float>(8, 8, 1, 0.0f).view(), Tensor<float>(8, 9, 2, 0.0f).view());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("8x8"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("8x9"), std::string::npos) << e.what();
  }
}

TEST(Classify, UniformClass) {
  InstanceMap m(2, 3, 1, 1u);
  Tensor<float> p(2, 3, 4, 0.0f);
  double sum = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const float v = 0.5f + 0.05f * static_cast<float>(i);
    p[i * 4 + 2] = v;
    p[i * 4 + 0] = 1.0f - v;
    sum += v;
  }
  const Classification c = classify_instances(m.view(), p.view());
  EXPECT_EQ(c.classes.at(1), 2);
  EXPECT_NEAR(c.probs.at(1), sum / 6.0, 1e-6);
}

TEST(Classify, MajorityAndTie) {
  InstanceMap m(1, 10, 1, 1u);
  Tensor<float> p(1, 10, 4, 0.0f);
  for (int i = 0; i < 10; ++i) p[i * 4 + (i < 6 ? 1 : 3)] = 0.9f;
  EXPECT_EQ(classify_instances(m.view(), p.view()).classes.at(1), 1);
  for (int i = 0; i < 10; ++i) {
    std::fill(p.pixel(i), p.pixel(i) + 4, 0.0f);
    p[i * 4 + (i < 5 ? 3 : 2)] = 0.9f;
  }
  EXPECT_EQ(classify_instances(m.view(), p.view()).classes.at(1), 2);
}

TEST(Classify, AllBackgroundVotes) {
  InstanceMap m(1, 2, 1, 1u);
  const float v[] = {0.7f, 0.1f, 0.2f, 0.6f, 0.3f, 0.1f};
  Tensor<float> p(Shape{1, 2, 3}, std::vector<float>(v, v + 6));
  const Classification c = classify_instances(m.view(), p.view());
  EXPECT_EQ(c.classes.at(1), 1);
  EXPECT_NEAR(c.probs.at(1), 0.2, 1e-6);
}

TEST(Records, SinglePixel) {
  InstanceMap m(6, 6, 1, 0u);
  m(3, 4) = 1;
  const auto recs = extract_records(m.view(), {{1, 2}}, {{1, 0.5f}});
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].centroid, (std::array<float, 2>{3, 4}));
  EXPECT_EQ(recs[0].bbox, (std::array<int, 4>{3, 4, 3, 4}));
  EXPECT_EQ(recs[0].contour, (std::vector<std::array<int, 2>>{{3, 4}}));
}

TEST(Records, Square) {
  InstanceMap m(4, 8, 1, 0u);
  test::fill_rect(m, 1, 5, 2, 2, 1);
  const auto recs = extract_records(m.view(), {{1, 1}}, {{1, 1.0f}});
  EXPECT_EQ(recs[0].centroid, (std::array<float, 2>{1.5f, 5.5f}));
  EXPECT_EQ(recs[0].contour, (std::vector<std::array<int, 2>>{{1, 5}, {1, 6}, {2, 6}, {2, 5}}));
}

TEST(Records, LShapeContourMatchesBoundary) {
  InstanceMap m(10, 10, 1, 0u);
  test::fill_rect(m, 1, 1, 7, 3, 1);
  test::fill_rect(m, 5, 4, 3, 4, 1);
  const auto contour = trace_contour(m.view(), 1);
  std::set<std::array<int, 2>> boundary;
  for (int r = 0; r < 10; ++r) {
    for (int c = 0; c < 10; ++c) {
      if (!m(r, c)) continue;
      if (r == 0 || c == 0 || r == 9 || c == 9 || !m(r - 1, c) || !m(r + 1, c) || !m(r, c - 1) || !m(r, c + 1))
        boundary.insert({r, c});
    }
  }
  EXPECT_EQ(contour.size(), boundary.size());
  EXPECT_EQ((std::set<std::array<int, 2>>(contour.begin(), contour.end())), boundary);
  EXPECT_EQ(contour.front(), (std::array<int, 2>{1, 1}));
  // Clockwise: the walk leaves the start heading east.
  EXPECT_EQ(contour[1], (std::array<int, 2>{1, 2}));
}

TEST(Records, ContoursAreEightConnected) {
  Rng rng(31);
  const InstanceMap m = synth_ellipses(64, 64, {}, rng);
  ClassTable cls;
  ProbTable prob;
  for (std::uint32_t l = 1; l <= max_label(m.view()); ++l) cls[l] = 1, prob[l] = 1.0f;
  for (const auto& r : extract_records(m.view(), cls, prob)) {
    for (std::size_t i = 0; i < r.contour.size(); ++i) {
      const auto& a = r.contour[i];
      const auto& b = r.contour[(i + 1) % r.contour.size()];
      EXPECT_LE(std::max(std::abs(a[0] - b[0]), std::abs(a[1] - b[1])), 1);
      EXPECT_EQ(m(a[0], a[1]), r.id);
    }
  }
}

TEST(Records, MissingClass) {
  InstanceMap m(3, 3, 1, 0u);
  m(1, 1) = 1;
  EXPECT_THROW(extract_records(m.view(), {}, {}), Error);
}
