#include <gtest/gtest.h>

#include "dclose/drise.hpp"
#include "dclose/metrics.hpp"
#include "dclose/saliency.hpp"
#include "dclose/synthetic.hpp"

using namespace dclose;

namespace {

DetectionVector det_at(BBox b, double obj, std::vector<double> scores) { return {b, obj, std::move(scores)}; }

ExplainConfig small_config() {
  ExplainConfig c;
  c.segments_per_level = {40, 80, 160};
  c.masks_per_level = 150;
  return c;
}

}  // namespace

TEST(Similarity, Examples) {
  const auto t = det_at({0, 0, 10, 10}, 1.0, {0.2, 0.8});
  EXPECT_NEAR(similarity(t, {t, {}}), 1.0, 1e-12);
  EXPECT_EQ(similarity(det_at({20, 20, 30, 30}, 1.0, {0.2, 0.8}), {t, {}}), 0.0);
  const auto p = det_at({0, 0, 10, 5}, 0.8, {1, 1});
  const TargetSpec tt{det_at({0, 0, 10, 10}, 1.0, {1, 0}), {}};
  EXPECT_NEAR(similarity(p, tt), 0.2828, 1e-4);
  EXPECT_THROW(similarity(det_at({0, 0, 1, 1}, 1, {1, 0, 0}), tt), InvalidInput);
}

TEST(MaskWeight, Examples) {
  const auto t = det_at({0, 0, 10, 10}, 1.0, {0.0, 1.0});
  const TargetSpec target{t, {}};
  EXPECT_EQ(mask_weight({}, target), 0.0);
  EXPECT_NEAR(mask_weight({t}, target), 1.0, 1e-12);
  const ProposalSet two{det_at({0, 0, 10, 10}, 0.3, {0, 1}), det_at({0, 0, 10, 10}, 0.9, {0, 1})};
  EXPECT_NEAR(mask_weight(two, target), 0.9, 1e-12);
}

TEST(MaskWeight, ScoreFloorDropsWeakProposals) {
  const TargetSpec target{det_at({0, 0, 10, 10}, 1.0, {0.0, 1.0}), {}};
  const ProposalSet weak{det_at({0, 0, 10, 10}, 0.2, {0, 0.2})};
  EXPECT_NEAR(mask_weight(weak, target, 0.0), 0.2, 1e-12);
  EXPECT_EQ(mask_weight(weak, target, 0.05), 0.0);
}

TEST(Accumulate, Examples) {
  LevelAccumulator acc(2, 1);
  acc = accumulate(acc, MaskGrid(2, 1, std::vector<float>{1, 0}), 0.5);
  acc = accumulate(acc, MaskGrid(2, 1, std::vector<float>{1, 1}), 1.0);
  EXPECT_EQ(acc.weighted_sum, (std::vector<double>{1.5, 1.0}));
  EXPECT_EQ(acc.density, (std::vector<double>{2, 1}));
  EXPECT_EQ(acc.count, 2u);
  EXPECT_EQ(finalize_level(acc, true).values, (std::vector<float>{0.75f, 1.0f}));
  EXPECT_EQ(finalize_level(acc, false).values, (std::vector<float>{0.75f, 0.5f}));
}

TEST(Accumulate, ConstantMasksAndZeroWeight) {
  LevelAccumulator acc(3, 2);
  for (int i = 0; i < 7; ++i) acc = accumulate(acc, MaskGrid(3, 2, 1.0f), 0.1 * i);
  for (double d : acc.density) EXPECT_EQ(d, 7.0);
  const auto before = acc.weighted_sum;
  acc = accumulate(acc, MaskGrid(3, 2, 0.5f), 0.0);
  EXPECT_EQ(acc.weighted_sum, before);
  for (double d : acc.density) EXPECT_EQ(d, 7.5);
}

TEST(Accumulate, Errors) {
  LevelAccumulator acc(2, 2);
  EXPECT_THROW(accumulate(acc, MaskGrid(3, 2, 1.0f), 0.5), InvalidInput);
  EXPECT_THROW(accumulate(acc, MaskGrid(2, 2, 1.0f), 1.5), InvalidInput);
  EXPECT_THROW(finalize_level(acc, true), InvalidInput);
}

TEST(Accumulate, MergeEqualsSequential) {
  CounterRng rng(5);
  LevelAccumulator all(4, 4), a(4, 4), b(4, 4);
  for (int i = 0; i < 20; ++i) {
    MaskGrid m(4, 4);
    for (float& v : m.values) v = static_cast<float>(rng.uniform());
    const double w = rng.uniform();
    all.add(m.values, w);
    (i % 2 ? a : b).add(m.values, w);
  }
  a.merge(b);
  EXPECT_EQ(a.count, all.count);
  for (std::size_t i = 0; i < all.density.size(); ++i) {
    EXPECT_NEAR(a.density[i], all.density[i], 1e-12);
    EXPECT_NEAR(a.weighted_sum[i], all.weighted_sum[i], 1e-12);
  }
}

TEST(Finalize, DensityRemovesMaskBias) {
  // Constant weight over a heavily skewed mask distribution.
  CounterRng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    LevelAccumulator acc(6, 5);
    const double c = rng.uniform();
    for (int i = 0; i < 40; ++i) {
      MaskGrid m(6, 5);
      for (std::size_t k = 0; k < m.values.size(); ++k)
        m.values[k] = rng.uniform() < (k % 5) / 5.0 ? static_cast<float>(rng.uniform()) : 0.0f;
      acc = accumulate(acc, m, c);
    }
    const auto s = finalize_level(acc, true);
    for (std::size_t k = 0; k < s.values.size(); ++k) {
      if (acc.density[k] > 0) EXPECT_NEAR(s.values[k], c, 1e-6);
      else EXPECT_EQ(s.values[k], 0.0f);
    }
  }
}

TEST(Fuse, RegressionVectors) {
  const SaliencyMap s1(2, 1, {1, 0}), s2(2, 1, {1, 1}), s3(2, 1, {0, 1});
  EXPECT_EQ(fuse(std::vector{s1}).values, (std::vector<float>{1, 0}));
  EXPECT_EQ(fuse(std::vector{SaliencyMap(2, 1, {4, 2})}).values, (std::vector<float>{1, 0}));

  FusionStack two{{s1, s2}, {}};
  EXPECT_EQ(fuse(two).values, (std::vector<float>{1, 0}));
  ASSERT_EQ(two.intermediates.size(), 1u);
  EXPECT_EQ(two.intermediates[0].values, (std::vector<float>{2, 1}));

  FusionStack three{{s1, s2, s3}, {}};
  EXPECT_EQ(fuse(three).values, (std::vector<float>{0, 1}));
  ASSERT_EQ(three.intermediates.size(), 2u);
  EXPECT_EQ(three.intermediates[0].values, (std::vector<float>{2, 1}));
  EXPECT_EQ(three.intermediates[1].values, (std::vector<float>{0, 2}));
}

TEST(Fuse, Errors) {
  EXPECT_THROW(fuse(std::vector<SaliencyMap>{}), InvalidInput);
  EXPECT_THROW(fuse(std::vector{SaliencyMap(2, 1), SaliencyMap(1, 2)}), InvalidInput);
}

TEST(Compose, OrderAndAblation) {
  std::vector<LevelResult> levels;
  const std::vector<std::vector<float>> maps{{1, 0}, {1, 1}, {0, 1}};
  for (int k = 0; k < 3; ++k) {
    LevelResult l{100 * (k + 1), 100 * (k + 1), LevelAccumulator(2, 1)};
    l.accumulator.add(std::vector<float>{1, 1}, 0.0);
    l.accumulator.weighted_sum = {maps[k][0] * 0.5, maps[k][1] * 0.5};
    levels.push_back(l);
  }
  ExplainConfig c;
  c.normalize_levels = false;
  c.fusion_order = FusionOrder::CoarseToFine;  // 100, 200, 300 -> S1, S2, S3 as listed
  FusionStack st;
  compose_saliency(levels, c, &st);
  EXPECT_EQ(st.levels[0].values, (std::vector<float>{0.5f, 0}));
  c.fusion_order = FusionOrder::FineToCoarse;
  compose_saliency(levels, c, &st);
  EXPECT_EQ(st.levels[0].values, (std::vector<float>{0, 0.5f}));
  c.ablation.use_fusion = false;
  // mean of {1,0},{1,1},{0,1} halves = {1/3, 1/3}: constant -> zeros
  EXPECT_EQ(compose_saliency(levels, c).values, (std::vector<float>{0, 0}));
}

TEST(Explain, OrthogonalTargetGivesZeroMap) {
  const auto bc = make_blob_case(48, 48, 12, 1, 4);
  // pure class-1 detector, class-0 target: every cosine factor is 0
  BlobSpec spec = bc.detector_spec();
  spec.class_profile = {0.0, 1.0, 0.0};
  auto det = make_blob_detector(spec);
  const TargetSpec t{det_at(bc.box, 1.0, {1.0, 0.0, 0.0}), {}};
  const auto r = explain_detailed(bc.image, *det, t, small_config());
  for (float v : r.saliency.values) EXPECT_EQ(v, 0.0f);
  for (float v : drise_explain(bc.image, *det, t, GridMaskConfig{16, 16, 0.5, 200, 0}).values) EXPECT_EQ(v, 0.0f);
}

TEST(Explain, BlobEnergyInsideEvidence) {
  const auto bc = make_blob_case(96, 96, 20, 1, 21);
  auto det = make_blob_detector(bc.detector_spec());
  const auto target = clean_target(*det, bc.image);
  const auto r = explain_detailed(bc.image, *det, target, ExplainConfig{});
  EXPECT_GE(ebpg(r.saliency, bc.box), 60.0);
  EXPECT_EQ(r.detector_calls, 4000u);
  EXPECT_EQ(r.levels.size(), 5u);
  EXPECT_TRUE(r.saliency.normalized);
  EXPECT_FLOAT_EQ(r.saliency.max_value(), 1.0f);
}

TEST(Explain, DeterministicAcrossJobCounts) {
  const auto bc = make_blob_case(64, 64, 14, 1, 2);
  auto det = make_blob_detector(bc.detector_spec());
  const auto target = clean_target(*det, bc.image);
  auto cfg = small_config();
  const auto a = explain(bc.image, *det, target, cfg);
  cfg.jobs = 3;
  cfg.batch_size = 7;
  EXPECT_EQ(explain(bc.image, *det, target, cfg).values, a.values);
}

TEST(Explain, CallsAndProgress) {
  const auto bc = make_blob_case(64, 64, 14, 1, 2);
  auto counted = std::make_shared<CountingDetector>(make_blob_detector(bc.detector_spec()));
  const auto target = clean_target(*counted, bc.image);
  std::vector<LevelProgress> seen;
  const auto cfg = small_config();
  const auto r = explain_detailed(bc.image, *counted, target, cfg, [&](const LevelProgress& p) { seen.push_back(p); });
  EXPECT_EQ(r.detector_calls, planned_detector_calls(cfg));
  EXPECT_EQ(counted->calls(), 1 + planned_detector_calls(cfg));
  ASSERT_EQ(seen.size(), 3u);
  EXPECT_EQ(seen.back().detector_calls, 450u);
}

TEST(Explain, TargetClassLengthChecked) {
  const auto bc = make_blob_case(32, 32, 8, 0, 2);
  auto det = make_blob_detector(bc.detector_spec());
  const TargetSpec bad{det_at(bc.box, 1.0, {1.0, 0.0}), {}};
  EXPECT_THROW(explain(bc.image, *det, bad, small_config()), InvalidInput);
}

TEST(Drise, CallCountAndNormalization) {
  const auto bc = make_blob_case(48, 48, 12, 1, 8);
  auto det = make_blob_detector(bc.detector_spec());
  const auto target = clean_target(*det, bc.image);
  GridMaskConfig g;
  g.n = 300;
  const auto r = drise_explain_detailed(bc.image, *det, target, g);
  EXPECT_EQ(r.detector_calls, 300u);
  EXPECT_FLOAT_EQ(r.saliency.max_value(), 1.0f);
  EXPECT_FLOAT_EQ(r.saliency.min_value(), 0.0f);
}
