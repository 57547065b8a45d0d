#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "volxai/errors.hpp"
#include "volxai/phantom.hpp"
#include "volxai/pipeline.hpp"

using namespace volxai;
using namespace volxai::pipeline;

namespace {

Detection det(Box3 b, double conf, std::optional<double> post = std::nullopt) {
  Detection d;
  d.box = b;
  d.confidence = conf;
  d.stage2_posterior = post;
  return d;
}

Box3 cube(int x, int y, int z, int s) { return {{x, y, z}, {x + s, y + s, z + s}}; }

// Logit that peaks (at 8) on every blob center and falls off with distance.
std::function<double(const Index3&)> ideal_scorer(const std::vector<phantom::Blob>& blobs) {
  return [blobs](const Index3& p) {
    double best = 1e9;
    for (const auto& b : blobs) {
      double d2 = 0;
      for (int k = 0; k < 3; ++k) d2 += double(p[k] - b.center[k]) * (p[k] - b.center[k]);
      best = std::min(best, std::sqrt(d2));
    }
    return 8.0 - 2.0 * best;
  };
}

}  // namespace

TEST(Grid, Positions) {
  EXPECT_EQ(grid_positions(10, 3), (std::vector<int>{1, 4, 7}));
  EXPECT_EQ(grid_positions(40, 3).size(), 13u);
  EXPECT_EQ(grid_positions(40, 3).back(), 37);
  EXPECT_EQ(grid_positions(5, 1), (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_EQ(grid_positions(1, 4), (std::vector<int>{0}));
}

TEST(Nms, Examples) {
  const auto kept = nms({det(cube(0, 0, 0, 4), 0.5), det(cube(1, 0, 0, 4), 0.9), det(cube(10, 0, 0, 4), 0.1)}, 0.25);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].confidence, 0.9);
  EXPECT_EQ(kept[1].confidence, 0.1);
  // IoU 3/5 = 0.6 with a (1,0,0) shift of a 4-cube; a (3,0,0) shift gives 1/7 < 0.25
  EXPECT_EQ(nms({det(cube(0, 0, 0, 4), 0.5), det(cube(3, 0, 0, 4), 0.4)}, 0.25).size(), 2u);
  // equal confidence: lexicographically smaller min corner wins
  const auto tie = nms({det(cube(1, 0, 0, 4), 0.5), det(cube(0, 0, 0, 4), 0.5)}, 0.25);
  ASSERT_EQ(tie.size(), 1u);
  EXPECT_EQ(tie[0].box.min, (Index3{0, 0, 0}));
  EXPECT_TRUE(nms({}, 0.25).empty());
}

TEST(Nms, PropertiesOnRandomSets) {
  std::mt19937 g(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> d(g() % 12);
    for (auto& x : d) x = det(cube(int(g() % 10), int(g() % 10), int(g() % 3), 3 + int(g() % 3)), (g() % 20) / 20.0);
    const auto kept = nms(d, 0.25);
    // no kept pair overlaps at the threshold
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j) EXPECT_LT(iou(kept[i].box, kept[j].box), 0.25);
    // kept in non-increasing confidence
    for (std::size_t i = 1; i < kept.size(); ++i) EXPECT_GE(kept[i - 1].confidence, kept[i].confidence);
    // every dropped box is covered by a kept box that is at least as confident
    for (const auto& x : d) {
      const bool in = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
        return k.box == x.box && k.confidence == x.confidence;
      });
      if (in) continue;
      EXPECT_TRUE(std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
        return k.confidence >= x.confidence && iou(k.box, x.box) >= 0.25;
      }));
    }
    // idempotent
    EXPECT_EQ(nms(kept, 0.25).size(), kept.size());
  }
}

TEST(Detect, IdealScorerFindsEveryBlobCenter) {
  phantom::PhantomSpec spec;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto pc = phantom::generate_case(spec, seed, "c");
    auto blobs = pc.lesions;
    blobs.insert(blobs.end(), pc.distractors.begin(), pc.distractors.end());
    DetectorConfig cfg;
    const auto dets = detect_with_scorer(pc.data, 12, cfg, ideal_scorer(blobs));
    ASSERT_EQ(dets.size(), blobs.size()) << seed;
    for (const auto& b : blobs) {
      const bool hit = std::any_of(dets.begin(), dets.end(), [&](const Detection& d) { return d.patch_center == b.center; });
      EXPECT_TRUE(hit) << "seed " << seed;
    }
    for (const auto& d : dets) {
      EXPECT_NEAR(d.confidence, nn::sigmoid(8.0), 1e-12);
      EXPECT_EQ(d.box, clip_box(centered_box(d.patch_center, 12), pc.data.pet.dims()));
    }
    const auto m = eval::match_detections(dets, lesion_boxes(pc.data), 0.1);
    EXPECT_EQ(m.tp.size(), pc.lesions.size());
    EXPECT_EQ(m.fp.size(), pc.distractors.size());
  }
}

TEST(Detect, ThresholdAndRefinement) {
  phantom::PhantomSpec spec;
  const auto pc = phantom::generate_case(spec, 9, "c");
  DetectorConfig cfg;
  cfg.score_threshold = 0.999999;  // above sigmoid(8)
  EXPECT_TRUE(detect_with_scorer(pc.data, 12, cfg, ideal_scorer(pc.lesions)).empty());
  cfg = {};
  cfg.refine = false;
  for (const auto& d : detect_with_scorer(pc.data, 12, cfg, ideal_scorer(pc.lesions)))
    for (int k = 0; k < 3; ++k) EXPECT_EQ(d.patch_center[k] % 3, 1);  // grid positions only
  cfg.stride = 0;
  EXPECT_THROW(detect_with_scorer(pc.data, 12, cfg, ideal_scorer(pc.lesions)), InvalidArgument);
}

TEST(OperatingPoint, LargestThresholdReachingTarget) {
  const Box3 l1 = cube(0, 0, 0, 4), l2 = cube(20, 20, 20, 4);
  std::vector<eval::PatientDetections> cohort(2);
  cohort[0].lesions = {l1};
  cohort[0].detections = {det(l1, 0.9, 0.2), det(cube(10, 10, 10, 4), 0.8, 0.1)};
  cohort[1].lesions = {l2, cube(30, 0, 0, 4)};
  cohort[1].detections = {det(l2, 0.6, 0.7), det(cube(0, 30, 0, 4), 0.95, 0.9)};
  const auto op = threshold_at_sensitivity(cohort, 0.1, 2.0 / 3.0, Stage::Detector);
  EXPECT_TRUE(op.reachable);
  EXPECT_EQ(op.threshold, 0.6);
  EXPECT_EQ(op.tp, 2);
  EXPECT_EQ(op.fp, 2);
  EXPECT_DOUBLE_EQ(op.sensitivity, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(op.fp_per_patient, 1.0);
  const auto op1 = threshold_at_sensitivity(cohort, 0.1, 0.3, Stage::Detector);
  EXPECT_EQ(op1.threshold, 0.9);
  EXPECT_EQ(op1.fp, 1);
  const auto post = threshold_at_sensitivity(cohort, 0.1, 2.0 / 3.0, Stage::Classifier);
  EXPECT_EQ(post.threshold, 0.2);
  const auto never = threshold_at_sensitivity(cohort, 0.1, 1.0, Stage::Detector);
  EXPECT_FALSE(never.reachable);
  EXPECT_EQ(never.threshold, 0.6);
  const auto kept = apply_operating_point(cohort[1].detections, op1);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].confidence, 0.95);
  std::vector<eval::PatientDetections> empty(1);
  EXPECT_THROW(threshold_at_sensitivity(empty, 0.1, 0.8, Stage::Detector), NumericalError);
  const auto back = operating_point_from_json(to_json(op));
  EXPECT_EQ(back.threshold, op.threshold);
  EXPECT_EQ(back.stage, op.stage);
  EXPECT_EQ(back.tp, op.tp);
}

TEST(StageScore, RequiresPosterior) {
  EXPECT_EQ(stage_score(det(cube(0, 0, 0, 1), 0.3, 0.6), Stage::Classifier), 0.6);
  EXPECT_EQ(stage_score(det(cube(0, 0, 0, 1), 0.3), Stage::Detector), 0.3);
  EXPECT_THROW(stage_score(det(cube(0, 0, 0, 1), 0.3), Stage::Classifier), InvalidArgument);
  EXPECT_EQ(stage_from_string("classifier"), Stage::Classifier);
  EXPECT_THROW(stage_from_string("both"), ConfigError);
}

TEST(Samples, DetectorSamplesCountsAndClearance) {
  phantom::PhantomSpec spec;
  const auto split = phantom::generate_dataset(spec, 3, 0, 4);
  SampleConfig cfg;
  cfg.positives_per_lesion = 3;
  cfg.negatives_per_case = 5;
  const auto s = detector_samples(split.train, 12, cfg, 17);
  std::size_t lesions = 0;
  for (const auto& c : split.train) lesions += c.annotations.size();
  ASSERT_EQ(s.size(), 3 * lesions + 15);
  std::size_t pos = 0, k = 0;
  for (const auto& c : split.train) {
    for (const auto& a : c.annotations)
      for (int r = 0; r < 3; ++r, ++k) {
        ASSERT_EQ(s[k].label, 1);
        ++pos;
        for (int ax = 0; ax < 3; ++ax) EXPECT_LE(std::abs(s[k].patch.center[ax] - a.center[ax]), 1);
        if (r == 0) EXPECT_EQ(s[k].patch.center, a.center);
      }
    for (int r = 0; r < 5; ++r, ++k) {
      ASSERT_EQ(s[k].label, 0);
      EXPECT_EQ(s[k].patch.size, 12);
      for (const auto& a : c.annotations) {
        double d2 = 0;
        for (int ax = 0; ax < 3; ++ax) d2 += double(s[k].patch.center[ax] - a.center[ax]) * (s[k].patch.center[ax] - a.center[ax]);
        EXPECT_GE(d2, 36.0);
      }
    }
  }
  EXPECT_EQ(pos, 3 * lesions);
  const auto again = detector_samples(split.train, 12, cfg, 17);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(again[i].patch.center, s[i].patch.center);
}

TEST(Samples, ClassifierSamplesUseMatchLabels) {
  phantom::PhantomSpec spec;
  const auto pc = phantom::generate_case(spec, 3, "c");
  auto blobs = pc.lesions;
  blobs.insert(blobs.end(), pc.distractors.begin(), pc.distractors.end());
  const auto dets = detect_with_scorer(pc.data, 12, {}, ideal_scorer(blobs));
  const auto labels = match_labels(dets, lesion_boxes(pc.data), 0.1);
  const auto s = classifier_samples({pc.data}, {dets}, 16, {});
  ASSERT_EQ(s.size(), dets.size() + pc.data.annotations.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    EXPECT_EQ(s[i].label, labels[i]);
    EXPECT_EQ(s[i].patch.center, dets[i].patch_center);
  }
  for (std::size_t i = dets.size(); i < s.size(); ++i) EXPECT_EQ(s[i].label, 1);
  EXPECT_EQ(std::count(labels.begin(), labels.end(), 1), static_cast<long>(pc.lesions.size()));
  EXPECT_THROW(classifier_samples({pc.data}, {}, 16, {}), InvalidArgument);
}

TEST(Configs, JsonRoundTripAndValidation) {
  DetectorConfig d;
  d.stride = 4;
  d.nms_iou = 0.3;
  EXPECT_EQ(to_json(detector_config_from_json(to_json(d))), to_json(d));
  SampleConfig s;
  s.negatives_per_case = 9;
  EXPECT_EQ(to_json(sample_config_from_json(to_json(s))), to_json(s));
  s.candidate_iou = 0;
  EXPECT_THROW(s.validate(), InvalidArgument);
  d.nms_iou = 1.5;
  EXPECT_THROW(d.validate(), InvalidArgument);
}
