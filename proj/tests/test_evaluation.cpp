#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "volxai/errors.hpp"
#include "volxai/evaluation.hpp"

using namespace volxai;
using namespace volxai::eval;

namespace {

double overlap_oracle(const Box3& a, const Box3& b) {
  long long inter = 1, va = 1, vb = 1;
  for (int k = 0; k < 3; ++k) {
    const int lo = std::max(a.min[k], b.min[k]), hi = std::min(a.max[k], b.max[k]);
    inter *= std::max(0, hi - lo);
    va *= a.max[k] - a.min[k];
    vb *= b.max[k] - b.min[k];
  }
  return static_cast<double>(inter) / static_cast<double>(va + vb - inter);
}

// Plain greedy matching from the definition.
MatchResult match_oracle(const std::vector<Detection>& d, const std::vector<Box3>& l, double thr) {
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (d[a].confidence != d[b].confidence) return d[a].confidence > d[b].confidence;
    if (d[a].box.min != d[b].box.min) return d[a].box.min < d[b].box.min;
    return a < b;
  });
  MatchResult r;
  std::vector<bool> used(l.size(), false);
  for (std::size_t i : order) {
    int best = -1;
    double bi = -1;
    for (std::size_t j = 0; j < l.size(); ++j) {
      if (used[j]) continue;
      const double v = overlap_oracle(d[i].box, l[j]);
      if (v >= thr && v > bi) {
        bi = v;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      r.tp.emplace_back(i, static_cast<std::size_t>(best));
    } else {
      r.fp.push_back(i);
    }
  }
  for (std::size_t j = 0; j < l.size(); ++j)
    if (!used[j]) r.fn.push_back(j);
  return r;
}

Box3 random_box(std::mt19937& g) {
  std::uniform_int_distribution<int> p(0, 12), s(1, 5);
  Box3 b;
  for (int k = 0; k < 3; ++k) {
    b.min[k] = p(g);
    b.max[k] = b.min[k] + s(g);
  }
  return b;
}

std::vector<PatientDetections> random_cohort(unsigned seed, int patients) {
  std::mt19937 g(seed);
  std::uniform_int_distribution<int> nd(0, 6), nl(0, 3), q(0, 9);
  std::vector<PatientDetections> c(static_cast<std::size_t>(patients));
  for (int p = 0; p < patients; ++p) {
    auto& pd = c[static_cast<std::size_t>(p)];
    pd.id = "p" + std::to_string(p);
    const int lesions = nl(g);
    for (int k = 0; k < lesions; ++k) pd.lesions.push_back(random_box(g));
    const int dets = nd(g);
    for (int k = 0; k < dets; ++k) {
      Detection d;
      // half the detections sit on a lesion; coarse confidences create ties
      d.box = !pd.lesions.empty() && k % 2 == 0 ? pd.lesions[static_cast<std::size_t>(k) % pd.lesions.size()]
                                                  : random_box(g);
      d.confidence = q(g) / 10.0;
      pd.detections.push_back(d);
    }
  }
  if (c[0].lesions.empty()) c[0].lesions.push_back({{0, 0, 0}, {2, 2, 2}});
  return c;
}

double mann_whitney(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

}  // namespace

TEST(Match, SimpleExamples) {
  const Box3 lesion{{0, 0, 0}, {4, 4, 4}};
  Detection hit{{{1, 0, 0}, {5, 4, 4}}, 0.9, {}, std::nullopt};
  Detection dup = hit;
  dup.confidence = 0.8;
  Detection miss{{{10, 10, 10}, {12, 12, 12}}, 0.95, {}, std::nullopt};
  const auto r = match_detections({hit, dup, miss}, {lesion}, 0.1);
  ASSERT_EQ(r.tp.size(), 1u);
  EXPECT_EQ(r.tp[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(r.fp, (std::vector<std::size_t>{2, 1}));
  EXPECT_TRUE(r.fn.empty());
  const auto none = match_detections({}, {lesion}, 0.1);
  EXPECT_EQ(none.fn, std::vector<std::size_t>{0});
  // IoU exactly at the threshold counts
  Detection edge{{{0, 0, 0}, {4, 4, 4}}, 0.5, {}, std::nullopt};
  const Box3 big{{0, 0, 0}, {4, 4, 40}};
  EXPECT_EQ(match_detections({edge}, {big}, 0.1).tp.size(), 1u);
  EXPECT_EQ(match_detections({edge}, {big}, 0.1000001).tp.size(), 0u);
}

TEST(Match, AgreesWithOracleOnRandomCohorts) {
  std::mt19937 g(1);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Detection> d(static_cast<std::size_t>(g() % 7));
    for (auto& x : d) {
      x.box = random_box(g);
      x.confidence = static_cast<double>(g() % 5) / 4.0;
    }
    std::vector<Box3> l(static_cast<std::size_t>(g() % 5));
    for (auto& b : l) b = random_box(g);
    const auto a = match_detections(d, l, 0.1);
    const auto b = match_oracle(d, l, 0.1);
    EXPECT_EQ(a.tp, b.tp);
    EXPECT_EQ(a.fp, b.fp);
    EXPECT_EQ(a.fn, b.fn);
    EXPECT_EQ(a.tp.size() + a.fp.size(), d.size());
    EXPECT_EQ(a.tp.size() + a.fn.size(), l.size());
  }
}

TEST(Froc, ExhaustiveThresholdSweep) {
  for (unsigned seed = 0; seed < 20; ++seed) {
    const auto cohort = random_cohort(seed, 5);
    const auto c = froc(cohort, 0.1);
    long long lesions = 0;
    for (const auto& p : cohort) lesions += static_cast<long long>(p.lesions.size());
    EXPECT_EQ(c.lesions, lesions);
    EXPECT_EQ(c.patients, 5u);
    std::vector<double> ts;
    for (const auto& p : cohort)
      for (const auto& d : p.detections) ts.push_back(d.confidence);
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
    ASSERT_EQ(c.points.size(), ts.size());
    for (std::size_t k = 0; k < ts.size(); ++k) {
      long long tp = 0, fp = 0;
      for (const auto& p : cohort) {
        std::vector<Detection> kept;
        for (const auto& d : p.detections)
          if (d.confidence >= ts[k]) kept.push_back(d);
        const auto m = match_oracle(kept, p.lesions, 0.1);
        tp += static_cast<long long>(m.tp.size());
        fp += static_cast<long long>(m.fp.size());
      }
      EXPECT_EQ(c.points[k].threshold, ts[k]);
      EXPECT_EQ(c.points[k].tp, tp);
      EXPECT_EQ(c.points[k].fp, fp);
      EXPECT_DOUBLE_EQ(c.points[k].sensitivity, static_cast<double>(tp) / lesions);
      EXPECT_DOUBLE_EQ(c.points[k].fp_per_patient, fp / 5.0);
      if (k > 0) {
        EXPECT_LE(c.points[k].sensitivity, c.points[k - 1].sensitivity);
        EXPECT_LE(c.points[k].fp, c.points[k - 1].fp);
      }
    }
  }
}

TEST(Froc, SensitivityAtFpAndErrors) {
  FrocCurve c;
  c.points = {{0.1, 1.0, 3.0, 4, 12}, {0.5, 0.75, 1.0, 3, 4}, {0.9, 0.25, 0.0, 1, 0}};
  EXPECT_EQ(sensitivity_at_fp(c, 3.0), 1.0);
  EXPECT_EQ(sensitivity_at_fp(c, 2.0), 0.75);
  EXPECT_EQ(sensitivity_at_fp(c, 0.0), 0.25);
  FrocCurve empty;
  EXPECT_EQ(sensitivity_at_fp(empty, 1.0), 0.0);
  std::vector<PatientDetections> none(2);
  EXPECT_THROW(froc(none, 0.1), NumericalError);
}

TEST(Roc, MatchesMannWhitney) {
  std::mt19937 g(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 5 + g() % 40;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(g() % 2);
      s[i] = static_cast<double>(g() % 8) + 0.5 * y[i];
    }
    y[0] = 0;
    y[1] = 1;
    const auto r = roc_auc(s, y);
    EXPECT_NEAR(r.auc, mann_whitney(s, y), 1e-12);
    EXPECT_EQ(r.points.front().fpr, 0.0);
    EXPECT_EQ(r.points.front().tpr, 0.0);
    EXPECT_TRUE(std::isinf(r.points.front().threshold));
    EXPECT_EQ(r.points.back().fpr, 1.0);
    EXPECT_EQ(r.points.back().tpr, 1.0);
    for (std::size_t k = 1; k < r.points.size(); ++k) {
      EXPECT_GE(r.points[k].fpr, r.points[k - 1].fpr);
      EXPECT_GE(r.points[k].tpr, r.points[k - 1].tpr);
    }
    // strictly increasing transforms leave the curve unchanged
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(0.3 * s[i]) - 7.0;
    const auto rt = roc_auc(t, y);
    EXPECT_NEAR(rt.auc, r.auc, 1e-12);
    ASSERT_EQ(rt.points.size(), r.points.size());
    for (std::size_t k = 0; k < r.points.size(); ++k) {
      EXPECT_EQ(rt.points[k].fpr, r.points[k].fpr);
      EXPECT_EQ(rt.points[k].tpr, r.points[k].tpr);
    }
  }
}

TEST(Roc, Examples) {
  EXPECT_EQ(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}).auc, 1.0);
  EXPECT_EQ(roc_auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}).auc, 0.0);
  EXPECT_EQ(roc_auc({0.5, 0.5}, {0, 1}).auc, 0.5);
  EXPECT_THROW(roc_auc({0.1, 0.2}, {1, 1}), InvalidArgument);
  EXPECT_THROW(roc_auc({0.1, 0.2}, {1, 2}), InvalidArgument);
  EXPECT_THROW(roc_auc({0.1}, {1, 0}), InvalidArgument);
}

TEST(FpReduction, CountExample) {
  const auto r = fp_reduction_report(48, 32, true, 18);
  EXPECT_EQ(r.removed, 16);
  EXPECT_NEAR(r.percent, 100.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.fp_per_patient_after, 32.0 / 18.0, 1e-15);
  EXPECT_EQ(std::round(r.fp_per_patient_after * 100) / 100, 1.78);
  EXPECT_TRUE(r.tp_preserved);
  const auto z = fp_reduction_report(0, 0, true, 3);
  EXPECT_EQ(z.percent, 0.0);
  EXPECT_THROW(fp_reduction_report(3, 4, true, 3), InvalidArgument);
  EXPECT_THROW(fp_reduction_report(3, 1, true, 0), InvalidArgument);
  const auto j = to_json(r);
  EXPECT_EQ(j.at("removed"), 16);
}

TEST(FpReduction, FromMatchResults) {
  MatchResult a, b;
  a.tp = {{0, 0}, {1, 1}};
  a.fp = {2, 3, 4};
  b.tp = {{0, 0}, {1, 1}};
  b.fp = {4};
  MatchResult c, d;
  c.tp = {{0, 0}};
  c.fp = {1};
  d.tp = {};
  d.fp = {};
  d.fn = {0};
  const auto ok = fp_reduction_report({a}, {b});
  EXPECT_EQ(ok.fp_before, 3);
  EXPECT_EQ(ok.fp_after, 1);
  EXPECT_TRUE(ok.tp_preserved);
  EXPECT_EQ(ok.tp_before, 2);
  EXPECT_EQ(ok.tp_after, 2);
  const auto lost = fp_reduction_report({a, c}, {b, d});
  EXPECT_FALSE(lost.tp_preserved);
  EXPECT_EQ(lost.patients, 2u);
  EXPECT_EQ(lost.fp_before, 4);
  EXPECT_EQ(lost.removed, 3);
  EXPECT_THROW(fp_reduction_report({a}, {b, d}), InvalidArgument);
}

TEST(DetectionJson, RoundTrip) {
  Detection d{{{1, 2, 3}, {4, 5, 6}}, 0.375, {2, 3, 4}, 0.625};
  const auto r = detection_from_json(to_json(d));
  EXPECT_EQ(r.box, d.box);
  EXPECT_EQ(r.confidence, d.confidence);
  EXPECT_EQ(r.patch_center, d.patch_center);
  EXPECT_EQ(r.stage2_posterior, d.stage2_posterior);
  d.stage2_posterior.reset();
  EXPECT_FALSE(detection_from_json(to_json(d)).stage2_posterior);
}
